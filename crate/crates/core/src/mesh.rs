//! Structured triangulations of the unit square.
//!
//! The square is cut into `n x n` cells and every cell is split along the
//! diagonal from its lower-left to its upper-right corner. All coordinates are
//! `k / n`, so for dyadic `n` the vertex set of `build_mesh(n)` is contained
//! bit-for-bit in that of `build_mesh(2 n)`, and every fine triangle lies
//! inside exactly one coarse triangle.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// An edge with its (one or two) adjacent triangles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub triangles: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.triangles[1].is_none()
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    n: usize,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    /// Local edges of each triangle in the order (v0,v1), (v1,v2), (v2,v0).
    triangle_edges: Vec<[usize; 3]>,
    boundary_vertex: Vec<bool>,
    h: f64,
}

/// Builds the diagonal-split triangulation with `n` cells per side.
pub fn build_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::invalid("mesh needs at least one subdivision per side"));
    }
    let np = n + 1;
    let nf = n as f64;
    let mut vertices = Vec::with_capacity(np * np);
    let mut boundary_vertex = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            let (x, y) = (i as f64 / nf, j as f64 / nf);
            vertices.push([x, y]);
            boundary_vertex.push(x == 0.0 || x == 1.0 || y == 0.0 || y == 1.0);
        }
    }

    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = j * np + i;
            let v10 = v00 + 1;
            let v01 = v00 + np;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let mut edge_ids: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            edge_ids.entry((a.min(b), a.max(b))).or_default().push(t);
        }
    }
    let mut index_of = BTreeMap::new();
    let mut edges = Vec::with_capacity(edge_ids.len());
    for (idx, ((a, b), adj)) in edge_ids.into_iter().enumerate() {
        index_of.insert((a, b), idx);
        edges.push(Edge {
            vertices: [a, b],
            triangles: [Some(adj[0]), adj.get(1).copied()],
        });
    }
    let triangle_edges = triangles
        .iter()
        .map(|tri| {
            let mut out = [0; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                out[k] = index_of[&(a.min(b), a.max(b))];
            }
            out
        })
        .collect();

    let h = edges
        .iter()
        .map(|e| {
            let [p, q] = [vertices[e.vertices[0]], vertices[e.vertices[1]]];
            (p[0] - q[0]).hypot(p[1] - q[1])
        })
        .fold(0.0, f64::max);

    Ok(Mesh {
        n,
        vertices,
        triangles,
        edges,
        triangle_edges,
        boundary_vertex,
        h,
    })
}

/// Uniform refinement: the mesh with twice as many cells per side.
pub fn refine(mesh: &Mesh) -> Mesh {
    build_mesh(2 * mesh.n).expect("n >= 1 is preserved by refinement")
}

impl Mesh {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn boundary_vertex_flags(&self) -> &[bool] {
        &self.boundary_vertex
    }

    pub fn boundary_edge_flags(&self) -> Vec<bool> {
        self.edges.iter().map(Edge::is_boundary).collect()
    }

    /// Length of the longest edge.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area (positive for counterclockwise orientation).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_coords(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn edge_midpoint(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e].vertices;
        let (p, q) = (self.vertices[a], self.vertices[b]);
        [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
    }

    /// Index of a triangle containing `p`. Points on shared edges resolve to
    /// one of the neighbours; points outside the square are clamped.
    pub fn locate(&self, p: [f64; 2]) -> usize {
        let nf = self.n as f64;
        let i = ((p[0] * nf).floor().max(0.0) as usize).min(self.n - 1);
        let j = ((p[1] * nf).floor().max(0.0) as usize).min(self.n - 1);
        let dx = p[0] * nf - i as f64;
        let dy = p[1] * nf - j as f64;
        let cell = j * self.n + i;
        if dx >= dy {
            2 * cell
        } else {
            2 * cell + 1
        }
    }

    /// Plain-text dump: a `#` header followed by one line per vertex (`v`),
    /// triangle (`t`) and edge (`e`). Missing neighbours are written as `-1`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# snsfem mesh v1");
        let _ = writeln!(out, "# v <index> <x> <y> <boundary>");
        let _ = writeln!(out, "# t <index> <v0> <v1> <v2>");
        let _ = writeln!(out, "# e <index> <v0> <v1> <t0> <t1> <boundary>");
        let _ = writeln!(
            out,
            "# n {} vertices {} triangles {} edges {} h {:.17e}",
            self.n,
            self.num_vertices(),
            self.num_triangles(),
            self.num_edges(),
            self.h
        );
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(
                out,
                "v {i} {:.17e} {:.17e} {}",
                v[0], v[1], self.boundary_vertex[i] as u8
            );
        }
        for (i, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(out, "t {i} {} {} {}", t[0], t[1], t[2]);
        }
        for (i, e) in self.edges.iter().enumerate() {
            let t1 = e.triangles[1].map_or(-1, |t| t as i64);
            let _ = writeln!(
                out,
                "e {i} {} {} {} {t1} {}",
                e.vertices[0],
                e.vertices[1],
                e.triangles[0].unwrap_or(0),
                e.is_boundary() as u8
            );
        }
        out
    }
}
