//! Mixed finite element spaces on a [`Mesh`]: continuous P2 velocities with
//! homogeneous Dirichlet data and continuous P1 (or, as an unstable
//! comparison pair, P2) pressures.
//!
//! Velocity coefficient vectors interleave components: entry `2 s + c` is
//! component `c` of scalar degree of freedom `s`. Boundary nodes carry no
//! degrees of freedom. Every pressure node carries one.
//!
//! All bilinear and trilinear forms are integrated with the 12-point degree-6
//! rule, which is exact for the polynomial integrands involved (the
//! convection integrand `P2 . grad P2 . P2` has degree 5).

use faer::{Mat, Side};

use crate::element::{lagrange_gradients, lagrange_values, p2_gradients, p2_values, Geometry};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::TriangleRule;
use crate::sparse::{CsrMatrix, LuFactor, LuPattern};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Velocity,
    Pressure,
}

/// Coefficients of a finite element function.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteField {
    pub kind: FieldKind,
    pub coeffs: Vec<f64>,
}

impl DiscreteField {
    pub fn velocity(coeffs: Vec<f64>) -> Self {
        DiscreteField {
            kind: FieldKind::Velocity,
            coeffs,
        }
    }

    pub fn pressure(coeffs: Vec<f64>) -> Self {
        DiscreteField {
            kind: FieldKind::Pressure,
            coeffs,
        }
    }
}

/// Positions of the blocks of the saddle matrix inside the LU value array.
///
/// Unknowns are ordered `[velocity, pressure, multiplier]`; the multiplier
/// enforces a zero pressure mean.
#[derive(Clone, Debug)]
struct SaddleLayout {
    pattern: LuPattern,
    /// For each entry of the scalar velocity pattern: x- and y-block positions.
    vel_pos: Vec<[usize; 2]>,
    /// For each entry of `div`: positions of `B` and of `B^T`.
    div_pos: Vec<[usize; 2]>,
    /// For each pressure dof: positions of the constraint column and row.
    mean_pos: Vec<[usize; 2]>,
}

/// Assembled Taylor–Hood (or comparison) system on one mesh.
#[derive(Debug)]
pub struct FemSystem {
    mesh: Mesh,
    pressure_degree: usize,
    rule: TriangleRule,
    geometry: Vec<Geometry>,
    node_coords: Vec<[f64; 2]>,
    velocity_index: Vec<Option<usize>>,
    velocity_nodes: Vec<usize>,
    pressure_index: Vec<Option<usize>>,
    n_pressure: usize,
    elem_nodes: Vec<[usize; 6]>,
    elem_vel: Vec<[Option<usize>; 6]>,
    elem_pos: Vec<[[Option<usize>; 6]; 6]>,
    basis_at_qp: Vec<[f64; 6]>,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    div: CsrMatrix,
    pressure_mass: CsrMatrix,
    pressure_stiffness: CsrMatrix,
    pressure_integrals: Vec<f64>,
    saddle: SaddleLayout,
    /// Factored projection saddle matrix; `None` for P2/P2, whose saddle
    /// matrices can be singular.
    projector: Option<LuFactor>,
}

/// Assembles the mixed system for the element pair `(velocity, pressure)`
/// degrees. Supported pairs: `(2, 1)` (Taylor–Hood) and `(2, 2)`. The
/// `(2, 2)` pair only supports assembly queries and [`FemSystem::infsup_constant`].
pub fn assemble(mesh: Mesh, degree_pair: (usize, usize)) -> Result<FemSystem> {
    FemSystem::new(mesh, degree_pair)
}

impl FemSystem {
    pub fn new(mesh: Mesh, (vdeg, pdeg): (usize, usize)) -> Result<Self> {
        if vdeg != 2 || !(pdeg == 1 || pdeg == 2) {
            return Err(Error::UnsupportedElement {
                velocity: vdeg,
                pressure: pdeg,
            });
        }
        let nv = mesh.num_vertices();
        let nn = nv + mesh.num_edges();
        let mut node_coords = mesh.vertices().to_vec();
        node_coords.extend((0..mesh.num_edges()).map(|e| mesh.edge_midpoint(e)));
        let mut boundary = mesh.boundary_vertex_flags().to_vec();
        boundary.extend(mesh.boundary_edge_flags());

        let mut velocity_index = vec![None; nn];
        let mut velocity_nodes = Vec::new();
        for node in 0..nn {
            if !boundary[node] {
                velocity_index[node] = Some(velocity_nodes.len());
                velocity_nodes.push(node);
            }
        }
        let pressure_index: Vec<Option<usize>> = (0..nn)
            .map(|node| (pdeg == 2 || node < nv).then_some(node))
            .collect();
        let n_pressure = if pdeg == 2 { nn } else { nv };

        let elem_nodes: Vec<[usize; 6]> = mesh
            .triangles()
            .iter()
            .zip(mesh.triangle_edges())
            .map(|(t, e)| [t[0], t[1], t[2], nv + e[0], nv + e[1], nv + e[2]])
            .collect();
        let elem_vel: Vec<[Option<usize>; 6]> = elem_nodes
            .iter()
            .map(|nodes| nodes.map(|n| velocity_index[n]))
            .collect();
        let geometry: Vec<Geometry> = (0..mesh.num_triangles())
            .map(|t| Geometry::new(&mesh.triangle_coords(t)))
            .collect();
        let rule = TriangleRule::symmetric_degree6();
        let basis_at_qp: Vec<[f64; 6]> = rule.points().iter().map(p2_values).collect();

        let ns = velocity_nodes.len();
        let mut mass = CsrMatrix::pattern(
            ns,
            ns,
            elem_vel.iter().flat_map(|dofs| {
                dofs.iter()
                    .flatten()
                    .flat_map(move |&a| dofs.iter().flatten().map(move |&b| (a, b)))
            }),
        );
        let elem_pos: Vec<[[Option<usize>; 6]; 6]> = elem_vel
            .iter()
            .map(|dofs| {
                let mut pos = [[None; 6]; 6];
                for a in 0..6 {
                    for b in 0..6 {
                        if let (Some(i), Some(j)) = (dofs[a], dofs[b]) {
                            pos[a][b] = mass.position(i, j);
                        }
                    }
                }
                pos
            })
            .collect();
        let mut stiffness = mass.zeros_like();

        let mut div_trip = Vec::new();
        let mut pm_trip = Vec::new();
        let mut pk_trip = Vec::new();
        for (t, geo) in geometry.iter().enumerate() {
            let mut me = [[0.0; 6]; 6];
            let mut ke = [[0.0; 6]; 6];
            let pnodes: Vec<usize> = elem_nodes[t][..if pdeg == 2 { 6 } else { 3 }]
                .iter()
                .map(|&n| pressure_index[n].expect("pressure node"))
                .collect();
            let np_loc = pnodes.len();
            let mut be = vec![[[0.0; 2]; 6]; np_loc];
            let mut pme = vec![vec![0.0; np_loc]; np_loc];
            let mut pke = vec![vec![0.0; np_loc]; np_loc];
            for (q, (l, w)) in rule.points().iter().zip(rule.weights()).enumerate() {
                let wa = w * geo.area;
                let phi = &basis_at_qp[q];
                let grad = p2_gradients(l, &geo.grad_lambda);
                let psi = lagrange_values(pdeg, l);
                let gpsi = lagrange_gradients(pdeg, l, &geo.grad_lambda);
                for a in 0..6 {
                    for b in 0..6 {
                        me[a][b] += wa * (phi[a] * phi[b]);
                        ke[a][b] += wa * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
                    }
                }
                for k in 0..np_loc {
                    for a in 0..6 {
                        be[k][a][0] += wa * grad[a][0] * psi[k];
                        be[k][a][1] += wa * grad[a][1] * psi[k];
                    }
                    for r in 0..np_loc {
                        pme[k][r] += wa * (psi[k] * psi[r]);
                        pke[k][r] += wa * (gpsi[k][0] * gpsi[r][0] + gpsi[k][1] * gpsi[r][1]);
                    }
                }
            }
            for a in 0..6 {
                for b in 0..6 {
                    if let Some(p) = elem_pos[t][a][b] {
                        mass.values_mut()[p] += me[a][b];
                        stiffness.values_mut()[p] += ke[a][b];
                    }
                }
            }
            for k in 0..np_loc {
                for a in 0..6 {
                    if let Some(s) = elem_vel[t][a] {
                        div_trip.push((pnodes[k], 2 * s, be[k][a][0]));
                        div_trip.push((pnodes[k], 2 * s + 1, be[k][a][1]));
                    }
                }
                for r in 0..np_loc {
                    pm_trip.push((pnodes[k], pnodes[r], pme[k][r]));
                    pk_trip.push((pnodes[k], pnodes[r], pke[k][r]));
                }
            }
        }
        let div = CsrMatrix::from_triplets(n_pressure, 2 * ns, &div_trip);
        let pressure_mass = CsrMatrix::from_triplets(n_pressure, n_pressure, &pm_trip);
        let pressure_stiffness = CsrMatrix::from_triplets(n_pressure, n_pressure, &pk_trip);
        let pressure_integrals = pressure_mass.mul_vec(&vec![1.0; n_pressure]);

        let saddle = Self::saddle_layout(&mass, &div)?;
        let mut sys = FemSystem {
            mesh,
            pressure_degree: pdeg,
            rule,
            geometry,
            node_coords,
            velocity_index,
            velocity_nodes,
            pressure_index,
            n_pressure,
            elem_nodes,
            elem_vel,
            elem_pos,
            basis_at_qp,
            mass,
            stiffness,
            div,
            pressure_mass,
            pressure_stiffness,
            pressure_integrals,
            projector: None,
            saddle,
        };
        if pdeg == 1 {
            sys.projector = Some(sys.factor_saddle(&sys.saddle_values(1.0, 0.0, None))?);
        }
        Ok(sys)
    }

    fn saddle_layout(mass: &CsrMatrix, div: &CsrMatrix) -> Result<SaddleLayout> {
        let nu = 2 * mass.nrows();
        let np = div.nrows();
        let lam = nu + np;
        let mut entries = Vec::new();
        for i in 0..mass.nrows() {
            for (j, _) in mass.row(i) {
                entries.push((2 * i, 2 * j));
                entries.push((2 * i + 1, 2 * j + 1));
            }
        }
        for k in 0..np {
            for (j, _) in div.row(k) {
                entries.push((nu + k, j));
                entries.push((j, nu + k));
            }
            entries.push((nu + k, lam));
            entries.push((lam, nu + k));
        }
        let pattern_csr = CsrMatrix::pattern(lam + 1, lam + 1, entries);
        let pattern = LuPattern::from_csr(&pattern_csr)?;
        let mut vel_pos = Vec::with_capacity(mass.nnz());
        for i in 0..mass.nrows() {
            for (j, _) in mass.row(i) {
                vel_pos.push([
                    pattern.position(2 * i, 2 * j).unwrap(),
                    pattern.position(2 * i + 1, 2 * j + 1).unwrap(),
                ]);
            }
        }
        let mut div_pos = Vec::with_capacity(div.nnz());
        for k in 0..np {
            for (j, _) in div.row(k) {
                div_pos.push([
                    pattern.position(nu + k, j).unwrap(),
                    pattern.position(j, nu + k).unwrap(),
                ]);
            }
        }
        let mean_pos = (0..np)
            .map(|k| {
                [
                    pattern.position(nu + k, lam).unwrap(),
                    pattern.position(lam, nu + k).unwrap(),
                ]
            })
            .collect();
        Ok(SaddleLayout {
            pattern,
            vel_pos,
            div_pos,
            mean_pos,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn pressure_degree(&self) -> usize {
        self.pressure_degree
    }

    pub fn rule(&self) -> &TriangleRule {
        &self.rule
    }

    /// Number of scalar velocity nodes (half the velocity dofs).
    pub fn scalar_dofs(&self) -> usize {
        self.velocity_nodes.len()
    }

    pub fn velocity_dofs(&self) -> usize {
        2 * self.velocity_nodes.len()
    }

    pub fn pressure_dofs(&self) -> usize {
        self.n_pressure
    }

    /// Global velocity index of `(node, component)`, `None` on the boundary.
    /// Nodes are vertices `0..nv` followed by edge midpoints.
    pub fn velocity_dof(&self, node: usize, component: usize) -> Option<usize> {
        self.velocity_index[node].map(|s| 2 * s + component)
    }

    pub fn pressure_dof(&self, node: usize) -> Option<usize> {
        self.pressure_index[node]
    }

    pub fn node_coords(&self) -> &[[f64; 2]] {
        &self.node_coords
    }

    /// Coordinates of each scalar velocity dof.
    pub fn velocity_node_coords(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.velocity_nodes.iter().map(|&n| self.node_coords[n])
    }

    /// Coordinates of each pressure dof.
    pub fn pressure_node_coords(&self) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; self.n_pressure];
        for (node, idx) in self.pressure_index.iter().enumerate() {
            if let Some(i) = idx {
                out[*i] = self.node_coords[node];
            }
        }
        out
    }

    /// Scalar P2 mass matrix on interior nodes.
    pub fn scalar_mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Scalar P2 stiffness matrix on interior nodes.
    pub fn scalar_stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Rows: pressure dofs; entries `int div(phi_j) q_k`.
    pub fn divergence(&self) -> &CsrMatrix {
        &self.div
    }

    pub fn pressure_mass(&self) -> &CsrMatrix {
        &self.pressure_mass
    }

    pub fn pressure_stiffness(&self) -> &CsrMatrix {
        &self.pressure_stiffness
    }

    /// `int q_k dx` for every pressure basis function.
    pub fn pressure_integrals(&self) -> &[f64] {
        &self.pressure_integrals
    }

    /// Full (interleaved) velocity matrix from a scalar block.
    pub fn block_matrix(&self, scalar: &CsrMatrix) -> CsrMatrix {
        let mut trip = Vec::with_capacity(2 * scalar.nnz());
        for i in 0..scalar.nrows() {
            for (j, v) in scalar.row(i) {
                trip.push((2 * i, 2 * j, v));
                trip.push((2 * i + 1, 2 * j + 1, v));
            }
        }
        CsrMatrix::from_triplets(2 * scalar.nrows(), 2 * scalar.ncols(), &trip)
    }

    /// Applies a scalar matrix to both components of a velocity vector.
    pub fn apply_block(&self, scalar: &CsrMatrix, v: &[f64]) -> Vec<f64> {
        let ns = scalar.nrows();
        let mut out = vec![0.0; 2 * ns];
        for i in 0..ns {
            let (mut sx, mut sy) = (0.0, 0.0);
            for (j, a) in scalar.row(i) {
                sx += a * v[2 * j];
                sy += a * v[2 * j + 1];
            }
            out[2 * i] = sx;
            out[2 * i + 1] = sy;
        }
        out
    }

    pub fn apply_mass(&self, v: &[f64]) -> Vec<f64> {
        self.apply_block(&self.mass, v)
    }

    pub fn apply_stiffness(&self, v: &[f64]) -> Vec<f64> {
        self.apply_block(&self.stiffness, v)
    }

    /// `||v||_{L^2}^2`.
    pub fn l2_norm_sq(&self, v: &[f64]) -> f64 {
        dot(v, &self.apply_mass(v))
    }

    /// `||grad v||_{L^2}^2`.
    pub fn h1_seminorm_sq(&self, v: &[f64]) -> f64 {
        dot(v, &self.apply_stiffness(v))
    }

    pub fn pressure_l2_norm_sq(&self, p: &[f64]) -> f64 {
        self.pressure_mass.quadratic_form(p)
    }

    pub fn pressure_grad_norm_sq(&self, p: &[f64]) -> f64 {
        self.pressure_stiffness.quadratic_form(p)
    }

    /// `int p dx`.
    pub fn pressure_mean(&self, p: &[f64]) -> f64 {
        dot(p, &self.pressure_integrals)
    }

    /// `max_k |<div v, q_k>| / (||v|| ||q_k||)`; zero for `v = 0`.
    pub fn divergence_residual(&self, v: &[f64]) -> f64 {
        let norm = self.l2_norm_sq(v).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let bv = self.div.mul_vec(v);
        bv.iter()
            .enumerate()
            .map(|(k, r)| r.abs() / (norm * self.pressure_mass.get(k, k).sqrt()))
            .fold(0.0, f64::max)
    }

    /// Load vector `int f . phi_i dx` for a velocity-valued function.
    pub fn load_vector(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.velocity_dofs()];
        for (t, geo) in self.geometry.iter().enumerate() {
            let tri = self.mesh.triangle_coords(t);
            for (q, x) in self.rule.map_points(&tri).enumerate() {
                let wa = self.rule.weights()[q] * geo.area;
                let fx = f(x);
                for (a, dof) in self.elem_vel[t].iter().enumerate() {
                    if let Some(s) = dof {
                        let phi = self.basis_at_qp[q][a];
                        out[2 * s] += wa * fx[0] * phi;
                        out[2 * s + 1] += wa * fx[1] * phi;
                    }
                }
            }
        }
        out
    }

    /// Nodal interpolant (boundary values are dropped).
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> DiscreteField {
        let mut out = vec![0.0; self.velocity_dofs()];
        for (s, x) in self.velocity_node_coords().enumerate() {
            let v = f(x);
            out[2 * s] = v[0];
            out[2 * s + 1] = v[1];
        }
        DiscreteField::velocity(out)
    }

    pub(crate) fn saddle_values(
        &self,
        mass_coef: f64,
        stiff_coef: f64,
        convection: Option<(&CsrMatrix, f64)>,
    ) -> Vec<f64> {
        let mut vals = vec![0.0; self.saddle.pattern.nnz()];
        let m = self.mass.values();
        let k = self.stiffness.values();
        for (e, pos) in self.saddle.vel_pos.iter().enumerate() {
            let mut a = mass_coef * m[e] + stiff_coef * k[e];
            if let Some((c, coef)) = convection {
                a += coef * c.values()[e];
            }
            vals[pos[0]] = a;
            vals[pos[1]] = a;
        }
        for (e, pos) in self.saddle.div_pos.iter().enumerate() {
            let b = self.div.values()[e];
            vals[pos[0]] = b;
            vals[pos[1]] = b;
        }
        for (kq, pos) in self.saddle.mean_pos.iter().enumerate() {
            vals[pos[0]] = self.pressure_integrals[kq];
            vals[pos[1]] = self.pressure_integrals[kq];
        }
        vals
    }

    pub(crate) fn saddle_dim(&self) -> usize {
        self.saddle.pattern.dim()
    }

    pub(crate) fn factor_saddle(&self, values: &[f64]) -> Result<LuFactor> {
        self.saddle.pattern.factor(values)
    }

    pub(crate) fn saddle_mul(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        self.saddle.pattern.mul_vec(values, x)
    }

    /// Dense copy of a saddle matrix (for small-system cross-checks).
    pub fn saddle_dense(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let n = self.saddle_dim();
        let mut out = vec![vec![0.0; n]; n];
        for (j, col) in (0..n).map(|j| (j, self.saddle_mul(values, &unit(n, j)))) {
            for i in 0..n {
                out[i][j] = col[i];
            }
        }
        out
    }

    /// Solves a factored saddle system with velocity right-hand side `f` and
    /// zero divergence data. Returns `(velocity, pressure multiplier)` where
    /// the second block solves `A u + B^T r = f`.
    pub(crate) fn solve_saddle(&self, factor: &LuFactor, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nu = self.velocity_dofs();
        let mut rhs = vec![0.0; self.saddle_dim()];
        rhs[..nu].copy_from_slice(f);
        factor.solve_in_place(&mut rhs);
        let p = rhs[nu..nu + self.n_pressure].to_vec();
        rhs.truncate(nu);
        (rhs, p)
    }

    /// Discretely divergence-free L2 projection of the functional given by
    /// its load vector `int f . phi_i`.
    pub fn project_div_free_load(&self, load: &[f64]) -> DiscreteField {
        let projector = self.projector.as_ref().expect("projections need the Taylor-Hood pair");
        DiscreteField::velocity(self.solve_saddle(projector, load).0)
    }

    /// `Pi_h f` for a velocity-valued function.
    pub fn project_div_free(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> DiscreteField {
        self.project_div_free_load(&self.load_vector(f))
    }

    /// `Pi_h v` for a finite element velocity.
    pub fn project_div_free_field(&self, v: &[f64]) -> DiscreteField {
        self.project_div_free_load(&self.apply_mass(v))
    }

    /// Discrete Stokes operator: `w` in the discretely solenoidal space with
    /// `<w, phi> = <grad v, grad phi>` for all solenoidal `phi`.
    pub fn stokes_operator(&self, v: &[f64]) -> Vec<f64> {
        self.project_div_free_load(&self.apply_stiffness(v)).coeffs
    }

    /// Scalar convection matrix `int (w . grad phi_j + theta div(w) phi_j) phi_i`
    /// on the velocity pattern (same for both components).
    pub fn convection_matrix(&self, w: &[f64], theta: f64) -> CsrMatrix {
        let mut c = self.mass.zeros_like();
        let vals = c.values_mut();
        for (t, geo) in self.geometry.iter().enumerate() {
            let dofs = &self.elem_vel[t];
            let mut wx = [0.0; 6];
            let mut wy = [0.0; 6];
            for a in 0..6 {
                if let Some(s) = dofs[a] {
                    wx[a] = w[2 * s];
                    wy[a] = w[2 * s + 1];
                }
            }
            let mut ce = [[0.0; 6]; 6];
            for (q, (l, wq)) in self.rule.points().iter().zip(self.rule.weights()).enumerate() {
                let wa = wq * geo.area;
                let phi = &self.basis_at_qp[q];
                let grad = p2_gradients(l, &geo.grad_lambda);
                let (mut u0, mut u1, mut dv) = (0.0, 0.0, 0.0);
                for a in 0..6 {
                    u0 += wx[a] * phi[a];
                    u1 += wy[a] * phi[a];
                    dv += wx[a] * grad[a][0] + wy[a] * grad[a][1];
                }
                for b in 0..6 {
                    let tb = wa * (u0 * grad[b][0] + u1 * grad[b][1] + theta * dv * phi[b]);
                    for a in 0..6 {
                        ce[a][b] += phi[a] * tb;
                    }
                }
            }
            for a in 0..6 {
                for b in 0..6 {
                    if let Some(p) = self.elem_pos[t][a][b] {
                        vals[p] += ce[a][b];
                    }
                }
            }
        }
        c
    }

    /// `int (grad v) w . z + theta div(w) v . z` evaluated elementwise, for
    /// checking the skew-symmetry identity independently of matrix assembly.
    pub fn trilinear(&self, w: &[f64], v: &[f64], z: &[f64], theta: f64) -> f64 {
        let mut total = 0.0;
        for (t, geo) in self.geometry.iter().enumerate() {
            for (l, wq) in self.rule.points().iter().zip(self.rule.weights()) {
                let (wv, gw) = self.eval_local(t, l, w, geo);
                let (vv, gv) = self.eval_local(t, l, v, geo);
                let (zv, _) = self.eval_local(t, l, z, geo);
                let divw = gw[0][0] + gw[1][1];
                let mut s = 0.0;
                for c in 0..2 {
                    let conv = gv[c][0] * wv[0] + gv[c][1] * wv[1];
                    s += (conv + theta * divw * vv[c]) * zv[c];
                }
                total += wq * geo.area * s;
            }
        }
        total
    }

    fn eval_local(&self, t: usize, l: &[f64; 3], v: &[f64], geo: &Geometry) -> ([f64; 2], [[f64; 2]; 2]) {
        let phi = p2_values(l);
        let grad = p2_gradients(l, &geo.grad_lambda);
        let mut val = [0.0; 2];
        let mut g = [[0.0; 2]; 2];
        for (a, dof) in self.elem_vel[t].iter().enumerate() {
            if let Some(s) = dof {
                for c in 0..2 {
                    let coef = v[2 * s + c];
                    val[c] += coef * phi[a];
                    g[c][0] += coef * grad[a][0];
                    g[c][1] += coef * grad[a][1];
                }
            }
        }
        (val, g)
    }

    /// Value and gradient (`g[c][d] = d v_c / d x_d`) of a velocity field.
    pub fn evaluate_velocity(&self, v: &[f64], x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let t = self.mesh.locate(x);
        self.evaluate_velocity_in(t, v, x)
    }

    /// As [`FemSystem::evaluate_velocity`] with the containing triangle given.
    pub fn evaluate_velocity_in(&self, t: usize, v: &[f64], x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let geo = &self.geometry[t];
        let l = geo.barycentric(self.mesh.triangle_coords(t)[0], x);
        self.eval_local(t, &l, v, geo)
    }

    /// Value of a pressure field at `x`.
    pub fn evaluate_pressure(&self, p: &[f64], x: [f64; 2]) -> f64 {
        let t = self.mesh.locate(x);
        let geo = &self.geometry[t];
        let l = geo.barycentric(self.mesh.triangle_coords(t)[0], x);
        let psi = lagrange_values(self.pressure_degree, &l);
        psi.iter()
            .enumerate()
            .map(|(k, v)| v * p[self.pressure_index[self.elem_nodes[t][k]].unwrap()])
            .sum()
    }

    /// `||v - f||_{L^2}` by quadrature with the given rule.
    pub fn velocity_l2_error(&self, v: &[f64], f: impl Fn([f64; 2]) -> [f64; 2], rule: &TriangleRule) -> f64 {
        let mut total = 0.0;
        for (t, geo) in self.geometry.iter().enumerate() {
            let tri = self.mesh.triangle_coords(t);
            for (x, (l, w)) in rule.map_points(&tri).zip(rule.points().iter().zip(rule.weights())) {
                let (vh, _) = self.eval_local(t, l, v, geo);
                let fx = f(x);
                total += w * geo.area * ((vh[0] - fx[0]).powi(2) + (vh[1] - fx[1]).powi(2));
            }
        }
        total.sqrt()
    }

    /// `||p - g||_{L^2}` by quadrature with the given rule.
    pub fn pressure_l2_error(&self, p: &[f64], g: impl Fn([f64; 2]) -> f64, rule: &TriangleRule) -> f64 {
        let mut total = 0.0;
        for (t, geo) in self.geometry.iter().enumerate() {
            let tri = self.mesh.triangle_coords(t);
            for (x, (l, w)) in rule.map_points(&tri).zip(rule.points().iter().zip(rule.weights())) {
                let psi = lagrange_values(self.pressure_degree, l);
                let ph: f64 = psi
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * p[self.pressure_index[self.elem_nodes[t][k]].unwrap()])
                    .sum();
                total += w * geo.area * (ph - g(x)).powi(2);
            }
        }
        total.sqrt()
    }

    /// `Q_h g`: L2 projection onto the pressure space, normalised to zero mean.
    pub fn project_pressure(&self, g: impl Fn([f64; 2]) -> f64) -> Result<DiscreteField> {
        let mut load = vec![0.0; self.n_pressure];
        for (t, geo) in self.geometry.iter().enumerate() {
            let tri = self.mesh.triangle_coords(t);
            let nloc = if self.pressure_degree == 2 { 6 } else { 3 };
            for (x, (l, w)) in self.rule.map_points(&tri).zip(self.rule.points().iter().zip(self.rule.weights())) {
                let psi = lagrange_values(self.pressure_degree, l);
                let gx = g(x);
                for k in 0..nloc {
                    load[self.pressure_index[self.elem_nodes[t][k]].unwrap()] += w * geo.area * gx * psi[k];
                }
            }
        }
        LuFactor::from_csr(&self.pressure_mass)?.solve_in_place(&mut load);
        let area: f64 = self.pressure_integrals.iter().sum();
        let mean = self.pressure_mean(&load) / area;
        load.iter_mut().for_each(|p| *p -= mean);
        Ok(DiscreteField::pressure(load))
    }

    /// Sparse interpolation operator from a nested coarser system's scalar
    /// velocity dofs onto this system's. Exact for P2 fields because the
    /// coarse space is contained in the fine one.
    pub fn prolongation_from(&self, coarse: &FemSystem) -> Result<CsrMatrix> {
        if self.mesh.n() % coarse.mesh.n() != 0 {
            return Err(Error::invalid(format!(
                "mesh n={} is not nested in n={}",
                coarse.mesh.n(),
                self.mesh.n()
            )));
        }
        let mut trip = Vec::new();
        for (s, x) in self.velocity_node_coords().enumerate() {
            let t = coarse.mesh.locate(x);
            let geo = &coarse.geometry[t];
            let l = geo.barycentric(coarse.mesh.triangle_coords(t)[0], x);
            let phi = p2_values(&l);
            for (a, dof) in coarse.elem_vel[t].iter().enumerate() {
                if let Some(c) = dof {
                    if phi[a].abs() > 1e-14 {
                        trip.push((s, *c, phi[a]));
                    }
                }
            }
        }
        Ok(CsrMatrix::from_triplets(self.scalar_dofs(), coarse.scalar_dofs(), &trip))
    }

    /// Inf-sup constant: square root of the smallest eigenvalue of
    /// `B K^{-1} B^T q = lambda M_p q` over mean-zero pressures.
    pub fn infsup_constant(&self) -> Result<f64> {
        let nu = self.velocity_dofs();
        let np = self.n_pressure;
        let k = LuFactor::from_csr(&self.block_matrix(&self.stiffness))?;
        // columns of B^T, column-major
        let mut x = vec![0.0; nu * np];
        for i in 0..np {
            for (j, v) in self.div.row(i) {
                x[i * nu + j] = v;
            }
        }
        k.solve_many_in_place(&mut x, np);
        let mut s = Mat::<f64>::zeros(np, np);
        for i in 0..np {
            for kcol in 0..np {
                let col = &x[kcol * nu..(kcol + 1) * nu];
                s[(i, kcol)] = self.div.row(i).map(|(j, v)| v * col[j]).sum();
            }
        }
        // Shift the constant mode (the kernel of B^T) above the spectrum of
        // interest, whose eigenvalues are bounded by one.
        let m = &self.pressure_integrals;
        let gamma = 2.0 / m.iter().sum::<f64>();
        let mp = Mat::<f64>::from_fn(np, np, |i, j| self.pressure_mass.get(i, j));
        let s = Mat::<f64>::from_fn(np, np, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]) + gamma * m[i] * m[j]);
        let evd = mp
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let d = evd.S();
        let u = evd.U();
        let w = Mat::<f64>::from_fn(np, np, |i, j| {
            (0..np).map(|r| u[(i, r)] * u[(j, r)] / d[r].sqrt()).sum()
        });
        let c = &w * &s * &w;
        let c = Mat::<f64>::from_fn(np, np, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
        let eig = c
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        Ok(eig[0].max(0.0).sqrt())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(n: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    fn th(n: usize) -> FemSystem {
        assemble(build_mesh(n).unwrap(), (2, 1)).unwrap()
    }

    #[test]
    fn dof_counts() {
        let f = th(4);
        // interior vertices 9, interior edges 56 - 16 = 40
        assert_eq!(f.scalar_dofs(), 9 + 40);
        assert_eq!(f.pressure_dofs(), 25);
        assert_eq!(f.velocity_dof(0, 0), None);
        let centre = 2 * 5 + 2;
        assert_eq!(f.velocity_dof(centre, 1).map(|d| d % 2), Some(1));
    }

    #[test]
    fn unsupported_pair_is_rejected() {
        let m = build_mesh(2).unwrap();
        assert!(matches!(
            assemble(m.clone(), (1, 0)),
            Err(Error::UnsupportedElement { .. })
        ));
        assert!(assemble(m, (2, 3)).is_err());
    }

    #[test]
    fn matrices_are_symmetric() {
        let f = th(4);
        assert_eq!(f.scalar_mass().max_asymmetry(), 0.0);
        assert_eq!(f.scalar_stiffness().max_asymmetry(), 0.0);
        assert_eq!(f.pressure_mass().max_asymmetry(), 0.0);
    }

    #[test]
    fn pressure_mass_sums_to_area() {
        for n in [1, 3, 8] {
            let f = th(n);
            let total: f64 = f.pressure_mass().values().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_pressure_is_in_kernel_of_gradient() {
        let f = th(4);
        let ones = vec![1.0; f.pressure_dofs()];
        let bt1 = f.divergence().tr_mul_vec(&ones);
        assert!(bt1.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn projection_of_zero_is_zero_and_idempotent() {
        let f = th(4);
        let z = f.project_div_free(|_| [0.0, 0.0]);
        assert!(z.coeffs.iter().all(|&c| c == 0.0));
        let y = f.project_div_free(|x| [x[1] * (1.0 - x[1]) * x[0], x[0].sin() * x[1]]);
        let yy = f.project_div_free_field(&y.coeffs);
        let diff: Vec<f64> = y.coeffs.iter().zip(&yy.coeffs).map(|(a, b)| a - b).collect();
        assert!(f.l2_norm_sq(&diff).sqrt() <= 1e-10 * f.l2_norm_sq(&y.coeffs).sqrt());
        assert!(f.divergence_residual(&y.coeffs) < 1e-9);
    }

    #[test]
    fn pressure_projection_of_constant_and_of_member() {
        let f = th(4);
        let c = f.project_pressure(|_| 3.5).unwrap();
        assert!(c.coeffs.iter().all(|v| v.abs() < 1e-12));
        // a mean-zero P1 function is reproduced
        let g = |x: [f64; 2]| x[0] + 2.0 * x[1] - 1.5;
        let q = f.project_pressure(g).unwrap();
        for (p, x) in q.coeffs.iter().zip(f.pressure_node_coords()) {
            assert!((p - g(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn stiffness_is_positive_definite_on_interior_dofs() {
        let f = th(3);
        let k = f.block_matrix(f.scalar_stiffness());
        // Cholesky-free check: LU succeeds and x^T K x > 0 on random vectors.
        LuFactor::from_csr(&k).unwrap();
        for seed in 0..5u64 {
            let v: Vec<f64> = (0..f.velocity_dofs())
                .map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
                .collect();
            assert!(k.quadratic_form(&v) > 0.0);
        }
    }

    #[test]
    fn convection_matrix_matches_trilinear_form() {
        let f = th(3);
        let w = f.project_div_free(|x| [x[1].sin(), x[0] * x[0]]).coeffs;
        let v = f.interpolate(|x| [x[0] * x[1] * (1.0 - x[0]), (x[0] + x[1]).cos()]).coeffs;
        let z = f.interpolate(|x| [x[1], 1.0 - x[0] * x[1]]).coeffs;
        let c = f.convection_matrix(&w, 0.5);
        let cz = f.apply_block(&c, &v);
        let direct = f.trilinear(&w, &v, &z, 0.5);
        assert!((dot(&cz, &z) - direct).abs() < 1e-13);
    }

    #[test]
    fn evaluation_at_nodes_returns_coefficients() {
        let f = th(4);
        let v = f.interpolate(|x| [x[0].sin() + x[1], x[0] * x[1]]).coeffs;
        for (s, x) in f.velocity_node_coords().enumerate() {
            let (val, _) = f.evaluate_velocity(&v, x);
            assert!((val[0] - v[2 * s]).abs() < 1e-14);
            assert!((val[1] - v[2 * s + 1]).abs() < 1e-14);
        }
    }
}
