//! Lagrange shape functions on a triangle in barycentric form.
//!
//! Local node order for P2 is `v0, v1, v2, m01, m12, m20` where `mij` is the
//! midpoint of the edge between vertices `i` and `j`.

/// Affine geometry of one triangle.
#[derive(Clone, Copy, Debug)]
pub struct Geometry {
    pub area: f64,
    /// Gradients of the barycentric coordinates (constant on the triangle).
    pub grad_lambda: [[f64; 2]; 3],
}

impl Geometry {
    pub fn new(p: &[[f64; 2]; 3]) -> Self {
        let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let inv = 1.0 / det;
        let grad_lambda = [
            [(p[1][1] - p[2][1]) * inv, (p[2][0] - p[1][0]) * inv],
            [(p[2][1] - p[0][1]) * inv, (p[0][0] - p[2][0]) * inv],
            [(p[0][1] - p[1][1]) * inv, (p[1][0] - p[0][0]) * inv],
        ];
        Geometry {
            area: 0.5 * det,
            grad_lambda,
        }
    }

    /// Barycentric coordinates of a physical point.
    pub fn barycentric(&self, p0: [f64; 2], x: [f64; 2]) -> [f64; 3] {
        let d = [x[0] - p0[0], x[1] - p0[1]];
        let l1 = self.grad_lambda[1][0] * d[0] + self.grad_lambda[1][1] * d[1];
        let l2 = self.grad_lambda[2][0] * d[0] + self.grad_lambda[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }
}

pub const P2_EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

pub fn p2_values(l: &[f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

pub fn p2_gradients(l: &[f64; 3], g: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut out = [[0.0; 2]; 6];
    for i in 0..3 {
        let s = 4.0 * l[i] - 1.0;
        out[i] = [s * g[i][0], s * g[i][1]];
    }
    for (k, &(i, j)) in P2_EDGES.iter().enumerate() {
        out[3 + k] = [
            4.0 * (l[j] * g[i][0] + l[i] * g[j][0]),
            4.0 * (l[j] * g[i][1] + l[i] * g[j][1]),
        ];
    }
    out
}

pub fn p1_values(l: &[f64; 3]) -> [f64; 3] {
    *l
}

/// Shape function values of the given Lagrange degree (1 or 2).
pub fn lagrange_values(degree: usize, l: &[f64; 3]) -> Vec<f64> {
    match degree {
        1 => p1_values(l).to_vec(),
        2 => p2_values(l).to_vec(),
        _ => unreachable!("only P1 and P2 are supported"),
    }
}

pub fn lagrange_gradients(degree: usize, l: &[f64; 3], g: &[[f64; 2]; 3]) -> Vec<[f64; 2]> {
    match degree {
        1 => g.to_vec(),
        2 => p2_gradients(l, g).to_vec(),
        _ => unreachable!("only P1 and P2 are supported"),
    }
}
