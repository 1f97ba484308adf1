//! Quadrature rules on triangles.
//!
//! Points are stored in barycentric coordinates and weights are normalised to
//! sum to one, so `sum_q w_q f(x_q) * area` integrates `f` over a triangle.

/// A quadrature rule on the reference triangle.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    degree: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl TriangleRule {
    /// The 12-point symmetric rule, exact for polynomials of degree 6.
    pub fn symmetric_degree6() -> Self {
        let mut points = Vec::with_capacity(12);
        let mut weights = Vec::with_capacity(12);
        let orbit3 = |a: f64, w: f64, pts: &mut Vec<[f64; 3]>, ws: &mut Vec<f64>| {
            let b = 1.0 - 2.0 * a;
            for p in [[a, a, b], [a, b, a], [b, a, a]] {
                pts.push(p);
                ws.push(w);
            }
        };
        orbit3(
            0.249_286_745_170_910_421_291_638_553_107,
            0.116_786_275_726_379_366_030_690_438_129,
            &mut points,
            &mut weights,
        );
        orbit3(
            0.063_089_014_491_502_228_340_331_602_871,
            0.050_844_906_370_206_816_920_936_809_106,
            &mut points,
            &mut weights,
        );
        let a = 0.053_145_049_844_816_947_353_249_671_631;
        let b = 0.310_352_451_033_784_405_416_607_733_956;
        let c = 1.0 - a - b;
        let w = 0.082_851_075_618_373_575_193_553_456_421;
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            points.push(p);
            weights.push(w);
        }
        TriangleRule {
            degree: 6,
            points,
            weights,
        }
    }

    /// Collapsed (Duffy) Gauss–Legendre product rule exact to `degree`.
    ///
    /// Built from tensor Gauss–Legendre nodes, so it shares nothing with the
    /// tabulated degree-6 rule and serves as an independent cross-check.
    pub fn conical(degree: usize) -> Self {
        // x = s, y = t (1 - s), Jacobian (1 - s): one extra degree in s.
        let ns = (degree + 2).div_ceil(2);
        let nt = (degree + 1).div_ceil(2).max(1);
        let (sx, sw) = gauss_legendre_unit(ns);
        let (tx, tw) = gauss_legendre_unit(nt);
        let mut points = Vec::with_capacity(ns * nt);
        let mut weights = Vec::with_capacity(ns * nt);
        for (s, ws) in sx.iter().zip(&sw) {
            for (t, wt) in tx.iter().zip(&tw) {
                let x = *s;
                let y = t * (1.0 - s);
                points.push([1.0 - x - y, x, y]);
                // reference area is 1/2, normalise weights to sum to 1
                weights.push(2.0 * ws * wt * (1.0 - s));
            }
        }
        TriangleRule {
            degree,
            points,
            weights,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Physical coordinates of the quadrature points on a triangle.
    pub fn map_points(&self, tri: &[[f64; 2]; 3]) -> impl Iterator<Item = [f64; 2]> + '_ {
        let tri = *tri;
        self.points.iter().map(move |l| {
            [
                l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
                l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
            ]
        })
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on the Legendre
/// recurrence, converged to machine precision).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        w.iter().map(|w| 0.5 * w).collect(),
    )
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
