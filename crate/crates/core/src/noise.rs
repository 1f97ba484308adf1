//! Additive solenoidal noise: a truncated modal expansion `Phi W = sum_j
//! sigma_j beta_j psi_j`, sampled Wiener paths, and exact path coarsening.
//!
//! Each mode is `psi_jk = curl(phi_jk)` with `phi_jk = c sin^2(j pi x)
//! sin^2(k pi y)`, so it is divergence free, vanishes on the boundary with
//! its first derivatives, and has unit L2 norm for `c = 4 / (pi sqrt(3) kappa)`,
//! `kappa = sqrt(j^2 + k^2)`.

use std::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::element::Geometry;
use crate::error::{Error, Result};
use crate::fem::{DiscreteField, FemSystem};
use crate::mesh::build_mesh;
use crate::quadrature::TriangleRule;

/// Multi-indices `(d/dx, d/dy)` of order at most two, each counted once.
pub const W22_MULTI_INDICES: [(usize, usize); 6] = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)];

#[derive(Clone, Debug)]
pub struct NoiseModel {
    j_max: usize,
    decay_r: f64,
    scale: f64,
    modes: Vec<(usize, usize)>,
    sigma: Vec<f64>,
    normalisation: Vec<f64>,
    gram_w22: Vec<Vec<f64>>,
}

/// Builds the `j_max^2`-mode model with `sigma_jk = scale * kappa^(-r)`.
pub fn build_noise(j_max: usize, decay_r: f64, scale: f64) -> Result<NoiseModel> {
    NoiseModel::new(j_max, decay_r, scale)
}

/// `d^n/dx^n sin^2(j pi x)`.
fn sin_sq_derivative(n: usize, j: usize, x: f64) -> f64 {
    let w = j as f64 * PI;
    let s = (2.0 * w * x).sin();
    let c = (2.0 * w * x).cos();
    match n {
        0 => {
            let v = (w * x).sin();
            v * v
        }
        1 => w * s,
        2 => 2.0 * w * w * c,
        3 => -4.0 * w * w * w * s,
        4 => -8.0 * w.powi(4) * c,
        _ => unreachable!("derivative order above 4"),
    }
}

impl NoiseModel {
    pub fn new(j_max: usize, decay_r: f64, scale: f64) -> Result<Self> {
        if j_max == 0 {
            return Err(Error::invalid("noise needs j_max >= 1"));
        }
        if !(decay_r > 4.0) {
            return Err(Error::invalid(format!(
                "W^{{3,2}} summability violated: decay exponent requires r > 4, got {decay_r}"
            )));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!("noise scale must be positive, got {scale}")));
        }
        let modes: Vec<(usize, usize)> = (1..=j_max)
            .flat_map(|j| (1..=j_max).map(move |k| (j, k)))
            .collect();
        let kappa = |&(j, k): &(usize, usize)| ((j * j + k * k) as f64).sqrt();
        let sigma = modes.iter().map(|m| scale * kappa(m).powf(-decay_r)).collect();
        let normalisation = modes
            .iter()
            .map(|m| 4.0 / (PI * 3f64.sqrt() * kappa(m)))
            .collect();
        let mut model = NoiseModel {
            j_max,
            decay_r,
            scale,
            modes,
            sigma,
            normalisation,
            gram_w22: Vec::new(),
        };
        model.gram_w22 = model.sobolev_gram(16 * j_max, 10);
        Ok(model)
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn decay_r(&self) -> f64 {
        self.decay_r
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[(usize, usize)] {
        &self.modes
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Gram matrix of `{sigma_j psi_j}` in the `W^{2,2}` inner product.
    pub fn gram_w22(&self) -> &[Vec<f64>] {
        &self.gram_w22
    }

    /// `sum_j sigma_j^2 ||psi_j||^2_{W^{2,2}}`.
    pub fn hilbert_schmidt_w22(&self) -> f64 {
        (0..self.num_modes()).map(|i| self.gram_w22[i][i]).sum()
    }

    /// `d^(p,q) psi_mode` (component `comp`) at `x`.
    pub fn psi_derivative(&self, mode: usize, comp: usize, (p, q): (usize, usize), x: [f64; 2]) -> f64 {
        let (j, k) = self.modes[mode];
        let c = self.normalisation[mode];
        if comp == 0 {
            -c * sin_sq_derivative(p, j, x[0]) * sin_sq_derivative(q + 1, k, x[1])
        } else {
            c * sin_sq_derivative(p + 1, j, x[0]) * sin_sq_derivative(q, k, x[1])
        }
    }

    /// Unit-norm mode field `psi_mode(x)`.
    pub fn psi(&self, mode: usize, x: [f64; 2]) -> [f64; 2] {
        [
            self.psi_derivative(mode, 0, (0, 0), x),
            self.psi_derivative(mode, 1, (0, 0), x),
        ]
    }

    /// Analytic divergence of `psi_mode`.
    pub fn psi_divergence(&self, mode: usize, x: [f64; 2]) -> f64 {
        self.psi_derivative(mode, 0, (1, 0), x) + self.psi_derivative(mode, 1, (0, 1), x)
    }

    /// `Phi w = sum_j sigma_j w_j psi_j` at a point.
    pub fn phi_w(&self, w: &[f64], x: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (i, (&s, &wi)) in self.sigma.iter().zip(w).enumerate() {
            let p = self.psi(i, x);
            out[0] += s * wi * p[0];
            out[1] += s * wi * p[1];
        }
        out
    }

    /// `||Phi w||_{W^{2,2}} = sqrt(w^T G w)`.
    pub fn w22_norm(&self, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, row) in self.gram_w22.iter().enumerate() {
            s += w[i] * row.iter().zip(w).map(|(g, wj)| g * wj).sum::<f64>();
        }
        s.max(0.0).sqrt()
    }

    /// Gram of `sigma_j psi_j` over derivative orders up to two, integrated
    /// with a conical rule of the given degree on a uniform triangulation.
    fn sobolev_gram(&self, mesh_n: usize, degree: usize) -> Vec<Vec<f64>> {
        let nm = self.num_modes();
        let mesh = build_mesh(mesh_n).expect("mesh_n >= 1");
        let rule = TriangleRule::conical(degree);
        let mut gram = vec![vec![0.0; nm]; nm];
        let mut vals = vec![[0.0; 12]; nm];
        for t in 0..mesh.num_triangles() {
            let tri = mesh.triangle_coords(t);
            let area = Geometry::new(&tri).area;
            for (x, w) in rule.map_points(&tri).zip(rule.weights()) {
                for (m, v) in vals.iter_mut().enumerate() {
                    for (a, &alpha) in W22_MULTI_INDICES.iter().enumerate() {
                        v[2 * a] = self.sigma[m] * self.psi_derivative(m, 0, alpha, x);
                        v[2 * a + 1] = self.sigma[m] * self.psi_derivative(m, 1, alpha, x);
                    }
                }
                let wa = w * area;
                for a in 0..nm {
                    for b in a..nm {
                        let d: f64 = vals[a].iter().zip(&vals[b]).map(|(p, q)| p * q).sum();
                        gram[a][b] += wa * d;
                    }
                }
            }
        }
        for a in 0..nm {
            for b in 0..a {
                gram[a][b] = gram[b][a];
            }
        }
        gram
    }
}

/// Mixes a master seed with a sample index (SplitMix64 finaliser).
pub fn sample_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_open(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn box_muller(a: u64, b: u64) -> f64 {
    let u1 = unit_open(a);
    let u2 = unit_open(b);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn mode_stream(seed: u64, mode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mode as u64);
    rng
}

/// Standard normal draw addressed by `(seed, mode, step)`. Each step consumes
/// exactly four 32-bit words of the mode's ChaCha stream, so sequential and
/// random-access generation agree.
pub fn standard_normal(seed: u64, mode: usize, step: usize) -> f64 {
    let mut rng = mode_stream(seed, mode);
    rng.set_word_pos(4 * step as u128);
    box_muller(rng.next_u64(), rng.next_u64())
}

/// Per-mode Wiener increments on the finest grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    seed: u64,
    t_final: f64,
    increments: Vec<Vec<f64>>,
}

/// Samples `num_modes` independent paths with `m_fine` steps on `[0, t_final]`.
pub fn sample_path(num_modes: usize, m_fine: usize, t_final: f64, seed: u64) -> Result<BrownianPath> {
    if m_fine == 0 {
        return Err(Error::invalid("path needs at least one step"));
    }
    if !(t_final > 0.0) {
        return Err(Error::invalid("time horizon must be positive"));
    }
    let sd = (t_final / m_fine as f64).sqrt();
    let increments = (0..num_modes)
        .map(|mode| {
            let mut rng = mode_stream(seed, mode);
            (0..m_fine)
                .map(|_| sd * box_muller(rng.next_u64(), rng.next_u64()))
                .collect()
        })
        .collect();
    Ok(BrownianPath {
        seed,
        t_final,
        increments,
    })
}

impl BrownianPath {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn num_modes(&self) -> usize {
        self.increments.len()
    }

    pub fn steps(&self) -> usize {
        self.increments.first().map_or(0, Vec::len)
    }

    /// Increments of one mode.
    pub fn mode(&self, mode: usize) -> &[f64] {
        &self.increments[mode]
    }

    /// SHA-256 (hex) of all increments as little-endian bytes, mode-major.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for row in &self.increments {
            for v in row {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Sums consecutive blocks of fine increments onto `m_coarse` steps.
    pub fn coarsen(&self, m_coarse: usize) -> Result<Increments> {
        let m = self.steps();
        if m_coarse == 0 || m % m_coarse != 0 {
            return Err(Error::invalid(format!(
                "coarse step count {m_coarse} does not divide {m}"
            )));
        }
        let r = m / m_coarse;
        let per_mode = self
            .increments
            .iter()
            .map(|row| {
                row.chunks(r)
                    .map(|c| c.iter().fold(0.0, |acc, v| acc + v))
                    .collect()
            })
            .collect();
        Ok(Increments::new(per_mode, self.t_final))
    }
}

/// Per-mode increments on one time grid together with the running sums
/// `W(t_m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Increments {
    t_final: f64,
    per_mode: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
}

impl Increments {
    pub fn new(per_mode: Vec<Vec<f64>>, t_final: f64) -> Self {
        let cumulative = per_mode
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                std::iter::once(0.0)
                    .chain(row.iter().map(|v| {
                        acc += v;
                        acc
                    }))
                    .collect()
            })
            .collect();
        Increments {
            t_final,
            per_mode,
            cumulative,
        }
    }

    /// All-zero increments (deterministic runs).
    pub fn zeros(num_modes: usize, steps: usize, t_final: f64) -> Self {
        Increments::new(vec![vec![0.0; steps]; num_modes], t_final)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn num_modes(&self) -> usize {
        self.per_mode.len()
    }

    pub fn steps(&self) -> usize {
        self.per_mode.first().map_or(0, Vec::len)
    }

    pub fn mode(&self, mode: usize) -> &[f64] {
        &self.per_mode[mode]
    }

    /// `Delta_m W` for steps `m = 1..=M`.
    pub fn increment(&self, m: usize) -> Vec<f64> {
        self.per_mode.iter().map(|row| row[m - 1]).collect()
    }

    /// `W(t_m)` for `m = 0..=M`.
    pub fn w_at(&self, m: usize) -> Vec<f64> {
        self.cumulative.iter().map(|row| row[m]).collect()
    }
}

/// Noise modes discretised on one finite element system: load vectors
/// `int psi_j . phi_i` and projections `Pi_h psi_j`.
#[derive(Clone, Debug)]
pub struct DiscreteNoise {
    sigma: Vec<f64>,
    loads: Vec<Vec<f64>>,
    projected: Vec<Vec<f64>>,
    model: NoiseModel,
}

impl DiscreteNoise {
    pub fn new(model: &NoiseModel, fem: &FemSystem) -> Self {
        let loads: Vec<Vec<f64>> = (0..model.num_modes())
            .map(|j| fem.load_vector(|x| model.psi(j, x)))
            .collect();
        let projected = loads
            .iter()
            .map(|l| fem.project_div_free_load(l).coeffs)
            .collect();
        DiscreteNoise {
            sigma: model.sigma.clone(),
            loads,
            projected,
            model: model.clone(),
        }
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn num_modes(&self) -> usize {
        self.sigma.len()
    }

    /// `Pi_h psi_j`.
    pub fn projected_mode(&self, j: usize) -> &[f64] {
        &self.projected[j]
    }

    /// `int psi_j . phi_i` over velocity basis functions.
    pub fn load(&self, j: usize) -> &[f64] {
        &self.loads[j]
    }

    /// Load vector of `Phi w`: `sum_j sigma_j w_j int psi_j . phi_i`.
    pub fn forcing(&self, w: &[f64]) -> Vec<f64> {
        combine(&self.sigma, w, &self.loads)
    }

    /// `Pi_h [Phi w]` and `||Phi w||_{W^{2,2}}` for mode amplitudes `w`.
    pub fn eval_phi_w(&self, w: &[f64]) -> (DiscreteField, f64) {
        (
            DiscreteField::velocity(combine(&self.sigma, w, &self.projected)),
            self.model.w22_norm(w),
        )
    }
}

fn combine(sigma: &[f64], w: &[f64], fields: &[Vec<f64>]) -> Vec<f64> {
    let n = fields.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for ((s, wj), f) in sigma.iter().zip(w).zip(fields) {
        let a = s * wj;
        if a != 0.0 {
            for (o, v) in out.iter_mut().zip(f) {
                *o += a * v;
            }
        }
    }
    out
}
