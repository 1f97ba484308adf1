//! Discrete stopping times evaluated after the fact on recorded step
//! diagnostics, and the decay of `P[s_R <= T]` along a threshold ladder.

use crate::schemes::StepDiagnostics;
use crate::{Error, Result};

/// Thresholds of the three stopping clauses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingConfig {
    /// `s_R`: `sum_{n=0}^m tau |u_n|^2 |grad u_n|^2 >= r1^4`.
    pub r1: f64,
    /// `t_R`: `|grad u_m|^2 + sum_{n=1}^m tau |A_h u_n|^2 >= r2^2`.
    pub r2: f64,
    /// Noise clause: `max_{n<=m} |Phi W(t_n)|_{W^{2,2}} >= k`.
    pub k: f64,
}

impl StoppingConfig {
    pub fn new(r1: f64, r2: f64, k: f64) -> Result<Self> {
        for (name, v) in [("r1", r1), ("r2", r2), ("k", k)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("stopping threshold {name} must be positive, got {v}")));
            }
        }
        Ok(Self { r1, r2, k })
    }

    /// All clauses driven by one `R`, with `K(R) = R^2`.
    pub fn from_r(r: f64) -> Result<Self> {
        Self::new(r, r, r * r)
    }
}

/// Which clauses fired (reached their threshold at some grid time).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StoppedFlags {
    pub s: bool,
    pub t: bool,
    pub noise: bool,
}

impl StoppedFlags {
    pub fn any(&self) -> bool {
        self.s || self.t || self.noise
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoppingReport {
    /// Number of steps `M`.
    pub steps: usize,
    /// First index at which the `s` clause holds, else `M`.
    pub s_index: usize,
    /// First index at which the `t` clause holds, else `M`.
    pub t_index: usize,
    /// First index at which the noise clause holds, else `M`.
    pub noise_index: usize,
    /// Minimum of the three.
    pub tilde_index: usize,
    pub stopped: StoppedFlags,
    /// Running `sum_{n=0}^m tau |u_n|^2 |grad u_n|^2`, one entry per grid point.
    pub s_accumulator: Vec<f64>,
    /// `|grad u_m|^2 + sum_{n=1}^m tau |A_h u_n|^2`.
    pub t_accumulator: Vec<f64>,
    /// Running maximum of `|Phi W(t_n)|_{W^{2,2}}`.
    pub noise_sup: Vec<f64>,
}

/// Running accumulators of the three clauses over `diags` (`m = 0..=M`).
pub fn accumulators(diags: &[StepDiagnostics]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if diags.len() < 2 {
        return Err(Error::invalid("stopping needs the initial state and at least one step"));
    }
    let steps = diags.len() - 1;
    let tau = diags[steps].t / steps as f64;
    let mut s = Vec::with_capacity(diags.len());
    let mut t = Vec::with_capacity(diags.len());
    let mut sup = Vec::with_capacity(diags.len());
    let (mut s_sum, mut a_sum, mut w_max) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (m, d) in diags.iter().enumerate() {
        if d.m != m {
            return Err(Error::invalid(format!("diagnostics out of order: row {m} has step {}", d.m)));
        }
        s_sum += tau * d.energy * d.enstrophy;
        if m > 0 {
            a_sum += tau * d.stokes_norm_sq;
        }
        w_max = w_max.max(d.noise_w22);
        s.push(s_sum);
        t.push(d.enstrophy + a_sum);
        sup.push(w_max);
    }
    Ok((s, t, sup))
}

fn first_hit(values: &[f64], threshold: f64) -> Option<usize> {
    values.iter().position(|&v| v >= threshold)
}

/// Evaluates the stopping clauses on a complete trajectory's diagnostics.
pub fn evaluate_stopping(diags: &[StepDiagnostics], cfg: &StoppingConfig) -> Result<StoppingReport> {
    let (s_acc, t_acc, sup) = accumulators(diags)?;
    Ok(report_from(s_acc, t_acc, sup, cfg))
}

/// Same as [`evaluate_stopping`] on precomputed accumulators.
pub fn report_from(s_acc: Vec<f64>, t_acc: Vec<f64>, sup: Vec<f64>, cfg: &StoppingConfig) -> StoppingReport {
    let steps = s_acc.len() - 1;
    let s = first_hit(&s_acc, cfg.r1.powi(4));
    let t = first_hit(&t_acc, cfg.r2 * cfg.r2);
    let w = first_hit(&sup, cfg.k);
    let s_index = s.unwrap_or(steps);
    let t_index = t.unwrap_or(steps);
    let noise_index = w.unwrap_or(steps);
    StoppingReport {
        steps,
        s_index,
        t_index,
        noise_index,
        tilde_index: s_index.min(t_index).min(noise_index),
        stopped: StoppedFlags { s: s.is_some(), t: t.is_some(), noise: w.is_some() },
        s_accumulator: s_acc,
        t_accumulator: t_acc,
        noise_sup: sup,
    }
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Least-squares line through `(x, y)`: `(slope, intercept, r2)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, intercept, r2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayRow {
    pub r: f64,
    pub stopped: usize,
    pub samples: usize,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayStudy {
    pub rows: Vec<DecayRow>,
    /// Frequencies never increase along the ladder.
    pub nonincreasing: bool,
    /// Each frequency is at most the previous row's upper Wilson bound.
    pub nonincreasing_within_ci: bool,
    /// Slope of `log frequency` against `log R` over rows with
    /// `0 < frequency < 0.5`, when at least two such rows exist.
    pub tail_slope: Option<f64>,
}

/// Empirical `P[s_R <= T]` (the `s` clause fires on `[0, T]`) along an
/// increasing ladder of `R1`, one accumulator set per sample.
pub fn stopping_decay_study(r_ladder: &[f64], samples: &[Vec<f64>]) -> Result<DecayStudy> {
    if samples.len() < 50 {
        return Err(Error::invalid(format!("decay study needs at least 50 samples, got {}", samples.len())));
    }
    if r_ladder.is_empty() || r_ladder.windows(2).any(|w| w[1] <= w[0]) || r_ladder[0] <= 0.0 {
        return Err(Error::invalid("R ladder must be positive and strictly increasing"));
    }
    let n = samples.len();
    let rows: Vec<DecayRow> = r_ladder
        .iter()
        .map(|&r| {
            let threshold = r.powi(4);
            let stopped = samples.iter().filter(|acc| first_hit(acc, threshold).is_some()).count();
            let (ci_low, ci_high) = wilson_interval(stopped, n, Z95);
            DecayRow { r, stopped, samples: n, frequency: stopped as f64 / n as f64, ci_low, ci_high }
        })
        .collect();
    let nonincreasing = rows.windows(2).all(|w| w[1].frequency <= w[0].frequency);
    let nonincreasing_within_ci = rows.windows(2).all(|w| w[1].frequency <= w[0].ci_high);
    let tail: Vec<&DecayRow> = rows.iter().filter(|r| r.frequency > 0.0 && r.frequency < 0.5).collect();
    let tail_slope = if tail.len() >= 2 {
        let x: Vec<f64> = tail.iter().map(|r| r.r.ln()).collect();
        let y: Vec<f64> = tail.iter().map(|r| r.frequency.ln()).collect();
        fit_line(&x, &y).map(|f| f.0)
    } else {
        None
    };
    Ok(DecayStudy { rows, nonincreasing, nonincreasing_within_ci, tail_slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(m: usize, t: f64, energy: f64, enstrophy: f64, a: f64, w: f64) -> StepDiagnostics {
        StepDiagnostics {
            m,
            t,
            energy,
            enstrophy,
            stokes_norm_sq: a,
            div_residual: 0.0,
            energy_identity_residual: 0.0,
            transform_gap: None,
            noise_w22: w,
            pressure_grad_tau: 0.0,
            pressure_mean: 0.0,
        }
    }

    #[test]
    fn zero_data_never_stops() {
        let d: Vec<_> = (0..=8).map(|m| diag(m, m as f64 / 8.0, 0.0, 0.0, 0.0, 0.0)).collect();
        let r = evaluate_stopping(&d, &StoppingConfig::from_r(1.0).unwrap()).unwrap();
        assert_eq!((r.s_index, r.t_index, r.noise_index, r.tilde_index), (8, 8, 8, 8));
        assert!(!r.stopped.any());
    }

    #[test]
    fn accumulators_by_hand() {
        let d = vec![
            diag(0, 0.0, 1.0, 2.0, 5.0, 0.0),
            diag(1, 0.5, 2.0, 3.0, 4.0, 1.5),
            diag(2, 1.0, 1.0, 1.0, 2.0, 0.5),
        ];
        let (s, t, w) = accumulators(&d).unwrap();
        assert_eq!(s, vec![1.0, 4.0, 4.5]);
        assert_eq!(t, vec![2.0, 5.0, 4.0]);
        assert_eq!(w, vec![0.0, 1.5, 1.5]);
        let r = evaluate_stopping(&d, &StoppingConfig::new(1.25, 2.0, 10.0).unwrap()).unwrap();
        assert_eq!((r.s_index, r.t_index, r.noise_index, r.tilde_index), (1, 1, 2, 1));
        assert_eq!(r.stopped, StoppedFlags { s: true, t: true, noise: false });
    }

    #[test]
    fn tiny_threshold_stops_at_once() {
        let d = vec![diag(0, 0.0, 1.0, 1.0, 1.0, 0.0), diag(1, 0.1, 1.0, 1.0, 1.0, 0.0)];
        let r = evaluate_stopping(&d, &StoppingConfig::new(1e-6, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(r.s_index, 0);
    }

    #[test]
    fn rejects_nonpositive_thresholds() {
        assert!(StoppingConfig::new(0.0, 1.0, 1.0).is_err());
        assert!(StoppingConfig::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100, Z95);
        assert!(lo.abs() < 1e-15);
        assert!((hi - 0.036994).abs() < 1e-5);
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((lo - 0.403832).abs() < 1e-5 && (hi - 0.596168).abs() < 1e-5);
    }

    #[test]
    fn line_fit_exact() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, -1.0, -3.0];
        let (s, i, r2) = fit_line(&x, &y).unwrap();
        assert!((s + 2.0).abs() < 1e-15 && (i - 1.0).abs() < 1e-15 && (r2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decay_study_counts() {
        let samples: Vec<Vec<f64>> = (0..60).map(|k| vec![0.0, k as f64]).collect();
        let study = stopping_decay_study(&[1.0, 2.0, 3.0], &samples).unwrap();
        let counts: Vec<usize> = study.rows.iter().map(|r| r.stopped).collect();
        assert_eq!(counts, vec![59, 44, 0]);
        assert!(study.nonincreasing);
        assert!(stopping_decay_study(&[1.0], &samples[..10]).is_err());
    }
}
