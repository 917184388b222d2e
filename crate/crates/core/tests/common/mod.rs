//! Independent numerical oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use panelstate::events::PatternRule;
use panelstate::model::{Dataset, ModelConfig, PatientRecord};
use panelstate::special::norm_cdf;
use std::f64::consts::PI;

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Scalar dynamic probit model with day 1 as the only treatment change:
/// `θ_0 ~ N(m0, s0)`, `θ_1 = g_star θ_0 + N(0, s0)`, `θ_{t+1} = g θ_t + N(0, w)`,
/// `P(y_t = 1) = Φ(mu + θ_t)`.
#[derive(Clone, Copy, Debug)]
pub struct Scalar {
    pub g: f64,
    pub g_star: f64,
    pub w: f64,
    pub s0: f64,
    pub m0: f64,
    pub mu: f64,
}

impl Scalar {
    pub fn config(&self) -> ModelConfig {
        let mut cfg = ModelConfig::with_dimension(1);
        cfg.g = DMatrix::from_element(1, 1, self.g);
        cfg.g_star = DMatrix::from_element(1, 1, self.g_star);
        cfg.w = DMatrix::from_element(1, 1, self.w);
        cfg.s0 = DMatrix::from_element(1, 1, self.s0);
        cfg.m0 = DVector::from_element(1, self.m0);
        cfg
    }

    /// Prior mean and variance of `θ_1`.
    pub fn day_one(&self) -> (f64, f64) {
        (self.g_star * self.m0, self.g_star * self.g_star * self.s0 + self.s0)
    }

    fn lik(&self, y: bool, theta: f64) -> f64 {
        norm_cdf(if y { self.mu + theta } else { -(self.mu + theta) })
    }
}

/// Trapezoid moments of an unnormalized density on `[-10, 10]` with step `1e-3`.
pub fn grid_moments(f: impl Fn(f64) -> f64) -> (f64, f64) {
    let h = 1e-3;
    let n = 20_000;
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for k in 0..=n {
        let x = -10.0 + k as f64 * h;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 } * f(x);
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Posterior mean and variance of `θ_t` (1-based `t` ≤ 2) given `y[..n_obs]`,
/// for series of at most two days. The one-dimensional integral over the other
/// day's state is done in closed form: `∫ N(x; m, v) Φ(s(mu + x)) dx = Φ(s(mu + m)/√(1 + v))`.
pub fn scalar_moments(model: &Scalar, y: &[bool], t: usize, n_obs: usize) -> (f64, f64) {
    assert!(n_obs <= y.len() && y.len() <= 2 && (1..=2).contains(&t) && t <= n_obs.max(t));
    let (a1, p1) = model.day_one();
    let sign = |b: bool| if b { 1.0 } else { -1.0 };
    match (t, n_obs) {
        (1, 0) => (a1, p1),
        (1, 1) => grid_moments(|x| normal_pdf(x, a1, p1) * model.lik(y[0], x)),
        (1, 2) => grid_moments(|x| {
            let ahead = norm_cdf(sign(y[1]) * (model.mu + model.g * x) / (1.0 + model.w).sqrt());
            normal_pdf(x, a1, p1) * model.lik(y[0], x) * ahead
        }),
        (2, n) => {
            // Joint Gaussian prior of (θ_1, θ_2), conditioned on θ_2.
            let b = model.g * a1;
            let q = model.g * model.g * p1 + model.w;
            let gain = model.g * p1 / q;
            let v = p1 - model.g * model.g * p1 * p1 / q;
            grid_moments(|x| {
                let m = a1 + gain * (x - b);
                let back = if n >= 1 {
                    norm_cdf(sign(y[0]) * (model.mu + m) / (1.0 + v).sqrt())
                } else {
                    1.0
                };
                let here = if n >= 2 { model.lik(y[1], x) } else { 1.0 };
                normal_pdf(x, b, q) * back * here
            })
        }
        _ => unreachable!(),
    }
}

/// Exact posterior of the two-subject toy with an intercept-only offset held at `mu`.
#[derive(Clone, Debug)]
pub struct ToyPosterior {
    /// Prior pattern probabilities under the reference model (same for both subjects).
    pub g: [f64; 2],
    /// `P(R_i = 1 | y)` for each subject.
    pub r_one: [f64; 2],
    /// `P(subjects share a cluster | y)`.
    pub together: f64,
    /// Joint posterior of `(R_1, R_2, together)`.
    pub joint: [[[f64; 2]; 2]; 2],
}

/// Grid forward recursion over `(θ_t, Σ_{u≤t} θ_u)`: returns the mass of each
/// mean-threshold pattern jointly with the outcomes (`y = None` gives the prior).
/// The threshold on the sum must sit midway between grid points.
pub fn pattern_masses(model: &Scalar, y: Option<&[bool]>, days: usize, cut: f64, h: f64, half_range: f64) -> [f64; 2] {
    let j_max = (half_range / h).round() as i64;
    let nj = (2 * j_max + 1) as usize;
    let ns = days * (nj - 1) + 1;
    let theta = |j: usize| (j as i64 - j_max) as f64 * h;
    let lik = |t: usize, x: f64| match y {
        Some(y) => model.lik(y[t], x),
        None => 1.0,
    };
    // Sum index s corresponds to Σ θ = (s - days·j_max)·h.
    let (a1, p1) = model.day_one();
    let mut alpha = vec![0.0; nj * ns];
    for j in 0..nj {
        let x = theta(j);
        alpha[j * ns + j] = normal_pdf(x, a1, p1) * h * lik(0, x);
    }
    let kernel: Vec<f64> = (0..nj)
        .flat_map(|j| (0..nj).map(move |k| (j, k)))
        .map(|(j, k)| normal_pdf(theta(k), model.g * theta(j), model.w) * h)
        .collect();
    for t in 1..days {
        let mut next = vec![0.0; nj * ns];
        let s_hi = t * (nj - 1);
        for j in 0..nj {
            let row = &alpha[j * ns..j * ns + s_hi + 1];
            if row.iter().all(|v| *v == 0.0) {
                continue;
            }
            for k in 0..nj {
                let c = kernel[j * nj + k] * lik(t, theta(k));
                if c < 1e-300 {
                    continue;
                }
                let dst = &mut next[k * ns + k..k * ns + k + s_hi + 1];
                for (d, a) in dst.iter_mut().zip(row) {
                    *d += c * a;
                }
            }
        }
        alpha = next;
    }
    let boundary = days as f64 * cut / h + (days as i64 * j_max) as f64;
    assert!(
        (boundary - boundary.floor() - 0.5).abs() < 1e-9,
        "threshold must fall midway between grid points"
    );
    let mut out = [0.0; 2];
    for j in 0..nj {
        for s in 0..ns {
            out[(s as f64 > boundary) as usize] += alpha[j * ns + s];
        }
    }
    out
}

/// Exact posterior of `(R_1, R_2, co-clustering)` for two subjects sharing `model`,
/// with a mean-threshold rule, Dirichlet(a) atoms, and a Pitman-Yor(σ, M) partition.
pub fn toy_posterior(
    model: &Scalar,
    ys: [&[bool]; 2],
    cut: f64,
    a: [f64; 2],
    py_m: f64,
    py_sigma: f64,
    h: f64,
) -> ToyPosterior {
    let days = ys[0].len();
    let range = 6.5;
    let g_mass = pattern_masses(model, None, days, cut, h, range);
    let total: f64 = g_mass.iter().sum();
    let g = [g_mass[0] / total, g_mass[1] / total];
    let z: Vec<[f64; 2]> = ys
        .iter()
        .map(|y| pattern_masses(model, Some(y), days, cut, h, range))
        .collect();
    let a_sum = a[0] + a[1];
    let p_together = (1.0 - py_sigma) / (py_m + 1.0);
    let p_apart = (py_m + py_sigma) / (py_m + 1.0);
    let mut joint = [[[0.0; 2]; 2]; 2];
    let mut norm = 0.0;
    for r1 in 0..2 {
        for r2 in 0..2 {
            let lik = z[0][r1] / g[r1] * z[1][r2] / g[r2];
            let same = a[r1] * (a[r2] + (r1 == r2) as u8 as f64) / (a_sum * (a_sum + 1.0));
            let apart = a[r1] / a_sum * a[r2] / a_sum;
            joint[r1][r2][1] = p_together * same * lik;
            joint[r1][r2][0] = p_apart * apart * lik;
            norm += joint[r1][r2][0] + joint[r1][r2][1];
        }
    }
    let mut r_one = [0.0; 2];
    let mut together = 0.0;
    for r1 in 0..2 {
        for r2 in 0..2 {
            for c in 0..2 {
                joint[r1][r2][c] /= norm;
                let p = joint[r1][r2][c];
                r_one[0] += p * r1 as f64;
                r_one[1] += p * r2 as f64;
                together += p * c as f64;
            }
        }
    }
    ToyPosterior {
        g,
        r_one,
        together,
        joint,
    }
}

/// The two-subject toy used by the brute-force checks.
pub struct Toy {
    pub model: Scalar,
    pub ys: [Vec<bool>; 2],
    pub cut: f64,
    pub delta: f64,
}

impl Toy {
    pub fn standard() -> Self {
        Self {
            model: Scalar {
                g: 0.9,
                g_star: 0.5,
                w: 0.3,
                s0: 0.5,
                m0: 0.0,
                mu: 0.1,
            },
            ys: [
                vec![true, true, false, true, true],
                vec![false, false, false, true, false],
            ],
            // Mean ≥ 0.105 ⇔ Σθ ≥ 0.525, midway between grid points at step 0.05.
            cut: 0.105,
            delta: 0.1,
        }
    }

    pub fn dataset(&self) -> Dataset {
        let records = self
            .ys
            .iter()
            .enumerate()
            .map(|(i, y)| {
                PatientRecord::with_changes(format!("t{i}"), y.iter().map(|v| Some(*v)).collect(), vec![1.0], &[1])
                    .unwrap()
            })
            .collect();
        Dataset::new(vec!["intercept".into()], records).unwrap()
    }

    /// Model configuration with a δ prior so tight that δ stays at `delta`.
    pub fn config(&self, particles: usize) -> ModelConfig {
        let mut cfg = self.model.config();
        cfg.patterns = PatternRule::MeanThreshold { cut: self.cut };
        cfg.dirichlet_a = vec![1.0 / 20.0; 2];
        cfg.n_particles = particles;
        cfg.delta_prior_mean = Some(DVector::from_element(1, self.delta));
        cfg.delta_prior_cov = Some(DMatrix::from_element(1, 1, 1e-12));
        cfg
    }

    pub fn posterior(&self, h: f64) -> ToyPosterior {
        let m = Scalar {
            mu: self.delta,
            ..self.model
        };
        toy_posterior(&m, [&self.ys[0], &self.ys[1]], self.cut, [0.05, 0.05], 10.0, -1.0, h)
    }
}

/// Mean and batch-means standard error of an autocorrelated series.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bm = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (mean, (var / batches as f64).sqrt())
}

/// Mean and standard error from independent replicate estimates.
pub fn replicate_mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
