//! One-step lookahead particle filters for the dynamic probit model: the
//! marginal filter, the joint trajectory sampler used as the MH proposal, and
//! prior pattern probabilities by forward simulation.

use crate::error::{Error, Result};
use crate::events::PatternRule;
use crate::linalg::{clip_psd, psd_factor, SparseMatrix};
use crate::model::{dot, fill_design, loglik_from_gamma, Dynamics, PatientRecord, Timeline, Trajectory};
use crate::special::{log_norm_cdf, norm_cdf_fast};
use crate::stochastics::{effective_sample_size, std_normal, systematic_into, trunc_normal, TruncRegion};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Scratch buffers reused across filter calls to avoid reallocation.
#[derive(Clone, Debug, Default)]
pub struct FilterWorkspace {
    /// Particle states for days `0..=T`, laid out `[day][particle][component]`.
    states: Vec<f64>,
    /// Parent index at day `t - 1` of each particle at day `t`.
    ancestors: Vec<u32>,
    proj: Vec<f64>,
    r_pred: Vec<f64>,
    weights: Vec<f64>,
    resampled: Vec<usize>,
    z: Vec<f64>,
    cov_z: Vec<f64>,
    gain: Vec<f64>,
    e: Vec<f64>,
    noise: Vec<f64>,
}

impl FilterWorkspace {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Probit resampling weights `Φ(sign · r / scale)`; returns the log of their mean.
fn probit_weights(r_pred: &[f64], sign: f64, scale: f64, out: &mut Vec<f64>, day: usize) -> Result<f64> {
    out.clear();
    let mut max = 0.0f64;
    for &r in r_pred {
        let w = norm_cdf_fast(sign * r / scale);
        max = max.max(w);
        out.push(w);
    }
    if max.is_nan() || out.iter().any(|w| w.is_nan()) {
        return Err(Error::DegenerateWeights { day });
    }
    if max > 1e-250 {
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        return Ok(mean.ln());
    }
    // Deep tail: rescale in log space so the largest weight is one.
    let mut lmax = f64::NEG_INFINITY;
    for (w, &r) in out.iter_mut().zip(r_pred) {
        *w = log_norm_cdf(sign * r / scale);
        lmax = lmax.max(*w);
    }
    if !lmax.is_finite() {
        return Err(Error::DegenerateWeights { day });
    }
    for w in out.iter_mut() {
        *w = (*w - lmax).exp();
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    Ok(lmax + mean.ln())
}

fn check_particles(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 particles, got {n}")));
    }
    Ok(())
}

/// How the marginal filter handles a day with a missing outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MissingDays {
    /// Missing outcomes are an error.
    Reject,
    /// Skip the measurement update: the filtered distribution is the prediction.
    Predict,
}

/// Per-day particle sets from the marginal filter.
#[derive(Clone, Debug)]
pub struct MarginalFilterOutput {
    days: usize,
    dim: usize,
    particles: usize,
    samples: Vec<f64>,
    filtered_means: Vec<f64>,
    /// `P_{t|t-1}` for each day.
    pub pred_cov: Vec<DMatrix<f64>>,
    /// `P_{t|t}` for each day.
    pub filt_cov: Vec<DMatrix<f64>>,
    /// `S_{t|t-1}` for each day (`NaN` on skipped days).
    pub innovation_var: Vec<f64>,
    /// Kish effective sample size of the resampling weights (`NaN` on skipped days).
    pub ess: Vec<f64>,
}

impl MarginalFilterOutput {
    pub fn days(&self) -> usize {
        self.days
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    /// Sample `θ_t^{(r)}` for 0-based day `t`.
    pub fn sample(&self, t: usize, r: usize) -> &[f64] {
        let o = (t * self.particles + r) * self.dim;
        &self.samples[o..o + self.dim]
    }

    /// Filtered mean `a_{t|t}^{(r)}` for 0-based day `t`.
    pub fn filtered_mean(&self, t: usize, r: usize) -> &[f64] {
        let o = (t * self.particles + r) * self.dim;
        &self.filtered_means[o..o + self.dim]
    }

    /// Particle average of the samples on each day.
    pub fn mean_path(&self) -> Trajectory {
        self.average(&self.samples)
    }

    /// Particle average of the filtered means on each day.
    pub fn filtered_mean_path(&self) -> Trajectory {
        self.average(&self.filtered_means)
    }

    fn average(&self, v: &[f64]) -> Trajectory {
        let mut out = Trajectory::zeros(self.days, self.dim);
        for t in 0..self.days {
            let row = out.row_mut(t);
            for r in 0..self.particles {
                let o = (t * self.particles + r) * self.dim;
                for k in 0..self.dim {
                    row[k] += v[o + k];
                }
            }
            for x in row.iter_mut() {
                *x /= self.particles as f64;
            }
        }
        out
    }
}

/// Marginal filter on complete data: per-day samples from `p(θ_t | y_1:t)`.
pub fn marginal_filter<R: Rng + ?Sized>(
    record: &PatientRecord,
    dynamics: &Dynamics,
    offset: f64,
    n_particles: usize,
    rng: &mut R,
) -> Result<MarginalFilterOutput> {
    marginal_filter_with(record, dynamics, offset, n_particles, MissingDays::Reject, rng)
}

/// Marginal filter with an explicit policy for missing days.
pub fn marginal_filter_with<R: Rng + ?Sized>(
    record: &PatientRecord,
    dynamics: &Dynamics,
    offset: f64,
    n_particles: usize,
    missing: MissingDays,
    rng: &mut R,
) -> Result<MarginalFilterOutput> {
    check_particles(n_particles)?;
    if missing == MissingDays::Reject {
        if let Some(t) = record.y.iter().position(|y| y.is_none()) {
            return Err(Error::MissingOutcome { day: t + 1 });
        }
    }
    let p = dynamics.p;
    let n = n_particles;
    let days = record.days();
    let tl = record.timeline();

    let mut a: Vec<f64> = (0..n).flat_map(|_| dynamics.m0.iter().copied()).collect();
    let mut a_pred = vec![0.0; n * p];
    let mut r_pred = vec![0.0; n];
    let mut weights = Vec::with_capacity(n);
    let mut idx = Vec::with_capacity(n);
    let mut p_filt = dynamics.change.cov.clone();
    let mut z = vec![0.0; p];
    let mut e = vec![0.0; p];
    let mut x = vec![0.0; p];

    let mut out = MarginalFilterOutput {
        days,
        dim: p,
        particles: n,
        samples: vec![0.0; days * n * p],
        filtered_means: vec![0.0; days * n * p],
        pred_cov: Vec::with_capacity(days),
        filt_cov: Vec::with_capacity(days),
        innovation_var: Vec::with_capacity(days),
        ess: Vec::with_capacity(days),
    };

    for t in 0..days {
        let regime = dynamics.regime(tl.is_change[t]);
        let g = &regime.transition_dense;
        let p_pred = crate::linalg::symmetrize(&(g * &p_filt * g.transpose() + &regime.cov));
        for r in 0..n {
            regime
                .transition
                .mul_into(&a[r * p..(r + 1) * p], &mut a_pred[r * p..(r + 1) * p]);
        }
        let factor = SparseMatrix::from_dense(&psd_factor(&p_pred).factor);
        let base = t * n * p;

        match record.y[t] {
            None => {
                for r in 0..n {
                    let ap = &a_pred[r * p..(r + 1) * p];
                    for v in e.iter_mut() {
                        *v = std_normal(rng);
                    }
                    factor.mul_into(&e, &mut x);
                    let o = base + r * p;
                    out.filtered_means[o..o + p].copy_from_slice(ap);
                    for k in 0..p {
                        out.samples[o + k] = ap[k] + x[k];
                    }
                }
                a.copy_from_slice(&a_pred);
                p_filt = p_pred.clone();
                out.innovation_var.push(f64::NAN);
                out.ess.push(f64::NAN);
            }
            Some(y) => {
                fill_design(tl.since_change[t], &mut z);
                let zv = DVector::from_column_slice(&z);
                let pz = &p_pred * &zv;
                let s = zv.dot(&pz) + 1.0;
                let gain: Vec<f64> = pz.iter().map(|v| v / s).collect();
                let (clipped, neg) = clip_psd(&(&p_pred - &pz * pz.transpose() / s));
                if let Some(ev) = neg {
                    log::warn!(
                        "filtered covariance at day {} not PSD (eigenvalue {ev:e}); clipped",
                        t + 1
                    );
                }
                p_filt = clipped;

                for r in 0..n {
                    r_pred[r] = dot(&z, &a_pred[r * p..(r + 1) * p]) + offset;
                }
                let sign = if y { 1.0 } else { -1.0 };
                let sd = s.sqrt();
                probit_weights(&r_pred, sign, sd, &mut weights, t + 1)?;
                out.ess.push(effective_sample_size(&weights));
                if !systematic_into(&weights, n, rng.random::<f64>(), &mut idx) {
                    return Err(Error::DegenerateWeights { day: t + 1 });
                }
                let region = TruncRegion::for_outcome(y);
                for r in 0..n {
                    let par = idx[r];
                    let ap = &a_pred[par * p..(par + 1) * p];
                    let zeta = trunc_normal(r_pred[par], sd, region, rng);
                    let innov = zeta - r_pred[par];
                    for v in e.iter_mut() {
                        *v = std_normal(rng);
                    }
                    factor.mul_into(&e, &mut x);
                    let u = dot(&z, &x) + std_normal(rng);
                    let o = base + r * p;
                    for k in 0..p {
                        let mean = ap[k] + gain[k] * innov;
                        out.filtered_means[o + k] = mean;
                        out.samples[o + k] = mean + x[k] - gain[k] * u;
                    }
                }
                a.copy_from_slice(&out.filtered_means[base..base + n * p]);
                out.innovation_var.push(s);
            }
        }
        out.pred_cov.push(p_pred);
        out.filt_cov.push(p_filt.clone());
    }
    Ok(out)
}

/// Summary statistics of one joint-sampler run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointRunStats {
    /// Sum over observed days of the log mean resampling weight.
    pub log_evidence: f64,
    /// Smallest effective sample size over observed days.
    pub min_ess: f64,
    /// Observed days whose effective sample size fell below a tenth of the particles.
    pub low_ess_days: usize,
}

/// One trajectory drawn by the joint sampler.
#[derive(Clone, Debug)]
pub struct JointSample {
    pub theta: Trajectory,
    pub gamma: Vec<f64>,
    /// Probit log-likelihood of the returned trajectory at the offset used.
    pub loglik: f64,
    pub stats: JointRunStats,
}

/// Every final particle trajectory of one joint-sampler run (equally weighted).
#[derive(Clone, Debug)]
pub struct JointParticles {
    pub trajectories: Vec<Trajectory>,
    pub stats: JointRunStats,
}

/// Run the joint sampler and return one trajectory drawn uniformly from the final particles.
pub fn joint_trajectory_sample<R: Rng + ?Sized>(
    record: &PatientRecord,
    dynamics: &Dynamics,
    offset: f64,
    n_particles: usize,
    rng: &mut R,
    ws: &mut FilterWorkspace,
) -> Result<JointSample> {
    joint_sample_with_timeline(record, &record.timeline(), dynamics, offset, n_particles, rng, ws)
}

pub(crate) fn joint_sample_with_timeline<R: Rng + ?Sized>(
    record: &PatientRecord,
    timeline: &Timeline,
    dynamics: &Dynamics,
    offset: f64,
    n_particles: usize,
    rng: &mut R,
    ws: &mut FilterWorkspace,
) -> Result<JointSample> {
    let stats = run_joint(record, timeline, dynamics, offset, n_particles, rng, ws)?;
    let pick = rng.random_range(0..n_particles);
    let theta = trace(ws, record.days(), dynamics.p, n_particles, pick);
    let gamma = theta.gamma(timeline);
    let loglik = loglik_from_gamma(&record.y, &gamma, offset);
    Ok(JointSample {
        theta,
        gamma,
        loglik,
        stats,
    })
}

/// Run the joint sampler and return all final particle trajectories.
pub fn joint_trajectory_particles<R: Rng + ?Sized>(
    record: &PatientRecord,
    dynamics: &Dynamics,
    offset: f64,
    n_particles: usize,
    rng: &mut R,
    ws: &mut FilterWorkspace,
) -> Result<JointParticles> {
    let stats = run_joint(record, &record.timeline(), dynamics, offset, n_particles, rng, ws)?;
    let trajectories = (0..n_particles)
        .map(|r| trace(ws, record.days(), dynamics.p, n_particles, r))
        .collect();
    Ok(JointParticles { trajectories, stats })
}

fn trace(ws: &FilterWorkspace, days: usize, p: usize, n: usize, pick: usize) -> Trajectory {
    let mut theta = Trajectory::zeros(days, p);
    let mut cur = pick;
    for t in (1..=days).rev() {
        let o = (t * n + cur) * p;
        theta.row_mut(t - 1).copy_from_slice(&ws.states[o..o + p]);
        cur = ws.ancestors[(t - 1) * n + cur] as usize;
    }
    theta
}

fn run_joint<R: Rng + ?Sized>(
    record: &PatientRecord,
    timeline: &Timeline,
    dynamics: &Dynamics,
    offset: f64,
    n: usize,
    rng: &mut R,
    ws: &mut FilterWorkspace,
) -> Result<JointRunStats> {
    check_particles(n)?;
    let p = dynamics.p;
    let days = record.days();
    let layer = n * p;
    ws.states.resize((days + 1) * layer, 0.0);
    ws.ancestors.resize(days * n, 0);
    ws.proj.resize(p, 0.0);
    ws.r_pred.resize(n, 0.0);
    ws.z.resize(p, 0.0);
    ws.cov_z.resize(p, 0.0);
    ws.gain.resize(p, 0.0);
    ws.e.resize(p, 0.0);
    ws.noise.resize(p, 0.0);

    let FilterWorkspace {
        states,
        ancestors,
        proj,
        r_pred,
        weights,
        resampled,
        z,
        cov_z,
        gain,
        e,
        noise,
    } = ws;

    for r in 0..n {
        dynamics.draw_initial(rng, e, &mut states[r * p..(r + 1) * p]);
    }

    let mut stats = JointRunStats {
        log_evidence: 0.0,
        min_ess: n as f64,
        low_ess_days: 0,
    };
    let verbatim = dynamics.missing_propagation == crate::model::MissingPropagation::Verbatim;

    for t in 1..=days {
        let regime = dynamics.regime(timeline.is_change[t - 1]);
        let (done, rest) = states.split_at_mut(t * layer);
        let prev = &done[(t - 1) * layer..];
        let cur = &mut rest[..layer];
        let anc = &mut ancestors[(t - 1) * n..t * n];

        match record.y[t - 1] {
            None => {
                for r in 0..n {
                    let src = &prev[r * p..(r + 1) * p];
                    let dst = &mut cur[r * p..(r + 1) * p];
                    regime.draw_noise(rng, e, noise);
                    if verbatim {
                        dst.copy_from_slice(src);
                    } else {
                        regime.transition.mul_into(src, dst);
                    }
                    for (d, v) in dst.iter_mut().zip(noise.iter()) {
                        *d += v;
                    }
                    anc[r] = r as u32;
                }
            }
            Some(y) => {
                fill_design(timeline.since_change[t - 1], z);
                regime.cov_sparse.mul_into(z, cov_z);
                let s = dot(z, cov_z) + 1.0;
                for (g, c) in gain.iter_mut().zip(cov_z.iter()) {
                    *g = c / s;
                }
                // zᵀ(G θ) = (Gᵀ z)ᵀ θ, so the predictive means need one dot product each.
                for (j, hj) in proj.iter_mut().enumerate() {
                    *hj = (0..p).map(|i| regime.transition_dense[(i, j)] * z[i]).sum();
                }
                for (r, rp) in r_pred.iter_mut().enumerate() {
                    *rp = dot(proj, &prev[r * p..(r + 1) * p]) + offset;
                }
                let sign = if y { 1.0 } else { -1.0 };
                let sd = s.sqrt();
                stats.log_evidence += probit_weights(r_pred, sign, sd, weights, t)?;
                let ess = effective_sample_size(weights);
                stats.min_ess = stats.min_ess.min(ess);
                if ess < n as f64 / 10.0 {
                    stats.low_ess_days += 1;
                }
                if !systematic_into(weights, n, rng.random::<f64>(), resampled) {
                    return Err(Error::DegenerateWeights { day: t });
                }
                let region = TruncRegion::for_outcome(y);
                for r in 0..n {
                    let par = resampled[r];
                    let rp = r_pred[par];
                    let zeta = trunc_normal(rp, sd, region, rng);
                    let dst = &mut cur[r * p..(r + 1) * p];
                    regime.transition.mul_into(&prev[par * p..(par + 1) * p], dst);
                    // Mean update plus a draw from N(0, W - W z zᵀ W / S):
                    // add ε ~ N(0, W), then correct by the gain times (zᵀε + η).
                    let mut u = 0.0;
                    match &regime.diag_sd {
                        Some(sds) => {
                            for ((d, &sk), &zk) in dst.iter_mut().zip(sds).zip(z.iter()) {
                                let eps = sk * std_normal(rng);
                                *d += eps;
                                u += zk * eps;
                            }
                        }
                        None => {
                            regime.draw_noise(rng, e, noise);
                            for ((d, &eps), &zk) in dst.iter_mut().zip(noise.iter()).zip(z.iter()) {
                                *d += eps;
                                u += zk * eps;
                            }
                        }
                    }
                    u += std_normal(rng);
                    let c = (zeta - rp) - u;
                    for (d, g) in dst.iter_mut().zip(gain.iter()) {
                        *d += g * c;
                    }
                    anc[r] = par as u32;
                }
            }
        }
    }
    Ok(stats)
}

/// Smoothed prior probabilities of each pattern for one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorPatternTable {
    pub probs: Vec<f64>,
    pub counts: Vec<u64>,
    pub draws: usize,
}

impl PriorPatternTable {
    /// `(count + c) / (draws + c L)`.
    pub fn from_counts(counts: Vec<u64>, smoothing: f64) -> Self {
        let draws: u64 = counts.iter().sum();
        let denom = draws as f64 + smoothing * counts.len() as f64;
        let probs = counts.iter().map(|&c| (c as f64 + smoothing) / denom).collect();
        Self {
            probs,
            counts,
            draws: draws as usize,
        }
    }
}

/// Estimate pattern probabilities under the state equation alone.
pub fn estimate_prior_patterns<R: Rng + ?Sized>(
    record: &PatientRecord,
    dynamics: &Dynamics,
    rule: &PatternRule,
    n_draws: usize,
    smoothing: f64,
    rng: &mut R,
) -> Result<PriorPatternTable> {
    if n_draws < 1000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 1000 prior draws, got {n_draws}"
        )));
    }
    if !(smoothing > 0.0) {
        return Err(Error::InvalidArgument("smoothing constant must be positive".into()));
    }
    let timeline = record.timeline();
    let p = dynamics.p;
    let days = record.days();
    let mut counts = vec![0u64; rule.n_patterns()];
    let mut prev = vec![0.0; p];
    let mut cur = vec![0.0; p];
    let mut e = vec![0.0; p];
    let mut noise = vec![0.0; p];
    let mut z = vec![0.0; p];
    let mut gamma = vec![0.0; days];
    for _ in 0..n_draws {
        dynamics.draw_initial(rng, &mut e, &mut prev);
        for t in 0..days {
            let regime = dynamics.regime(timeline.is_change[t]);
            regime.transition.mul_into(&prev, &mut cur);
            regime.draw_noise(rng, &mut e, &mut noise);
            for (c, v) in cur.iter_mut().zip(&noise) {
                *c += v;
            }
            fill_design(timeline.since_change[t], &mut z);
            gamma[t] = dot(&z, &cur);
            std::mem::swap(&mut prev, &mut cur);
        }
        counts[rule.classify(&gamma, &record.treatment_changes)] += 1;
    }
    Ok(PriorPatternTable::from_counts(counts, smoothing))
}
