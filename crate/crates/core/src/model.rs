//! Data model and the reference dynamic probit state-space model.

use crate::clustering::PitmanYor;
use crate::error::{Error, Result};
use crate::events::PatternRule;
use crate::linalg::{psd_factor, require_psd, require_spd, SparseMatrix};
use crate::special::log_norm_cdf;
use crate::stochastics::std_normal;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::collections::HashSet;

/// One subject's outcome series, covariates, and treatment history.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    /// Daily outcomes; `None` marks a missing day.
    pub y: Vec<Option<bool>>,
    /// Baseline covariates, intercept included.
    pub x: Vec<f64>,
    /// Sorted 1-based days on which treatment changes; always contains day 1.
    pub treatment_changes: Vec<usize>,
    /// Treatment label per day.
    pub treatment_id: Vec<String>,
}

impl PatientRecord {
    /// Build a record from per-day treatment labels; change days are the days
    /// where the label differs from the previous day, plus day 1.
    pub fn new(id: impl Into<String>, y: Vec<Option<bool>>, x: Vec<f64>, treatment_id: Vec<String>) -> Result<Self> {
        let mut changes = Vec::new();
        for t in 0..treatment_id.len() {
            if t == 0 || treatment_id[t] != treatment_id[t - 1] {
                changes.push(t + 1);
            }
        }
        let rec = Self {
            id: id.into(),
            y,
            x,
            treatment_changes: changes,
            treatment_id,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Build a record from explicit change days, labelling treatments `T1`, `T2`, ...
    pub fn with_changes(id: impl Into<String>, y: Vec<Option<bool>>, x: Vec<f64>, changes: &[usize]) -> Result<Self> {
        let mut sorted = changes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.first() != Some(&1) {
            sorted.insert(0, 1);
        }
        let mut labels = Vec::with_capacity(y.len());
        let mut k = 0;
        for t in 1..=y.len() {
            while k + 1 < sorted.len() && sorted[k + 1] <= t {
                k += 1;
            }
            labels.push(format!("T{}", k + 1));
        }
        let rec = Self {
            id: id.into(),
            y,
            x,
            treatment_changes: sorted,
            treatment_id: labels,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn days(&self) -> usize {
        self.y.len()
    }

    pub fn n_observed(&self) -> usize {
        self.y.iter().filter(|v| v.is_some()).count()
    }

    /// Last treatment change day.
    pub fn last_change(&self) -> usize {
        *self.treatment_changes.last().unwrap_or(&1)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.days();
        if t == 0 {
            return Err(Error::data(format!("subject {}: no days", self.id)));
        }
        if self.treatment_id.len() != t {
            return Err(Error::data(format!(
                "subject {}: {} treatment labels for {} days",
                self.id,
                self.treatment_id.len(),
                t
            )));
        }
        if self.treatment_changes.first() != Some(&1) {
            return Err(Error::data(format!(
                "subject {}: day 1 must be a treatment change",
                self.id
            )));
        }
        if self.treatment_changes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data(format!(
                "subject {}: treatment changes not strictly increasing",
                self.id
            )));
        }
        if let Some(&last) = self.treatment_changes.last() {
            if last > t {
                return Err(Error::DayOutOfRange { day: last, len: t });
            }
        }
        let change: HashSet<usize> = self.treatment_changes.iter().copied().collect();
        for d in 2..=t {
            if !change.contains(&d) && self.treatment_id[d - 1] != self.treatment_id[d - 2] {
                return Err(Error::data(format!(
                    "subject {}: treatment label changes on day {d}, which is not a change day",
                    self.id
                )));
            }
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("subject {}: non-finite covariate", self.id)));
        }
        Ok(())
    }

    pub fn timeline(&self) -> Timeline {
        Timeline::new(self.days(), &self.treatment_changes)
    }
}

/// Per-day change flags and days-since-change counts (0-based day index).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Timeline {
    pub since_change: Vec<usize>,
    pub is_change: Vec<bool>,
}

impl Timeline {
    pub fn new(days: usize, changes: &[usize]) -> Self {
        let mut since_change = vec![0; days];
        let mut is_change = vec![false; days];
        for &c in changes {
            if (1..=days).contains(&c) {
                is_change[c - 1] = true;
            }
        }
        // Day 1 always starts a treatment period.
        if days > 0 {
            is_change[0] = true;
        }
        let mut last = 0;
        for t in 0..days {
            if is_change[t] {
                last = t;
            }
            since_change[t] = t - last;
        }
        Self {
            since_change,
            is_change,
        }
    }

    pub fn days(&self) -> usize {
        self.is_change.len()
    }
}

/// Write `z = (1, Δ, 1, ..., 1)` into `z`.
#[inline]
pub(crate) fn fill_design(since_change: usize, z: &mut [f64]) {
    z.fill(1.0);
    if z.len() > 1 {
        z[1] = since_change as f64;
    }
}

/// Design vector `z_t` for 1-based day `t`.
pub fn design_vector(record: &PatientRecord, t: usize, p: usize) -> Result<DVector<f64>> {
    if t == 0 || t > record.days() {
        return Err(Error::DayOutOfRange {
            day: t,
            len: record.days(),
        });
    }
    let tl = record.timeline();
    let mut z = DVector::zeros(p);
    fill_design(tl.since_change[t - 1], z.as_mut_slice());
    Ok(z)
}

/// How trajectory propagation treats days with a missing outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MissingPropagation {
    /// `θ_t ~ N(G_t θ_{t-1}, W_t)`.
    #[default]
    ApplyTransition,
    /// `θ_t ~ N(θ_{t-1}, W_t)`, i.e. the transition matrix is skipped.
    Verbatim,
}

/// Every model hyperparameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub p: usize,
    pub g: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub g_star: DMatrix<f64>,
    pub s0: DMatrix<f64>,
    pub m0: DVector<f64>,
    /// Prior mean of δ; zeros of the covariate dimension when absent.
    pub delta_prior_mean: Option<DVector<f64>>,
    /// Prior covariance of δ; `10 I` when absent.
    pub delta_prior_cov: Option<DMatrix<f64>>,
    pub pitman_yor: PitmanYor,
    pub dirichlet_a: Vec<f64>,
    pub n_particles: usize,
    pub prior_mc_draws: usize,
    pub g_smoothing: f64,
    pub missing_propagation: MissingPropagation,
    pub patterns: PatternRule,
}

pub const DEFAULT_DELTA_PRIOR_SCALE: f64 = 10.0;

/// The default transition structure for state dimension `p`.
pub struct DefaultMatrices {
    pub g: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub g_star: DMatrix<f64>,
    pub s0: DMatrix<f64>,
}

impl DefaultMatrices {
    pub fn new(p: usize) -> Self {
        let mut g = DMatrix::zeros(p, p);
        for j in 0..p.min(2) {
            g[(j, j)] = 1.0;
        }
        // Row 3 stays zero; rows 4..p shift the previous component down.
        for j in 3..p {
            g[(j, j - 1)] = 1.0;
        }
        let w = DMatrix::from_diagonal(&DVector::from_fn(p, |j, _| match j {
            0 => 1e-3 / 3.0,
            1 => 1e-3 / (365.0 * 365.0),
            2 => 1e-2,
            _ => 1e-4,
        }));
        let mut g_star = DMatrix::zeros(p, p);
        for j in 0..p {
            g_star[(0, j)] = 1.0 / p as f64;
        }
        let s0 = DMatrix::from_diagonal(&DVector::from_fn(p, |j, _| if j < 2 { 1e-4 } else { 1e-2 }));
        Self { g, w, g_star, s0 }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_dimension(12)
    }
}

impl ModelConfig {
    /// Default configuration with state dimension `p`.
    pub fn with_dimension(p: usize) -> Self {
        let m = DefaultMatrices::new(p);
        Self {
            p,
            g: m.g,
            w: m.w,
            g_star: m.g_star,
            s0: m.s0,
            m0: DVector::zeros(p),
            delta_prior_mean: None,
            delta_prior_cov: None,
            pitman_yor: PitmanYor::default(),
            dirichlet_a: vec![1.0 / 20.0; 8],
            n_particles: 200,
            prior_mc_draws: 10_000,
            g_smoothing: 0.5,
            missing_propagation: MissingPropagation::ApplyTransition,
            patterns: PatternRule::default(),
        }
    }

    pub fn n_patterns(&self) -> usize {
        self.dirichlet_a.len()
    }

    /// Full validation, including strict positive definiteness of W and S0.
    pub fn validate(&self) -> Result<()> {
        self.validate_shapes()?;
        require_spd(&self.w, "W")?;
        require_spd(&self.s0, "S0")?;
        Ok(())
    }

    /// Validation that admits singular (PSD) W and S0.
    pub fn validate_shapes(&self) -> Result<()> {
        let p = self.p;
        if p == 0 {
            return Err(Error::config("p", "must be at least 1"));
        }
        for (name, m) in [
            ("G", &self.g),
            ("W", &self.w),
            ("G_star", &self.g_star),
            ("S0", &self.s0),
        ] {
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::config(
                    name,
                    format!("must be {p}x{p}, got {}x{}", m.nrows(), m.ncols()),
                ));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(name, "entries must be finite"));
            }
        }
        if self.m0.len() != p {
            return Err(Error::config("m0", format!("must have length {p}")));
        }
        require_psd(&self.w, "W")?;
        require_psd(&self.s0, "S0")?;
        self.pitman_yor.validate()?;
        if self.dirichlet_a.is_empty() || self.dirichlet_a.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::config("dirichlet_a", "entries must be strictly positive"));
        }
        let l = self.patterns.n_patterns();
        if self.dirichlet_a.len() != l {
            return Err(Error::config(
                "dirichlet_a",
                format!(
                    "length {} does not match the {l} patterns of the event rule",
                    self.dirichlet_a.len()
                ),
            ));
        }
        self.patterns.validate()?;
        if self.n_particles < 2 {
            return Err(Error::config("n_particles", "must be at least 2"));
        }
        if self.prior_mc_draws < 1000 {
            return Err(Error::config("prior_mc_draws", "must be at least 1000"));
        }
        if !(self.g_smoothing > 0.0 && self.g_smoothing.is_finite()) {
            return Err(Error::config("g_smoothing", "must be positive"));
        }
        if let Some(m) = &self.delta_prior_mean {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("delta_prior_mean", "entries must be finite"));
            }
        }
        if let Some(c) = &self.delta_prior_cov {
            require_spd(c, "delta_prior_cov")?;
        }
        Ok(())
    }

    /// Prior mean and covariance of δ for `d` covariates.
    pub fn delta_prior(&self, d: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mean = self.delta_prior_mean.clone().unwrap_or_else(|| DVector::zeros(d));
        let cov = self
            .delta_prior_cov
            .clone()
            .unwrap_or_else(|| DMatrix::identity(d, d) * DEFAULT_DELTA_PRIOR_SCALE);
        if mean.len() != d {
            return Err(Error::config(
                "delta_prior_mean",
                format!("must have length {d} (number of covariates)"),
            ));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::config(
                "delta_prior_cov",
                format!("must be {d}x{d} (number of covariates)"),
            ));
        }
        require_spd(&cov, "delta_prior_cov")?;
        Ok((mean, cov))
    }

    pub fn dynamics(&self) -> Result<Dynamics> {
        Dynamics::new(self)
    }
}

/// `(G_t, W_t)` for 1-based day `t`.
pub fn transition_at<'a>(
    config: &'a ModelConfig,
    record: &PatientRecord,
    t: usize,
) -> Result<(&'a DMatrix<f64>, &'a DMatrix<f64>)> {
    if t == 0 || t > record.days() {
        return Err(Error::DayOutOfRange {
            day: t,
            len: record.days(),
        });
    }
    if t == 1 || record.treatment_changes.binary_search(&t).is_ok() {
        Ok((&config.g_star, &config.s0))
    } else {
        Ok((&config.g, &config.w))
    }
}

/// One regime of the state equation in the form used by the filters.
#[derive(Clone, Debug)]
pub struct Regime {
    pub transition: SparseMatrix,
    pub transition_dense: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    pub cov_sparse: SparseMatrix,
    /// Lower factor with `factor factorᵀ = cov`.
    pub factor: SparseMatrix,
    /// Standard deviations when `cov` is diagonal.
    pub diag_sd: Option<Vec<f64>>,
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && m.iter()
            .enumerate()
            .all(|(k, v)| *v == 0.0 || k % m.nrows() == k / m.nrows())
}

impl Regime {
    fn new(g: &DMatrix<f64>, cov: &DMatrix<f64>) -> Self {
        let f = psd_factor(cov);
        Self {
            transition: SparseMatrix::from_dense(g),
            transition_dense: g.clone(),
            cov: cov.clone(),
            cov_sparse: SparseMatrix::from_dense(cov),
            factor: SparseMatrix::from_dense(&f.factor),
            diag_sd: is_diagonal(cov).then(|| cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()),
        }
    }

    /// `out = factor * e` with fresh standard normals in `e`.
    #[inline]
    pub(crate) fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R, e: &mut [f64], out: &mut [f64]) {
        for v in e.iter_mut() {
            *v = std_normal(rng);
        }
        self.factor.mul_into(e, out);
    }
}

/// Precomputed state-equation pieces shared by all subjects.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub p: usize,
    pub steady: Regime,
    pub change: Regime,
    pub m0: Vec<f64>,
    pub missing_propagation: MissingPropagation,
}

impl Dynamics {
    /// Accepts singular covariances, which give degenerate but valid dynamics.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate_shapes()?;
        Ok(Self {
            p: config.p,
            steady: Regime::new(&config.g, &config.w),
            change: Regime::new(&config.g_star, &config.s0),
            m0: config.m0.as_slice().to_vec(),
            missing_propagation: config.missing_propagation,
        })
    }

    #[inline]
    pub fn regime(&self, is_change: bool) -> &Regime {
        if is_change {
            &self.change
        } else {
            &self.steady
        }
    }

    /// Draw `θ_0 ~ N(m0, S0)` into `out`.
    pub(crate) fn draw_initial<R: Rng + ?Sized>(&self, rng: &mut R, e: &mut [f64], out: &mut [f64]) {
        self.change.draw_noise(rng, e, out);
        for (o, m) in out.iter_mut().zip(&self.m0) {
            *o += m;
        }
    }
}

/// A `T × p` trajectory stored row-major (one row per day).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    days: usize,
    dim: usize,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(days: usize, dim: usize) -> Self {
        Self {
            days,
            dim,
            values: vec![0.0; days * dim],
        }
    }

    pub fn from_values(days: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != days * dim {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs {} values, got {}",
                days * dim,
                values.len()
            )));
        }
        Ok(Self { days, dim, values })
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row for 0-based day index `t`.
    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `γ_t = z_tᵀ θ_t` for every day.
    pub fn gamma(&self, timeline: &Timeline) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        (0..self.days)
            .map(|t| {
                fill_design(timeline.since_change[t], &mut z);
                dot(&z, self.row(t))
            })
            .collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Current state of one subject in the sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectState {
    pub theta: Trajectory,
    pub gamma: Vec<f64>,
    pub pattern: usize,
    pub cluster: usize,
}

impl SubjectState {
    pub fn new(theta: Trajectory, record: &PatientRecord, rule: &PatternRule, cluster: usize) -> Self {
        let gamma = theta.gamma(&record.timeline());
        let pattern = rule.classify(&gamma, &record.treatment_changes);
        Self {
            theta,
            gamma,
            pattern,
            cluster,
        }
    }
}

/// Static probit coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalParams {
    pub delta: Vec<f64>,
}

impl GlobalParams {
    /// `μ_i = x_iᵀ δ`.
    pub fn offset(&self, record: &PatientRecord) -> f64 {
        dot(&record.x, &self.delta)
    }
}

/// A cohort of records sharing one covariate layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub covariate_names: Vec<String>,
    pub records: Vec<PatientRecord>,
}

impl Dataset {
    pub fn new(covariate_names: Vec<String>, records: Vec<PatientRecord>) -> Result<Self> {
        let ds = Self {
            covariate_names,
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::data("dataset has no subjects"));
        }
        let d = self.covariate_names.len();
        let mut ids = HashSet::new();
        for r in &self.records {
            r.validate()?;
            if r.x.len() != d {
                return Err(Error::data(format!(
                    "subject {}: {} covariates, expected {d}",
                    r.id,
                    r.x.len()
                )));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::data(format!("duplicate subject id {}", r.id)));
            }
        }
        Ok(())
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Probit log-likelihood of the observed days given `θ` and offset `mu`.
pub fn probit_loglik(record: &PatientRecord, theta: &Trajectory, mu: f64) -> Result<f64> {
    if theta.days() != record.days() {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {} rows, record has {} days",
            theta.days(),
            record.days()
        )));
    }
    let gamma = theta.gamma(&record.timeline());
    Ok(loglik_from_gamma(&record.y, &gamma, mu))
}

pub(crate) fn loglik_from_gamma(y: &[Option<bool>], gamma: &[f64], mu: f64) -> f64 {
    y.iter()
        .zip(gamma)
        .map(|(y, g)| match y {
            Some(true) => log_norm_cdf(mu + g),
            Some(false) => log_norm_cdf(-(mu + g)),
            None => 0.0,
        })
        .sum()
}

/// Draw a trajectory from the state equation.
pub fn simulate_prior_trajectory<R: Rng + ?Sized>(
    dynamics: &Dynamics,
    record: &PatientRecord,
    rng: &mut R,
) -> Trajectory {
    simulate_prior_days(dynamics, &record.timeline(), rng)
}

pub(crate) fn simulate_prior_days<R: Rng + ?Sized>(
    dynamics: &Dynamics,
    timeline: &Timeline,
    rng: &mut R,
) -> Trajectory {
    let p = dynamics.p;
    let days = timeline.days();
    let mut out = Trajectory::zeros(days, p);
    let mut prev = vec![0.0; p];
    let mut e = vec![0.0; p];
    let mut noise = vec![0.0; p];
    dynamics.draw_initial(rng, &mut e, &mut prev);
    for t in 0..days {
        let regime = dynamics.regime(timeline.is_change[t]);
        regime.draw_noise(rng, &mut e, &mut noise);
        let row = out.row_mut(t);
        regime.transition.mul_into(&prev, row);
        for (r, n) in row.iter_mut().zip(&noise) {
            *r += n;
        }
        prev.copy_from_slice(row);
    }
    out
}
