//! Metropolis-within-Gibbs sampler over trajectories, patterns, partition,
//! atoms, and static coefficients.

mod init;
mod store;

pub use init::{initialize, probit_mle, ChainState};
pub use store::{ChainDiagnostics, ChainStore, Draw, McmcSettings, MemoryThetaSink, ThetaSink};

use crate::clustering::{birth_atom, update_atom, Allocation, ClusterRegistry};
use crate::error::{Error, Result};
use crate::model::{Dataset, Dynamics, ModelConfig, PatientRecord, SubjectState, Timeline, Trajectory};
use crate::particle_filter::{
    estimate_prior_patterns, joint_sample_with_timeline, FilterWorkspace, JointRunStats, PriorPatternTable,
};
use crate::stochastics::{trunc_normal, RngStream, TruncRegion};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    // Particle storage is a few megabytes per subject; keep one buffer per thread.
    static WORKSPACE: std::cell::RefCell<FilterWorkspace> = std::cell::RefCell::new(FilterWorkspace::new());
}

/// What a random stream is used for; part of every stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Purpose {
    Init = 1,
    Proposal = 2,
    Accept = 3,
    Atoms = 4,
    Delta = 5,
    PriorTable = 6,
    Reference = 7,
}

pub(crate) fn stream(seed: u64, chain: usize, sweep: usize, subject: usize, purpose: Purpose) -> RngStream {
    RngStream::keyed(seed, &[chain as u64, sweep as u64, subject as u64, purpose as u64])
}

/// Model pieces shared by every chain: data, dynamics, prior pattern tables,
/// and the fixed part of the δ update.
pub struct Model<'a> {
    pub dataset: &'a Dataset,
    pub config: &'a ModelConfig,
    pub dynamics: Dynamics,
    pub timelines: Vec<Timeline>,
    pub g_tables: Vec<Arc<PriorPatternTable>>,
    delta: DeltaUpdater,
}

impl<'a> Model<'a> {
    /// Build the model, estimating the prior pattern tables with streams derived from `seed`.
    pub fn new(dataset: &'a Dataset, config: &'a ModelConfig, seed: u64) -> Result<Self> {
        let dynamics = config.dynamics()?;
        let tables = prior_tables(dataset, config, &dynamics, seed)?;
        Self::with_tables(dataset, config, tables)
    }

    /// Build the model with given per-subject prior pattern tables.
    pub fn with_tables(
        dataset: &'a Dataset,
        config: &'a ModelConfig,
        g_tables: Vec<Arc<PriorPatternTable>>,
    ) -> Result<Self> {
        config.validate_shapes()?;
        dataset.validate()?;
        if g_tables.len() != dataset.len() {
            return Err(Error::InvalidArgument(
                "one prior pattern table per subject is required".into(),
            ));
        }
        for t in &g_tables {
            if t.probs.len() != config.n_patterns() || t.probs.iter().any(|p| !(*p > 0.0)) {
                return Err(Error::InvalidArgument(
                    "prior pattern probabilities must be positive".into(),
                ));
            }
        }
        let (d0, cov) = config.delta_prior(dataset.n_covariates())?;
        Ok(Self {
            dataset,
            config,
            dynamics: config.dynamics()?,
            timelines: dataset.records.iter().map(|r| r.timeline()).collect(),
            g_tables,
            delta: DeltaUpdater::new(dataset, &d0, &cov)?,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.dataset.len()
    }
}

/// Prior pattern tables for every subject. Subjects with the same length and
/// treatment-change days share one table.
pub fn prior_tables(
    dataset: &Dataset,
    config: &ModelConfig,
    dynamics: &Dynamics,
    seed: u64,
) -> Result<Vec<Arc<PriorPatternTable>>> {
    let key = |r: &PatientRecord| (r.days(), r.treatment_changes.clone());
    let mut unique: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut index = HashMap::new();
    for r in &dataset.records {
        let k = key(r);
        if !index.contains_key(&k) {
            index.insert(k.clone(), unique.len());
            unique.push(k);
        }
    }
    let tables: Vec<Arc<PriorPatternTable>> = unique
        .par_iter()
        .map(|(days, changes)| {
            let rec = PatientRecord::with_changes("prior", vec![None; *days], vec![], changes)?;
            let mut parts = vec![*days as u64];
            parts.extend(changes.iter().map(|c| *c as u64));
            let mut rng = RngStream::new(
                seed,
                crate::stochastics::stream_key(&parts) ^ Purpose::PriorTable as u64,
            );
            estimate_prior_patterns(
                &rec,
                dynamics,
                &config.patterns,
                config.prior_mc_draws,
                config.g_smoothing,
                &mut rng,
            )
            .map(Arc::new)
        })
        .collect::<Result<_>>()?;
    Ok(dataset.records.iter().map(|r| tables[index[&key(r)]].clone()).collect())
}

/// A candidate `(θ, γ, R)` for one subject.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub theta: Trajectory,
    pub gamma: Vec<f64>,
    pub pattern: usize,
    /// Offset `x_iᵀδ` the proposal was generated with.
    pub offset: f64,
    pub stats: JointRunStats,
}

/// Draw a proposal for subject `i` from the joint trajectory sampler.
pub fn propose<R: Rng + ?Sized>(
    model: &Model<'_>,
    i: usize,
    offset: f64,
    rng: &mut R,
    ws: &mut FilterWorkspace,
) -> Result<Proposal> {
    let rec = &model.dataset.records[i];
    let s = joint_sample_with_timeline(
        rec,
        &model.timelines[i],
        &model.dynamics,
        offset,
        model.config.n_particles,
        rng,
        ws,
    )?;
    let pattern = model.config.patterns.classify(&s.gamma, &rec.treatment_changes);
    Ok(Proposal {
        theta: s.theta,
        gamma: s.gamma,
        pattern,
        offset,
        stats: s.stats,
    })
}

/// `min{1, (p_{ℓ'} / p_ℓ) (g_ℓ / g_{ℓ'})}`, and exactly 1 when `ℓ' = ℓ`.
pub fn acceptance_probability(p: &[f64], g: &[f64], current: usize, proposed: usize) -> f64 {
    if current == proposed {
        return 1.0;
    }
    let num = p[proposed] * g[current];
    let den = p[current] * g[proposed];
    if den > 0.0 {
        (num / den).min(1.0)
    } else if num > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Result of one subject's Metropolis-Hastings step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhOutcome {
    pub accepted: bool,
    pub alpha: f64,
    pub allocation: Option<Allocation>,
}

/// Metropolis-Hastings update of `(θ_i, R_i, ρ_i)` given a proposal.
///
/// `offset` must be the subject's current `x_iᵀδ`; the likelihood cancels from
/// the ratio only because the proposal used the same value.
#[allow(clippy::too_many_arguments)]
pub fn mh_update_subject<R: Rng + ?Sized>(
    i: usize,
    proposal: Proposal,
    offset: f64,
    subjects: &mut [SubjectState],
    registry: &mut ClusterRegistry,
    config: &ModelConfig,
    g: &PriorPatternTable,
    rng: &mut R,
) -> Result<MhOutcome> {
    if proposal.offset.to_bits() != offset.to_bits() {
        return Err(Error::Runtime(format!(
            "proposal offset {} differs from current offset {offset} for subject {i}",
            proposal.offset
        )));
    }
    let py = &config.pitman_yor;
    let a = &config.dirichlet_a;
    let detached = registry.detach(i);
    let current = subjects[i].pattern;
    let p = registry.predictive_pattern_probs(py, a);
    let alpha = acceptance_probability(&p, &g.probs, current, proposal.pattern);
    let u: f64 = rng.random();
    if !(u < alpha) {
        registry.restore(detached);
        return Ok(MhOutcome {
            accepted: false,
            alpha,
            allocation: None,
        });
    }
    let allocation = registry.conditional_allocation(py, a, proposal.pattern, rng);
    match allocation {
        Allocation::Existing(h) | Allocation::Fallback(h) => registry.attach(i, h),
        Allocation::New => {
            let atom = birth_atom(proposal.pattern, a, rng);
            registry.attach_new(i, atom, py)?;
        }
    }
    let s = &mut subjects[i];
    s.theta = proposal.theta;
    s.gamma = proposal.gamma;
    s.pattern = proposal.pattern;
    Ok(MhOutcome {
        accepted: true,
        alpha,
        allocation: Some(allocation),
    })
}

/// Fixed part of the δ conditional: `Q = XᵀX + D0⁻¹` and `D0⁻¹ d0`.
struct DeltaUpdater {
    chol: Cholesky<f64, Dyn>,
    prior_term: DVector<f64>,
}

impl DeltaUpdater {
    fn new(dataset: &Dataset, d0: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let d = dataset.n_covariates();
        let prior_prec = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite {
                matrix: "delta_prior_cov".into(),
                eigenvalue: crate::linalg::min_eigenvalue(cov),
            })?
            .inverse();
        let mut q = prior_prec.clone();
        for r in &dataset.records {
            let n = r.n_observed() as f64;
            if n > 0.0 {
                let x = DVector::from_column_slice(&r.x);
                q += &x * x.transpose() * n;
            }
        }
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::Runtime("δ posterior precision is singular".into()))?;
        debug_assert_eq!(d, d0.len());
        Ok(Self {
            chol,
            prior_term: prior_prec * d0,
        })
    }

    fn draw<R: Rng + ?Sized>(&self, dataset: &Dataset, gammas: &[&[f64]], delta: &[f64], rng: &mut R) -> Vec<f64> {
        let mut b = self.prior_term.clone();
        for (rec, gamma) in dataset.records.iter().zip(gammas) {
            let mu = crate::model::dot(&rec.x, delta);
            let mut resid = 0.0;
            for (y, g) in rec.y.iter().zip(gamma.iter()) {
                if let Some(y) = y {
                    let mean = mu + g;
                    let zeta = trunc_normal(mean, 1.0, TruncRegion::for_outcome(*y), rng);
                    resid += zeta - g;
                }
            }
            for (bk, xk) in b.iter_mut().zip(&rec.x) {
                *bk += xk * resid;
            }
        }
        let mean = self.chol.solve(&b);
        let e = DVector::from_fn(mean.len(), |_, _| crate::stochastics::std_normal(rng));
        // Q = L Lᵀ, so L⁻ᵀ e has covariance Q⁻¹.
        let l = self.chol.l();
        let dev = l
            .transpose()
            .solve_upper_triangular(&e)
            .expect("Cholesky factor is nonsingular");
        (mean + dev).iter().copied().collect()
    }
}

/// One Gibbs draw of δ by probit data augmentation, with prior `N(d0, D0)`.
pub fn gibbs_update_delta<R: Rng + ?Sized>(
    dataset: &Dataset,
    gammas: &[&[f64]],
    delta: &[f64],
    d0: &DVector<f64>,
    d0_cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    crate::linalg::require_spd(d0_cov, "delta_prior_cov")?;
    if gammas.len() != dataset.len() || delta.len() != dataset.n_covariates() || d0.len() != delta.len() {
        return Err(Error::InvalidArgument("dimension mismatch in δ update".into()));
    }
    Ok(DeltaUpdater::new(dataset, d0, d0_cov)?.draw(dataset, gammas, delta, rng))
}

/// Partial results of a chain that stopped on an error.
#[derive(Debug)]
pub struct ChainFailure {
    pub error: Error,
    pub partial: ChainStore,
}

/// One full sweep: subject MH updates in index order, atom updates, then δ.
pub fn sweep(
    model: &Model<'_>,
    state: &mut ChainState,
    seed: u64,
    chain: usize,
    it: usize,
    sequential: bool,
    store: &mut ChainStore,
) -> Result<()> {
    let n = model.n_subjects();
    let offsets: Vec<f64> = model.dataset.records.iter().map(|r| state.params.offset(r)).collect();
    let make = |i: usize| -> Result<Proposal> {
        let mut rng = stream(seed, chain, it, i, Purpose::Proposal);
        WORKSPACE.with_borrow_mut(|ws| propose(model, i, offsets[i], &mut rng, ws))
    };
    let mut batch: Vec<Option<Proposal>> = if sequential {
        (0..n).map(|_| None).collect()
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| make(i).map(Some))
            .collect::<Result<_>>()?
    };
    for i in 0..n {
        let proposal = match batch[i].take() {
            Some(p) => p,
            None => make(i)?,
        };
        let diag = &mut store.diagnostics;
        diag.proposals += 1;
        diag.min_ess = diag.min_ess.min(proposal.stats.min_ess);
        if proposal.stats.low_ess_days > 0 {
            diag.low_ess_proposals += 1;
            diag.low_ess_days += proposal.stats.low_ess_days as u64;
        }
        let mut rng = stream(seed, chain, it, i, Purpose::Accept);
        let out = mh_update_subject(
            i,
            proposal,
            offsets[i],
            &mut state.subjects,
            &mut state.registry,
            model.config,
            &model.g_tables[i],
            &mut rng,
        )?;
        store.proposed[i] += 1;
        if out.accepted {
            store.accepted[i] += 1;
        }
        if matches!(out.allocation, Some(Allocation::Fallback(_))) {
            store.diagnostics.fallback_allocations += 1;
        }
        let h = state.registry.n_clusters();
        store.diagnostics.max_clusters = store.diagnostics.max_clusters.max(h);
        if let Some(cap) = model.config.pitman_yor.cap() {
            if h > cap {
                return Err(Error::ClusterCapExceeded { cap });
            }
        }
    }

    let patterns: Vec<usize> = state.subjects.iter().map(|s| s.pattern).collect();
    let mut rng = stream(seed, chain, it, 0, Purpose::Atoms);
    for h in 0..state.registry.n_clusters() {
        let counts = state.registry.pattern_counts(h, &patterns);
        let atom = update_atom(&counts, &model.config.dirichlet_a, &mut rng);
        state.registry.set_atom(h, atom);
    }

    let mut rng = stream(seed, chain, it, 0, Purpose::Delta);
    let gammas: Vec<&[f64]> = state.subjects.iter().map(|s| s.gamma.as_slice()).collect();
    state.params.delta = model.delta.draw(model.dataset, &gammas, &state.params.delta, &mut rng);
    for (i, s) in state.subjects.iter_mut().enumerate() {
        s.cluster = state.registry.assignment(i).expect("assigned after sweep");
    }
    Ok(())
}

/// Run one chain from initialization through the last sweep.
pub fn run_chain(
    model: &Model<'_>,
    settings: &McmcSettings,
    chain: usize,
    mut theta_sink: Option<&mut dyn ThetaSink>,
) -> std::result::Result<ChainStore, Box<ChainFailure>> {
    let ids = model.dataset.records.iter().map(|r| r.id.clone()).collect();
    let mut store = ChainStore::new(chain, ids, model.config.n_patterns());
    let fail = |error: Error, store: ChainStore| Box::new(ChainFailure { error, partial: store });
    if let Err(e) = settings.validate() {
        return Err(fail(e, store));
    }
    let mut state = match initialize(model, settings.seed, chain) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, store)),
    };
    store.diagnostics.delta_init_fallback = state.delta_fallback;
    store.diagnostics.max_clusters = state.registry.n_clusters();
    for it in 1..=settings.n_iter {
        if let Err(e) = sweep(
            model,
            &mut state,
            settings.seed,
            chain,
            it,
            settings.sequential,
            &mut store,
        ) {
            return Err(fail(e, store));
        }
        store.diagnostics.sweeps_completed = it;
        if settings.is_retained(it) {
            let k = store.draws.len();
            store.draws.push(Draw {
                iteration: it,
                delta: state.params.delta.clone(),
                patterns: state.subjects.iter().map(|s| s.pattern).collect(),
                labels: state.registry.labels(),
                atoms: state.registry.atoms().to_vec(),
            });
            if let Some(sink) = theta_sink.as_deref_mut() {
                if settings.keeps_theta(k) {
                    for (i, s) in state.subjects.iter().enumerate() {
                        if let Err(e) = sink.push(k, i, &s.theta) {
                            return Err(fail(e, store));
                        }
                    }
                }
            }
        }
    }
    if store.diagnostics.low_ess_proposals > 0 {
        log::warn!(
            "chain {chain}: {} of {} proposals had days with effective sample size below R/10",
            store.diagnostics.low_ess_proposals,
            store.diagnostics.proposals
        );
    }
    Ok(store)
}

/// Pattern frequencies under the reference model alone: `draws` independent
/// joint-sampler trajectories per subject at a fixed δ, with no clustering.
pub fn reference_pattern_posterior(model: &Model<'_>, delta: &[f64], draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if draws == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    if delta.len() != model.dataset.n_covariates() {
        return Err(Error::InvalidArgument(
            "delta length differs from the number of covariates".into(),
        ));
    }
    let params = crate::model::GlobalParams { delta: delta.to_vec() };
    let l = model.config.n_patterns();
    (0..model.n_subjects())
        .into_par_iter()
        .map(|i| {
            let offset = params.offset(&model.dataset.records[i]);
            let mut counts = vec![0usize; l];
            for k in 0..draws {
                let mut rng = stream(seed, 0, k, i, Purpose::Reference);
                let prop = WORKSPACE.with_borrow_mut(|ws| propose(model, i, offset, &mut rng, ws))?;
                counts[prop.pattern] += 1;
            }
            Ok(counts.iter().map(|&c| c as f64 / draws as f64).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::PitmanYor;
    use crate::special::norm_cdf;

    #[test]
    fn acceptance_examples() {
        let g = [0.3, 0.3, 0.4];
        assert_eq!(acceptance_probability(&[0.4, 0.2, 0.4], &g, 0, 0), 1.0);
        assert!((acceptance_probability(&[0.4, 0.2, 0.4], &g, 0, 1) - 0.5).abs() < 1e-15);
        let p = [0.1, 0.5, 0.4];
        for a in 0..3 {
            for b in 0..3 {
                assert!((acceptance_probability(&p, &p, a, b) - 1.0).abs() < 1e-15);
            }
        }
    }

    fn intercept_dataset(n_subjects: usize, days: usize, rate: f64, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed, 0);
        let records = (0..n_subjects)
            .map(|s| {
                let y = (0..days).map(|_| Some(rng.random::<f64>() < rate)).collect();
                PatientRecord::with_changes(format!("s{s}"), y, vec![1.0], &[1]).unwrap()
            })
            .collect();
        Dataset::new(vec!["intercept".into()], records).unwrap()
    }

    #[test]
    fn delta_update_recovers_intercept() {
        let ds = intercept_dataset(20, 5000, norm_cdf(-1.0), 1);
        let gammas: Vec<Vec<f64>> = ds.records.iter().map(|r| vec![0.0; r.days()]).collect();
        let refs: Vec<&[f64]> = gammas.iter().map(|g| g.as_slice()).collect();
        let d0 = DVector::zeros(1);
        let cov = DMatrix::identity(1, 1) * 10.0;
        let mut rng = RngStream::new(2, 0);
        let mut delta = vec![0.0];
        let mut acc = 0.0;
        for it in 0..300 {
            delta = gibbs_update_delta(&ds, &refs, &delta, &d0, &cov, &mut rng).unwrap();
            if it >= 100 {
                acc += delta[0];
            }
        }
        assert!((acc / 200.0 + 1.0).abs() < 0.05);
    }

    #[test]
    fn delta_update_without_data_is_prior() {
        let records = vec![PatientRecord::with_changes("a", vec![None; 5], vec![1.0, 0.5], &[1]).unwrap()];
        let ds = Dataset::new(vec!["intercept".into(), "x".into()], records).unwrap();
        let gammas = [vec![0.0; 5]];
        let refs: Vec<&[f64]> = gammas.iter().map(|g| g.as_slice()).collect();
        let d0 = DVector::from_row_slice(&[0.5, -1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let mut rng = RngStream::new(3, 0);
        let n = 40_000;
        let (mut s, mut ss) = (DVector::<f64>::zeros(2), DMatrix::<f64>::zeros(2, 2));
        for _ in 0..n {
            let d = DVector::from_vec(gibbs_update_delta(&ds, &refs, &[0.0, 0.0], &d0, &cov, &mut rng).unwrap());
            s += &d;
            ss += &d * d.transpose();
        }
        let m = &s / n as f64;
        let c = &ss / n as f64 - &m * m.transpose();
        for k in 0..2 {
            assert!((m[k] - d0[k]).abs() < 4.0 * (cov[(k, k)] / n as f64).sqrt());
            for j in 0..2 {
                let se = ((cov[(k, k)] * cov[(j, j)] + cov[(k, j)].powi(2)) / n as f64).sqrt();
                assert!((c[(k, j)] - cov[(k, j)]).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn offset_mismatch_is_rejected() {
        let mut cfg = ModelConfig::with_dimension(1);
        cfg.n_particles = 4;
        let ds = intercept_dataset(2, 10, 0.2, 4);
        let model = Model::new(&ds, &cfg, 1).unwrap();
        let mut state = initialize(&model, 1, 0).unwrap();
        let mut rng = RngStream::new(5, 0);
        let mut ws = FilterWorkspace::new();
        let prop = propose(&model, 0, 0.25, &mut rng, &mut ws).unwrap();
        let err = mh_update_subject(
            0,
            prop,
            0.5,
            &mut state.subjects,
            &mut state.registry,
            &cfg,
            &model.g_tables[0],
            &mut rng,
        );
        assert!(matches!(err, Err(Error::Runtime(_))));
    }

    #[test]
    fn sequential_and_batched_sweeps_agree() {
        let mut cfg = ModelConfig::with_dimension(3);
        cfg.n_particles = 20;
        cfg.prior_mc_draws = 1000;
        let ds = intercept_dataset(6, 40, 0.3, 6);
        let model = Model::new(&ds, &cfg, 9).unwrap();
        let settings = McmcSettings {
            n_chains: 1,
            n_iter: 30,
            burn_in: 10,
            thin: 2,
            seed: 9,
            ..Default::default()
        };
        let a = run_chain(&model, &settings, 0, None).unwrap();
        let b = run_chain(
            &model,
            &McmcSettings {
                sequential: true,
                ..settings.clone()
            },
            0,
            None,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.draws.len(), 10);
        let c = run_chain(&model, &settings, 1, None).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn store_invariants_hold() {
        let mut cfg = ModelConfig::with_dimension(4);
        cfg.n_particles = 16;
        cfg.prior_mc_draws = 1000;
        cfg.pitman_yor = PitmanYor::new(3.0, -1.0).unwrap();
        let ds = intercept_dataset(12, 60, 0.25, 7);
        let model = Model::new(&ds, &cfg, 3).unwrap();
        let settings = McmcSettings {
            n_iter: 40,
            burn_in: 0,
            thin: 1,
            seed: 3,
            theta_every: 1,
            ..Default::default()
        };
        let mut sink = MemoryThetaSink::default();
        let store = run_chain(&model, &settings, 0, Some(&mut sink)).unwrap();
        assert_eq!(store.draws.len(), 40);
        assert!(store.diagnostics.max_clusters <= 3);
        for (k, i, theta) in &sink.snapshots {
            let rec = &ds.records[*i];
            let gamma = theta.gamma(&rec.timeline());
            assert_eq!(
                cfg.patterns.classify(&gamma, &rec.treatment_changes),
                store.draws[*k].patterns[*i]
            );
        }
        for d in &store.draws {
            let reg = ClusterRegistry::from_labels(&d.labels, d.atoms.clone()).unwrap();
            reg.check().unwrap();
        }
    }
}
