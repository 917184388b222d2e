//! Starting values: a pooled static probit fit for δ and filter-based trajectories.

use crate::clustering::ClusterRegistry;
use crate::error::Result;
use crate::model::{Dataset, GlobalParams, SubjectState};
use crate::particle_filter::{marginal_filter_with, MissingDays};
use crate::special::log_norm_cdf;
use crate::stochastics::RngStream;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

use super::{stream, Model, Purpose};

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Maximum likelihood fit of the static probit `P(y = 1) = Φ(xᵀδ)` pooled over
/// every observed day, by Fisher scoring. `None` when the fit does not converge.
pub fn probit_mle(dataset: &Dataset) -> Option<Vec<f64>> {
    let d = dataset.n_covariates();
    // Rows are identical within a subject, so aggregate to success/failure counts.
    let groups: Vec<(&[f64], f64, f64)> = dataset
        .records
        .iter()
        .map(|r| {
            let ones = r.y.iter().filter(|v| **v == Some(true)).count() as f64;
            let zeros = r.y.iter().filter(|v| **v == Some(false)).count() as f64;
            (r.x.as_slice(), ones, zeros)
        })
        .filter(|(_, a, b)| a + b > 0.0)
        .collect();
    if groups.is_empty() {
        return None;
    }
    let mut beta = DVector::<f64>::zeros(d);
    for _ in 0..IRLS_MAX_ITER {
        let mut info = DMatrix::<f64>::zeros(d, d);
        let mut score = DVector::<f64>::zeros(d);
        for &(x, ones, zeros) in &groups {
            let x = DVector::from_column_slice(x);
            let eta = x.dot(&beta);
            let log_pdf = -0.5 * eta * eta - LN_SQRT_2PI;
            // Mills-type ratios φ/Φ and φ/(1 - Φ), stable in both tails.
            let up = (log_pdf - log_norm_cdf(eta)).exp();
            let down = (log_pdf - log_norm_cdf(-eta)).exp();
            score += &x * (ones * up - zeros * down);
            info += &x * x.transpose() * ((ones + zeros) * up * down);
        }
        let step = info.cholesky()?.solve(&score);
        if step.iter().any(|v| !v.is_finite()) {
            return None;
        }
        beta += &step;
        if step.amax() < IRLS_TOL {
            return Some(beta.iter().copied().collect());
        }
    }
    None
}

/// Complete initial state of one chain.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub params: GlobalParams,
    pub subjects: Vec<SubjectState>,
    pub registry: ClusterRegistry,
    /// The probit fit failed and δ started at zero.
    pub delta_fallback: bool,
}

/// Initialize δ, every trajectory, and the partition (one cluster per distinct pattern).
pub fn initialize(model: &Model<'_>, seed: u64, chain: usize) -> Result<ChainState> {
    let dataset = model.dataset;
    let config = model.config;
    let (delta, delta_fallback) = match probit_mle(dataset) {
        Some(d) => (d, false),
        None => {
            log::warn!("static probit fit did not converge; starting from delta = 0");
            (vec![0.0; dataset.n_covariates()], true)
        }
    };
    let params = GlobalParams { delta };

    let mut subjects = Vec::with_capacity(dataset.len());
    for (i, rec) in dataset.records.iter().enumerate() {
        let mut rng: RngStream = stream(seed, chain, 0, i, Purpose::Init);
        let out = marginal_filter_with(
            rec,
            &model.dynamics,
            params.offset(rec),
            config.n_particles,
            MissingDays::Predict,
            &mut rng,
        )?;
        subjects.push(SubjectState::new(out.filtered_mean_path(), rec, &config.patterns, 0));
    }

    // One cluster per distinct pattern, in ascending pattern order.
    let mut by_pattern: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        by_pattern.entry(s.pattern).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by_pattern.into_values().collect();
    let cap = config.pitman_yor.cap().unwrap_or(usize::MAX).max(1);
    let mut labels = vec![0; subjects.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for g in groups {
        if members.len() < cap {
            members.push(g);
        } else {
            // More distinct patterns than the cap allows: fold into the largest cluster.
            let largest = (0..members.len())
                .max_by_key(|&h| (members[h].len(), usize::MAX - h))
                .unwrap_or(0);
            members[largest].extend(g);
        }
    }
    let a = &config.dirichlet_a;
    let total_a: f64 = a.iter().sum();
    let mut atoms = Vec::with_capacity(members.len());
    for (h, m) in members.iter().enumerate() {
        let mut counts = vec![0.0; a.len()];
        for &i in m {
            labels[i] = h;
            counts[subjects[i].pattern] += 1.0;
        }
        let denom = total_a + m.len() as f64;
        atoms.push(a.iter().zip(&counts).map(|(a, n)| (a + n) / denom).collect());
    }
    let registry = ClusterRegistry::from_labels(&labels, atoms)?;
    for (s, l) in subjects.iter_mut().zip(&labels) {
        s.cluster = *l;
    }
    Ok(ChainState {
        params,
        subjects,
        registry,
        delta_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PatientRecord;
    use crate::special::norm_ppf;

    #[test]
    fn intercept_only_mle_is_inverse_cdf_of_rate() {
        // 1587 ones in 10000 days spread over 10 subjects.
        let mut records = Vec::new();
        for s in 0..10 {
            let y: Vec<Option<bool>> = (0..1000).map(|t| Some(s * 1000 + t < 1587)).collect();
            records.push(PatientRecord::with_changes(format!("s{s}"), y, vec![1.0], &[1]).unwrap());
        }
        let ds = Dataset::new(vec!["intercept".into()], records).unwrap();
        let beta = probit_mle(&ds).unwrap();
        assert!((beta[0] - norm_ppf(0.1587)).abs() < 1e-6);
        assert!((beta[0] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn two_group_mle_matches_closed_form() {
        // Saturated model: intercept + group flag reproduces each group's rate.
        let mut records = Vec::new();
        for s in 0..4 {
            let flag = (s % 2) as f64;
            let rate_ones = if s % 2 == 0 { 30 } else { 120 };
            let y: Vec<Option<bool>> = (0..400)
                .map(|t| if t % 10 == 9 { None } else { Some(t < rate_ones) })
                .collect();
            records.push(PatientRecord::with_changes(format!("s{s}"), y, vec![1.0, flag], &[1]).unwrap());
        }
        let ds = Dataset::new(vec!["intercept".into(), "flag".into()], records).unwrap();
        let obs = |ones: usize| {
            let n = (0..400).filter(|t| t % 10 != 9).count() as f64;
            let k = (0..ones).filter(|t| t % 10 != 9).count() as f64;
            norm_ppf(k / n)
        };
        let beta = probit_mle(&ds).unwrap();
        assert!((beta[0] - obs(30)).abs() < 1e-6);
        assert!((beta[0] + beta[1] - obs(120)).abs() < 1e-6);
    }

    #[test]
    fn separated_data_fails() {
        let r = PatientRecord::with_changes("a", vec![Some(false); 50], vec![1.0], &[1]).unwrap();
        let ds = Dataset::new(vec!["intercept".into()], vec![r]).unwrap();
        assert!(probit_mle(&ds).is_none());
    }
}
