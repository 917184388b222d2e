//! Retained draws and per-chain diagnostics.

use crate::error::Result;
use crate::model::Trajectory;

/// MCMC run lengths and storage options.
#[derive(Clone, Debug, PartialEq)]
pub struct McmcSettings {
    pub n_chains: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Keep trajectories on every `theta_every`-th retained draw.
    pub theta_every: usize,
    /// Keep trajectories on every retained draw.
    pub full_theta: bool,
    /// Generate each subject's proposal right before its update instead of
    /// all proposals up front. Both orders give identical draws.
    pub sequential: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            n_chains: 5,
            n_iter: 13_500,
            burn_in: 1000,
            thin: 25,
            seed: 0,
            theta_every: 10,
            full_theta: false,
            sequential: false,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.n_chains == 0 {
            return Err(Error::config("mcmc.n_chains", "must be at least 1"));
        }
        if self.n_iter == 0 {
            return Err(Error::config("mcmc.n_iter", "must be at least 1"));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::config("mcmc.burn_in", "must be smaller than n_iter"));
        }
        if self.thin == 0 {
            return Err(Error::config("mcmc.thin", "must be at least 1"));
        }
        if self.theta_every == 0 {
            return Err(Error::config("mcmc.theta_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Whether 1-based sweep `it` is kept.
    pub fn is_retained(&self, it: usize) -> bool {
        it > self.burn_in && (it - self.burn_in).is_multiple_of(self.thin)
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    /// Whether retained draw `k` (0-based) keeps trajectories.
    pub fn keeps_theta(&self, k: usize) -> bool {
        self.full_theta || k.is_multiple_of(self.theta_every)
    }
}

/// One retained state of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    /// 1-based sweep the draw was taken after.
    pub iteration: usize,
    pub delta: Vec<f64>,
    pub patterns: Vec<usize>,
    pub labels: Vec<usize>,
    pub atoms: Vec<Vec<f64>>,
}

/// Counters collected while a chain runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainDiagnostics {
    pub sweeps_completed: usize,
    pub proposals: u64,
    /// Proposals with at least one low effective-sample-size day.
    pub low_ess_proposals: u64,
    pub low_ess_days: u64,
    pub min_ess: f64,
    pub fallback_allocations: u64,
    /// Largest number of occupied clusters seen at any point.
    pub max_clusters: usize,
    /// Initial δ fell back to zero because the probit fit failed.
    pub delta_init_fallback: bool,
}

/// Retained draws, acceptance counts, and diagnostics of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainStore {
    pub chain_id: usize,
    pub subject_ids: Vec<String>,
    pub n_patterns: usize,
    pub draws: Vec<Draw>,
    pub accepted: Vec<u64>,
    pub proposed: Vec<u64>,
    pub diagnostics: ChainDiagnostics,
}

impl ChainStore {
    pub fn new(chain_id: usize, subject_ids: Vec<String>, n_patterns: usize) -> Self {
        let n = subject_ids.len();
        Self {
            chain_id,
            subject_ids,
            n_patterns,
            draws: Vec::new(),
            accepted: vec![0; n],
            proposed: vec![0; n],
            diagnostics: ChainDiagnostics {
                min_ess: f64::INFINITY,
                ..Default::default()
            },
        }
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.accepted
            .iter()
            .zip(&self.proposed)
            .map(|(a, p)| if *p == 0 { 0.0 } else { *a as f64 / *p as f64 })
            .collect()
    }
}

/// Destination for trajectory snapshots, which are too large to keep in memory for real runs.
pub trait ThetaSink {
    /// Called once per kept draw and subject, in draw order then subject order.
    fn push(&mut self, draw: usize, subject: usize, theta: &Trajectory) -> Result<()>;
}

/// Keeps snapshots in memory; for tests and small runs.
#[derive(Clone, Debug, Default)]
pub struct MemoryThetaSink {
    /// `(retained draw index, subject, trajectory)`.
    pub snapshots: Vec<(usize, usize, Trajectory)>,
}

impl ThetaSink for MemoryThetaSink {
    fn push(&mut self, draw: usize, subject: usize, theta: &Trajectory) -> Result<()> {
        self.snapshots.push((draw, subject, theta.clone()));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_protocol_retains_500_per_chain() {
        let s = McmcSettings::default();
        assert_eq!(s.retained_per_chain(), 500);
        assert_eq!((1..=s.n_iter).filter(|&it| s.is_retained(it)).count(), 500);
        assert_eq!(s.n_chains * s.retained_per_chain(), 2500);
        let s = McmcSettings {
            n_iter: 37,
            burn_in: 0,
            thin: 1,
            ..Default::default()
        };
        assert_eq!((1..=37).filter(|&it| s.is_retained(it)).count(), 37);
        let s = McmcSettings {
            n_iter: 1500,
            burn_in: 300,
            thin: 4,
            ..Default::default()
        };
        assert_eq!((1..=1500).filter(|&it| s.is_retained(it)).count(), 300);
    }

    #[test]
    fn settings_validation() {
        let bad = McmcSettings {
            burn_in: 13_500,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = McmcSettings {
            thin: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
