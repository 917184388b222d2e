//! Synthetic cohorts: two clusters crossed with two risk subtypes, clumping
//! episodes for the second cluster, one treatment switch, and MCAR missingness.

use crate::error::{Error, Result};
use crate::model::{Dataset, PatientRecord};
use crate::special::norm_ppf;
use crate::stochastics::RngStream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Daily event probabilities indexed `[cluster][subtype][period]`.
pub type BaseProbs = [[[f64; 2]; 2]; 2];

pub const DEFAULT_BASE_PROBS: BaseProbs = [
    [[1.0 / 60.0, 1.0 / 365.0], [2.0 / 60.0, 4.0 / 365.0]],
    [[5.0 / 365.0, 1.0 / 730.0], [10.0 / 365.0, 1.0 / 365.0]],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_per_cell: usize,
    pub horizon: usize,
    /// First day of the second period; also the treatment switch.
    pub change_day: usize,
    pub base_probs: BaseProbs,
    pub clump_prob: f64,
    /// Inclusive range of clump lengths in days.
    pub clump_len_range: [usize; 2],
    pub clumps_per_year: usize,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_per_cell: 25,
            horizon: 730,
            change_day: 366,
            base_probs: DEFAULT_BASE_PROBS,
            clump_prob: 0.99,
            clump_len_range: [7, 31],
            clumps_per_year: 1,
            missing_rate: 0.10,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_cell == 0 {
            return Err(Error::config("n_per_cell", "must be at least 1"));
        }
        if self.change_day < 2 || self.change_day > self.horizon {
            return Err(Error::config("change_day", "must lie in 2..=horizon"));
        }
        let probs = self.base_probs.iter().flatten().flatten().chain([&self.clump_prob]);
        for &p in probs {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::config(
                    "base_probs",
                    format!("probability {p} is outside (0, 1)"),
                ));
            }
        }
        let [lo, hi] = self.clump_len_range;
        if lo == 0 || lo > hi {
            return Err(Error::config("clump_len_range", "must satisfy 1 <= min <= max"));
        }
        let shortest = (self.change_day - 1).min(self.horizon - self.change_day + 1);
        if self.clumps_per_year * hi > shortest {
            return Err(Error::config(
                "clump_len_range",
                format!(
                    "{} clumps of up to {hi} days do not fit in a period of {shortest} days",
                    self.clumps_per_year
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::config("missing_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Clump episode: 1-based first day and length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Clump {
    pub start: usize,
    pub len: usize,
}

/// Generating truth for one simulated subject.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthRecord {
    pub id: String,
    /// 1 or 2.
    pub cluster: u8,
    /// 0 low risk, 1 high risk.
    pub subtype: u8,
    /// Daily `Φ⁻¹` of the event probability.
    pub probit: Vec<f64>,
    pub clumps: Vec<Clump>,
}

/// Pattern the simulation truth corresponds to: 0 for cluster 1, 2 for cluster 2.
pub fn true_pattern(truth: &TruthRecord) -> usize {
    if truth.cluster == 1 {
        0
    } else {
        2
    }
}

/// Place `lens.len()` non-overlapping windows uniformly inside days `first..=last`.
fn place_clumps<R: Rng + ?Sized>(lens: &[usize], first: usize, last: usize, rng: &mut R) -> Result<Vec<Clump>> {
    let span = last + 1 - first;
    let total: usize = lens.iter().sum();
    if total > span {
        return Err(Error::InvalidArgument(format!(
            "clumps totalling {total} days do not fit in {span} days"
        )));
    }
    // Free days are split into len+1 gaps; a uniform subset of gap positions
    // among free + k slots gives a uniform non-overlapping placement.
    let free = span - total;
    let k = lens.len();
    let mut slots: Vec<usize> = rand::seq::index::sample(rng, free + k, k).into_vec();
    slots.sort_unstable();
    let mut out = Vec::with_capacity(k);
    let mut used = 0;
    for (j, (&slot, &len)) in slots.iter().zip(lens).enumerate() {
        let start = first + (slot - j) + used;
        out.push(Clump { start, len });
        used += len;
    }
    Ok(out)
}

/// Generate a cohort. Subjects are ordered by cell (cluster 1 low, cluster 1
/// high, cluster 2 low, cluster 2 high) and each draws from its own substream.
pub fn generate_cohort(scenario: &ScenarioConfig) -> Result<(Dataset, Vec<TruthRecord>)> {
    scenario.validate()?;
    let n = scenario.n_per_cell;
    let mut records = Vec::with_capacity(4 * n);
    let mut truths = Vec::with_capacity(4 * n);
    for cluster in 0..2u8 {
        for subtype in 0..2u8 {
            for k in 0..n {
                let index = records.len();
                let id = format!("S{:04}", index + 1);
                let mut rng = RngStream::keyed(scenario.seed, &[index as u64]);
                let (rec, truth) = simulate_subject(scenario, id, cluster + 1, subtype, &mut rng)?;
                debug_assert_eq!(k + 1 + (2 * cluster as usize + subtype as usize) * n, index + 1);
                records.push(rec);
                truths.push(truth);
            }
        }
    }
    let ds = Dataset::new(vec!["intercept".into(), "high_risk".into()], records)?;
    Ok((ds, truths))
}

fn simulate_subject<R: Rng + ?Sized>(
    sc: &ScenarioConfig,
    id: String,
    cluster: u8,
    subtype: u8,
    rng: &mut R,
) -> Result<(PatientRecord, TruthRecord)> {
    let probs = sc.base_probs[cluster as usize - 1][subtype as usize];
    let mut prob: Vec<f64> = (1..=sc.horizon)
        .map(|t| if t < sc.change_day { probs[0] } else { probs[1] })
        .collect();
    let mut clumps = Vec::new();
    if cluster == 2 {
        let [lo, hi] = sc.clump_len_range;
        for (first, last) in [(1, sc.change_day - 1), (sc.change_day, sc.horizon)] {
            let lens: Vec<usize> = (0..sc.clumps_per_year).map(|_| rng.random_range(lo..=hi)).collect();
            clumps.extend(place_clumps(&lens, first, last, rng)?);
        }
        for c in &clumps {
            for p in &mut prob[c.start - 1..c.start - 1 + c.len] {
                *p = sc.clump_prob;
            }
        }
    }
    let y = prob
        .iter()
        .map(|&p| {
            let event = rng.random::<f64>() < p;
            let missing = rng.random::<f64>() < sc.missing_rate;
            (!missing).then_some(event)
        })
        .collect();
    let rec = PatientRecord::with_changes(id.clone(), y, vec![1.0, subtype as f64], &[1, sc.change_day])?;
    let truth = TruthRecord {
        id,
        cluster,
        subtype,
        probit: prob.iter().map(|&p| norm_ppf(p)).collect(),
        clumps,
    };
    Ok((rec, truth))
}
