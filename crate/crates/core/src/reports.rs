//! Posterior summaries over retained draws: pattern probabilities,
//! co-clustering, partition point estimates, scoring against truth,
//! convergence diagnostics, and treatment-tenure slices.

use crate::error::{Error, Result};
use crate::events::pre_post_means;
use crate::model::PatientRecord;
use crate::sampler::ChainStore;
use std::collections::BTreeMap;
use std::str::FromStr;

fn check_stores(stores: &[ChainStore]) -> Result<(usize, usize)> {
    let first = stores
        .first()
        .ok_or_else(|| Error::InvalidArgument("no chains".into()))?;
    let n = first.subject_ids.len();
    let l = first.n_patterns;
    for s in stores {
        if s.subject_ids != first.subject_ids || s.n_patterns != l {
            return Err(Error::InvalidArgument("chains disagree on subjects or patterns".into()));
        }
    }
    if total_draws(stores) == 0 {
        return Err(Error::InvalidArgument("no retained draws".into()));
    }
    Ok((n, l))
}

pub fn total_draws(stores: &[ChainStore]) -> usize {
    stores.iter().map(|s| s.draws.len()).sum()
}

/// Per-subject frequencies of each pattern across all retained draws of all chains.
pub fn pattern_posterior(stores: &[ChainStore]) -> Result<Vec<Vec<f64>>> {
    let (n, l) = check_stores(stores)?;
    let mut counts = vec![vec![0u64; l]; n];
    for d in stores.iter().flat_map(|s| &s.draws) {
        for (c, &r) in counts.iter_mut().zip(&d.patterns) {
            c[r] += 1;
        }
    }
    let total = total_draws(stores) as f64;
    Ok(counts
        .into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / total).collect())
        .collect())
}

/// Symmetric matrix of pairwise co-clustering frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Co-clustering frequencies over a set of label vectors.
    pub fn from_partitions<P: AsRef<[usize]>>(partitions: &[P]) -> Result<Self> {
        let first = partitions
            .first()
            .ok_or_else(|| Error::InvalidArgument("no partitions".into()))?;
        let n = first.as_ref().len();
        let mut counts = vec![0u64; n * n];
        for part in partitions {
            let labels = part.as_ref();
            if labels.len() != n {
                return Err(Error::InvalidArgument("partitions of different sizes".into()));
            }
            for i in 0..n {
                for j in i + 1..n {
                    if labels[i] == labels[j] {
                        counts[i * n + j] += 1;
                    }
                }
            }
        }
        let total = partitions.len() as f64;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
            for j in i + 1..n {
                let v = counts[i * n + j] as f64 / total;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

pub fn similarity(stores: &[ChainStore]) -> Result<SimilarityMatrix> {
    check_stores(stores)?;
    let parts: Vec<&[usize]> = stores
        .iter()
        .flat_map(|s| &s.draws)
        .map(|d| d.labels.as_slice())
        .collect();
    SimilarityMatrix::from_partitions(&parts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionLoss {
    Binder,
    Vi,
}

impl FromStr for PartitionLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binder" => Ok(PartitionLoss::Binder),
            "vi" => Ok(PartitionLoss::Vi),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}` (binder or vi)"))),
        }
    }
}

/// `Σ_{i<j} |1(same cluster) − a_ij|`.
pub fn binder_loss(labels: &[usize], sim: &SimilarityMatrix) -> f64 {
    let n = labels.len();
    let mut loss = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let same = (labels[i] == labels[j]) as u8 as f64;
            loss += (same - sim.get(i, j)).abs();
        }
    }
    loss
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Variation of information between two partitions, in bits.
pub fn variation_of_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ma: BTreeMap<usize, usize> = BTreeMap::new();
    let mut mb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let h_joint = entropy(joint.into_values(), n);
    // VI = 2 H(A, B) − H(A) − H(B)
    (2.0 * h_joint - entropy(ma.into_values(), n) - entropy(mb.into_values(), n)).max(0.0)
}

/// Relabel in order of first appearance so equal partitions compare equal.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// A partition chosen from the sampled draws.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPartition {
    pub labels: Vec<usize>,
    /// Index of the first draw holding this partition.
    pub draw: usize,
    pub loss: f64,
}

/// The sampled partition with the smallest expected loss; ties go to the earliest draw.
///
/// Binder loss is evaluated against `sim`; VI is the mean variation of
/// information against every sampled partition.
pub fn point_partition<P: AsRef<[usize]>>(
    sim: &SimilarityMatrix,
    partitions: &[P],
    loss: PartitionLoss,
) -> Result<PointPartition> {
    if partitions.is_empty() {
        return Err(Error::InvalidArgument("no sampled partitions".into()));
    }
    // Distinct partitions with their first draw index and multiplicity.
    let mut distinct: BTreeMap<Vec<usize>, (usize, usize)> = BTreeMap::new();
    for (k, p) in partitions.iter().enumerate() {
        let c = canonical_labels(p.as_ref());
        if c.len() != sim.len() {
            return Err(Error::InvalidArgument(
                "partition size differs from similarity matrix".into(),
            ));
        }
        distinct.entry(c).or_insert((k, 0)).1 += 1;
    }
    let total = partitions.len() as f64;
    let mut best: Option<PointPartition> = None;
    for (labels, &(draw, _)) in &distinct {
        let value = match loss {
            PartitionLoss::Binder => binder_loss(labels, sim),
            PartitionLoss::Vi => {
                distinct
                    .iter()
                    .map(|(other, &(_, m))| m as f64 * variation_of_information(labels, other))
                    .sum::<f64>()
                    / total
            }
        };
        let better = match &best {
            None => true,
            Some(b) => value < b.loss || (value == b.loss && draw < b.draw),
        };
        if better {
            best = Some(PointPartition {
                labels: labels.clone(),
                draw,
                loss: value,
            });
        }
    }
    Ok(best.expect("at least one partition"))
}

/// Mean over subjects of `log₂ P̂(R_i = ℓ*_i)`, with probabilities floored at `1 / (draws + 1)`.
pub fn cross_entropy(posterior: &[Vec<f64>], truth: &[usize], total_draws: usize) -> Result<f64> {
    if posterior.len() != truth.len() || truth.is_empty() {
        return Err(Error::InvalidArgument("need one truth label per subject".into()));
    }
    let floor = 1.0 / (total_draws as f64 + 1.0);
    let mut sum = 0.0;
    for (row, &l) in posterior.iter().zip(truth) {
        let p = *row
            .get(l)
            .ok_or_else(|| Error::InvalidArgument(format!("truth pattern {l} out of range")))?;
        sum += p.max(floor).log2();
    }
    Ok(sum / truth.len() as f64)
}

/// Posterior mean of each subject's pattern-probability vector (the atom of its cluster).
pub fn xi_posterior_mean(stores: &[ChainStore]) -> Result<Vec<Vec<f64>>> {
    let (n, l) = check_stores(stores)?;
    let mut acc = vec![vec![0.0; l]; n];
    for d in stores.iter().flat_map(|s| &s.draws) {
        for (a, &h) in acc.iter_mut().zip(&d.labels) {
            for (x, v) in a.iter_mut().zip(&d.atoms[h]) {
                *x += v;
            }
        }
    }
    let total = total_draws(stores) as f64;
    for a in &mut acc {
        for x in a.iter_mut() {
            *x /= total;
        }
    }
    Ok(acc)
}

/// Split-chain potential scale reduction factor. NaN when any chain has
/// fewer than four draws or all draws are constant within halves.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return f64::NAN;
    }
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let start = c.len() - 2 * half;
        parts.push(&c[start..start + half]);
        parts.push(&c[start + half..]);
    }
    let n = half as f64;
    let m = parts.len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| p.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = parts
        .iter()
        .zip(&means)
        .map(|(p, mu)| p.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Split R-hat of each δ component across chains.
pub fn delta_rhat(stores: &[ChainStore]) -> Result<Vec<f64>> {
    check_stores(stores)?;
    let d = stores
        .iter()
        .flat_map(|s| s.draws.first())
        .map(|dr| dr.delta.len())
        .next()
        .unwrap_or(0);
    Ok((0..d)
        .map(|k| {
            let chains: Vec<Vec<f64>> = stores
                .iter()
                .map(|s| s.draws.iter().map(|dr| dr.delta[k]).collect())
                .collect();
            split_rhat(&chains)
        })
        .collect())
}

/// Summary of one treatment tenure in one retained draw.
#[derive(Clone, Debug, PartialEq)]
pub struct TreatmentSlice {
    pub patient_id: String,
    pub treatment: String,
    /// 1-based inclusive day range of the tenure.
    pub start: usize,
    pub end: usize,
    pub t_pre: f64,
    pub t_post: f64,
    /// Least-squares line `γ = intercept + slope · Δ` over the tenure.
    pub intercept: f64,
    pub slope: f64,
    pub draw: usize,
}

/// Ordinary least squares of `y` on `x`; `None` with fewer than two distinct `x`.
pub fn ols_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Split one draw's score series into treatment tenures. Returns the slices
/// and the number of single-day tenures skipped.
///
/// The pre window is `[max(c − window, 1), c]` and the post window is the
/// tenure `[c, end]`, so the last tenure reproduces the non-response event's means.
pub fn treatment_slices(
    record: &PatientRecord,
    gamma: &[f64],
    window: usize,
    draw: usize,
) -> (Vec<TreatmentSlice>, usize) {
    let t_len = gamma.len();
    let changes = &record.treatment_changes;
    let mut out = Vec::new();
    let mut excluded = 0;
    for (k, &c) in changes.iter().enumerate() {
        let end = changes.get(k + 1).map(|n| n - 1).unwrap_or(t_len);
        if end <= c {
            excluded += 1;
            continue;
        }
        let (t_pre, t_post) = pre_post_means(gamma, c, end, window);
        let x: Vec<f64> = (0..=end - c).map(|d| d as f64).collect();
        let (intercept, slope) = ols_line(&x, &gamma[c - 1..end]).expect("at least two days");
        out.push(TreatmentSlice {
            patient_id: record.id.clone(),
            treatment: record.treatment_id[c - 1].clone(),
            start: c,
            end,
            t_pre,
            t_post,
            intercept,
            slope,
            draw,
        });
    }
    (out, excluded)
}

/// Per (group, treatment) averages over slices.
#[derive(Clone, Debug, PartialEq)]
pub struct TreatmentEffectRow {
    pub group: String,
    pub treatment: String,
    pub t_pre: f64,
    pub t_post: f64,
    pub intercept: f64,
    pub slope: f64,
    pub prop_pre_lt_post: f64,
    pub prop_slope_lt_0: f64,
    pub n_slices: usize,
    pub n_excluded_single_day: usize,
}

pub const TREATMENT_EFFECT_COLUMNS: [&str; 10] = [
    "group",
    "treatment",
    "T_pre",
    "T_post",
    "intercept",
    "slope",
    "prop_T_pre_lt_T_post",
    "prop_slope_lt_0",
    "n_slices",
    "n_excluded_single_day",
];

#[derive(Clone, Debug, Default)]
struct SliceSums {
    pre: f64,
    post: f64,
    intercept: f64,
    slope: f64,
    pre_lt_post: usize,
    slope_neg: usize,
    n: usize,
    excluded: usize,
}

/// Streams trajectory snapshots into per-treatment summaries, overall and
/// by group (for example the point-estimate cluster of each subject).
#[derive(Clone, Debug, Default)]
pub struct TreatmentEffects {
    window: usize,
    groups: Option<Vec<String>>,
    sums: BTreeMap<(String, String), SliceSums>,
}

impl TreatmentEffects {
    pub fn new(window: usize, groups: Option<Vec<String>>) -> Self {
        Self {
            window,
            groups,
            sums: BTreeMap::new(),
        }
    }

    /// Add one draw of subject `subject`'s score series.
    pub fn add(&mut self, subject: usize, record: &PatientRecord, gamma: &[f64], draw: usize) {
        let (slices, _) = treatment_slices(record, gamma, self.window, draw);
        let mut keys = vec!["all".to_string()];
        if let Some(g) = &self.groups {
            keys.push(g[subject].clone());
        }
        // Single-day tenures are counted under their own treatment label.
        let changes = &record.treatment_changes;
        for (k, &c) in changes.iter().enumerate() {
            let end = changes.get(k + 1).map(|n| n - 1).unwrap_or(gamma.len());
            if end <= c {
                for g in &keys {
                    self.entry(g, &record.treatment_id[c - 1]).excluded += 1;
                }
            }
        }
        for s in &slices {
            for g in &keys {
                let e = self.entry(g, &s.treatment);
                e.pre += s.t_pre;
                e.post += s.t_post;
                e.intercept += s.intercept;
                e.slope += s.slope;
                e.pre_lt_post += (s.t_pre < s.t_post) as usize;
                e.slope_neg += (s.slope < 0.0) as usize;
                e.n += 1;
            }
        }
    }

    fn entry(&mut self, group: &str, treatment: &str) -> &mut SliceSums {
        self.sums.entry((group.to_string(), treatment.to_string())).or_default()
    }

    pub fn rows(&self) -> Vec<TreatmentEffectRow> {
        self.sums
            .iter()
            .map(|((g, t), s)| {
                let n = s.n as f64;
                let avg = |v: f64| if s.n > 0 { v / n } else { f64::NAN };
                TreatmentEffectRow {
                    group: g.clone(),
                    treatment: t.clone(),
                    t_pre: avg(s.pre),
                    t_post: avg(s.post),
                    intercept: avg(s.intercept),
                    slope: avg(s.slope),
                    prop_pre_lt_post: avg(s.pre_lt_post as f64),
                    prop_slope_lt_0: avg(s.slope_neg as f64),
                    n_slices: s.n,
                    n_excluded_single_day: s.excluded,
                }
            })
            .collect()
    }
}
