//! Pitman-Yor partition bookkeeping over pattern-probability atoms.

use crate::error::{Error, Result};
use crate::stochastics::{dirichlet_into, sample_categorical};
use rand::Rng;

/// Pitman-Yor concentration `m` and discount `sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitmanYor {
    pub m: f64,
    pub sigma: f64,
}

impl Default for PitmanYor {
    fn default() -> Self {
        Self { m: 10.0, sigma: -1.0 }
    }
}

impl PitmanYor {
    pub fn new(m: f64, sigma: f64) -> Result<Self> {
        let py = Self { m, sigma };
        py.validate()?;
        Ok(py)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m.is_finite() && self.sigma.is_finite()) {
            return Err(Error::config("M", "M and sigma must be finite"));
        }
        if self.sigma >= 1.0 {
            return Err(Error::config("sigma", "must be below 1"));
        }
        if self.m <= -self.sigma {
            return Err(Error::config("M", format!("must exceed -sigma = {}", -self.sigma)));
        }
        if self.sigma < 0.0 {
            let k = self.m / -self.sigma;
            if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
                return Err(Error::config(
                    "M",
                    format!("with sigma < 0, M must be an integer multiple of -sigma (M / -sigma = {k})"),
                ));
            }
        }
        Ok(())
    }

    /// Maximum number of occupied clusters, when finite.
    pub fn cap(&self) -> Option<usize> {
        (self.sigma < 0.0).then(|| (self.m / -self.sigma).round() as usize)
    }
}

/// Where a subject is sent by a conditional allocation draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Allocation {
    Existing(usize),
    New,
    /// No cluster had positive mass; the subject goes to the largest cluster.
    Fallback(usize),
}

/// Record of a subject's removal, enough to put it back unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Detached {
    pub subject: usize,
    /// Label the subject held before removal.
    pub label: usize,
    /// Atom of the subject's cluster when the subject was its only member.
    pub removed_atom: Option<Vec<f64>>,
}

/// Occupied clusters, their atoms, and the subject-to-cluster map.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterRegistry {
    atoms: Vec<Vec<f64>>,
    counts: Vec<usize>,
    assignments: Vec<Option<usize>>,
    n_patterns: usize,
}

impl ClusterRegistry {
    /// Registry with `n_subjects` unassigned subjects.
    pub fn empty(n_subjects: usize, n_patterns: usize) -> Self {
        Self {
            atoms: Vec::new(),
            counts: Vec::new(),
            assignments: vec![None; n_subjects],
            n_patterns,
        }
    }

    /// Registry from a full labelling (labels `0..atoms.len()`, all used).
    pub fn from_labels(labels: &[usize], atoms: Vec<Vec<f64>>) -> Result<Self> {
        let n_patterns = atoms.first().map_or(0, |a| a.len());
        let mut counts = vec![0; atoms.len()];
        for &l in labels {
            *counts
                .get_mut(l)
                .ok_or_else(|| Error::InvalidArgument(format!("label {l} has no atom")))? += 1;
        }
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("every atom needs at least one member".into()));
        }
        if atoms.iter().any(|a| a.len() != n_patterns) {
            return Err(Error::InvalidArgument("atoms differ in length".into()));
        }
        Ok(Self {
            atoms,
            counts,
            assignments: labels.iter().map(|l| Some(*l)).collect(),
            n_patterns,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.assignments.len()
    }

    /// Number of subjects currently assigned.
    pub fn n_assigned(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn n_patterns(&self) -> usize {
        self.n_patterns
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn atom(&self, h: usize) -> &[f64] {
        &self.atoms[h]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn assignment(&self, i: usize) -> Option<usize> {
        self.assignments[i]
    }

    /// Labels of all subjects; panics if any subject is unassigned.
    pub fn labels(&self) -> Vec<usize> {
        self.assignments
            .iter()
            .map(|a| a.expect("every subject is assigned between updates"))
            .collect()
    }

    pub fn set_atom(&mut self, h: usize, atom: Vec<f64>) {
        debug_assert_eq!(atom.len(), self.n_patterns);
        self.atoms[h] = atom;
    }

    /// Remove subject `i`; an emptied cluster is deleted and higher labels shift down.
    pub fn detach(&mut self, i: usize) -> Detached {
        let label = self.assignments[i].take().expect("subject is assigned");
        self.counts[label] -= 1;
        let removed_atom = if self.counts[label] == 0 {
            self.counts.remove(label);
            let atom = self.atoms.remove(label);
            for a in self.assignments.iter_mut().flatten() {
                if *a > label {
                    *a -= 1;
                }
            }
            Some(atom)
        } else {
            None
        };
        Detached {
            subject: i,
            label,
            removed_atom,
        }
    }

    /// Undo a [`detach`](Self::detach), restoring labels and atoms exactly.
    pub fn restore(&mut self, d: Detached) {
        match d.removed_atom {
            Some(atom) => {
                for a in self.assignments.iter_mut().flatten() {
                    if *a >= d.label {
                        *a += 1;
                    }
                }
                self.atoms.insert(d.label, atom);
                self.counts.insert(d.label, 1);
            }
            None => self.counts[d.label] += 1,
        }
        self.assignments[d.subject] = Some(d.label);
    }

    /// Put unassigned subject `i` into occupied cluster `h`.
    pub fn attach(&mut self, i: usize, h: usize) {
        debug_assert!(self.assignments[i].is_none());
        self.counts[h] += 1;
        self.assignments[i] = Some(h);
    }

    /// Open a new cluster holding only subject `i`; fails beyond the cap.
    pub fn attach_new(&mut self, i: usize, atom: Vec<f64>, py: &PitmanYor) -> Result<usize> {
        debug_assert!(self.assignments[i].is_none());
        if let Some(cap) = py.cap() {
            if self.atoms.len() + 1 > cap {
                return Err(Error::ClusterCapExceeded { cap });
            }
        }
        self.atoms.push(atom);
        self.counts.push(1);
        let h = self.atoms.len() - 1;
        self.assignments[i] = Some(h);
        Ok(h)
    }

    /// Allocation weights `(w_h, w_new)` for one more subject joining the current clusters.
    pub fn allocation_weights(&self, py: &PitmanYor) -> (Vec<f64>, f64) {
        let denom = self.n_assigned() as f64 + py.m;
        let w: Vec<f64> = self.counts.iter().map(|&n| (n as f64 - py.sigma) / denom).collect();
        let w_new = (py.m + py.sigma * self.n_clusters() as f64) / denom;
        debug_assert!(w_new >= -1e-12, "negative new-cluster weight {w_new}");
        (w, w_new.max(0.0))
    }

    /// Predictive probability of pattern `ell` for one more subject.
    pub fn predictive_pattern_prob(&self, py: &PitmanYor, a: &[f64], ell: usize) -> f64 {
        let (w, w_new) = self.allocation_weights(py);
        let base = a[ell] / a.iter().sum::<f64>();
        self.atoms.iter().zip(&w).map(|(x, w)| w * x[ell]).sum::<f64>() + w_new * base
    }

    /// Predictive probabilities for all patterns.
    pub fn predictive_pattern_probs(&self, py: &PitmanYor, a: &[f64]) -> Vec<f64> {
        (0..a.len()).map(|l| self.predictive_pattern_prob(py, a, l)).collect()
    }

    /// Unnormalized allocation masses for a subject with pattern `ell`
    /// (occupied clusters first, the new cluster last).
    pub fn allocation_masses(&self, py: &PitmanYor, a: &[f64], ell: usize) -> Vec<f64> {
        let (w, w_new) = self.allocation_weights(py);
        let base = a[ell] / a.iter().sum::<f64>();
        let mut m: Vec<f64> = self.atoms.iter().zip(&w).map(|(x, w)| w * x[ell]).collect();
        m.push(w_new * base);
        m
    }

    /// Draw a cluster for a subject with pattern `ell`.
    pub fn conditional_allocation<R: Rng + ?Sized>(
        &self,
        py: &PitmanYor,
        a: &[f64],
        ell: usize,
        rng: &mut R,
    ) -> Allocation {
        let masses = self.allocation_masses(py, a, ell);
        match sample_categorical(&masses, rng) {
            Some(h) if h == self.n_clusters() => Allocation::New,
            Some(h) => Allocation::Existing(h),
            None => {
                let largest = (0..self.counts.len())
                    .max_by(|&x, &y| self.counts[x].cmp(&self.counts[y]).then(y.cmp(&x)))
                    .unwrap_or(0);
                log::warn!("allocation for pattern {ell} has zero mass; using largest cluster {largest}");
                Allocation::Fallback(largest)
            }
        }
    }

    /// `n_{h,ℓ}` for every pattern, given all subjects' patterns.
    pub fn pattern_counts(&self, h: usize, patterns: &[usize]) -> Vec<usize> {
        let mut n = vec![0; self.n_patterns];
        for (a, &l) in self.assignments.iter().zip(patterns) {
            if *a == Some(h) {
                n[l] += 1;
            }
        }
        n
    }

    /// Check counts, labels, and atoms for consistency.
    pub fn check(&self) -> Result<()> {
        let mut counts = vec![0; self.atoms.len()];
        for a in self.assignments.iter().flatten() {
            if *a >= counts.len() {
                return Err(Error::Runtime(format!("label {a} out of range")));
            }
            counts[*a] += 1;
        }
        if counts != self.counts {
            return Err(Error::Runtime("cluster counts disagree with assignments".into()));
        }
        if self.counts.contains(&0) {
            return Err(Error::Runtime("empty cluster retained".into()));
        }
        for atom in &self.atoms {
            let s: f64 = atom.iter().sum();
            if (s - 1.0).abs() > 1e-12 || atom.iter().any(|v| *v < 0.0) {
                return Err(Error::Runtime(format!("atom off the simplex (sum {s})")));
            }
        }
        Ok(())
    }
}

/// Draw `ξ ~ Dirichlet(a + counts)`.
pub fn update_atom<R: Rng + ?Sized>(counts: &[usize], a: &[f64], rng: &mut R) -> Vec<f64> {
    let alpha: Vec<f64> = a.iter().zip(counts).map(|(a, n)| a + *n as f64).collect();
    let mut out = vec![0.0; a.len()];
    dirichlet_into(&alpha, rng, &mut out);
    out
}

/// Atom for a new singleton cluster whose member has pattern `ell`: `Dirichlet(a + e_ell)`.
pub fn birth_atom<R: Rng + ?Sized>(ell: usize, a: &[f64], rng: &mut R) -> Vec<f64> {
    let mut counts = vec![0; a.len()];
    counts[ell] = 1;
    update_atom(&counts, a, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::RngStream;
    use proptest::prelude::*;

    fn registry(counts: &[usize], atoms: Vec<Vec<f64>>) -> ClusterRegistry {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(h, &n)| std::iter::repeat_n(h, n))
            .collect();
        ClusterRegistry::from_labels(&labels, atoms).unwrap()
    }

    fn unit(l: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; l];
        v[k] = 1.0;
        v
    }

    #[test]
    fn py_validation() {
        assert!(PitmanYor::new(10.0, -1.0).is_ok());
        assert!(PitmanYor::new(9.5, -1.0).is_err());
        assert!(PitmanYor::new(0.5, -1.0).is_err());
        assert!(PitmanYor::new(1.0, 0.25).is_ok());
        assert_eq!(PitmanYor::default().cap(), Some(10));
        assert_eq!(PitmanYor::new(1.0, 0.0).unwrap().cap(), None);
    }

    #[test]
    fn weights_examples() {
        let py = PitmanYor::default();
        let empty = ClusterRegistry::empty(1, 8);
        assert_eq!(empty.allocation_weights(&py), (vec![], 1.0));
        let r = registry(&[5, 4], vec![unit(8, 0), unit(8, 1)]);
        let (w, w_new) = r.allocation_weights(&py);
        assert!((w[0] - 6.0 / 19.0).abs() < 1e-15);
        assert!((w[1] - 5.0 / 19.0).abs() < 1e-15);
        assert!((w_new - 8.0 / 19.0).abs() < 1e-15);
        let full = registry(&[1; 10], (0..10).map(|k| unit(8, k % 8)).collect());
        assert_eq!(full.allocation_weights(&py).1, 0.0);
    }

    #[test]
    fn predictive_examples() {
        let py = PitmanYor::default();
        let a = vec![1.0 / 20.0; 8];
        let empty = ClusterRegistry::empty(1, 8);
        for l in 0..8 {
            assert!((empty.predictive_pattern_prob(&py, &a, l) - 0.125).abs() < 1e-15);
        }
        let r = registry(&[9], vec![unit(8, 0)]);
        assert!((r.predictive_pattern_prob(&py, &a, 0) - 89.0 / 152.0).abs() < 1e-15);
    }

    #[test]
    fn detach_and_restore_round_trip() {
        let mut r = registry(&[1, 2, 1], vec![unit(3, 0), unit(3, 1), unit(3, 2)]);
        let before = r.clone();
        let d = r.detach(0);
        assert_eq!(r.n_clusters(), 2);
        assert_eq!(r.assignment(1), Some(0));
        r.check().unwrap();
        r.restore(d);
        assert_eq!(r, before);
        let d = r.detach(1);
        assert!(d.removed_atom.is_none());
        r.restore(d);
        assert_eq!(r, before);
    }

    #[test]
    fn cap_is_enforced() {
        let py = PitmanYor::new(2.0, -1.0).unwrap();
        let mut r = ClusterRegistry::empty(3, 2);
        r.attach_new(0, vec![0.5, 0.5], &py).unwrap();
        r.attach_new(1, vec![0.5, 0.5], &py).unwrap();
        assert!(matches!(
            r.attach_new(2, vec![0.5, 0.5], &py),
            Err(Error::ClusterCapExceeded { cap: 2 })
        ));
    }

    #[test]
    fn zero_mass_falls_back_to_largest() {
        let py = PitmanYor::new(2.0, -1.0).unwrap();
        let r = registry(&[1, 3], vec![unit(2, 0), unit(2, 0)]);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(
            r.conditional_allocation(&py, &[1.0, 1.0], 1, &mut rng),
            Allocation::Fallback(1)
        );
        let single = registry(&[2], vec![unit(2, 0)]);
        for _ in 0..100 {
            assert_eq!(
                single.conditional_allocation(&py, &[1.0, 1.0], 1, &mut rng),
                Allocation::New
            );
        }
    }

    #[test]
    fn allocation_frequencies_match_weights() {
        let py = PitmanYor::default();
        let a = vec![0.05; 4];
        let r = registry(
            &[3, 5, 2],
            vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.4, 0.3, 0.2, 0.1], vec![0.25; 4]],
        );
        let ell = 2;
        let masses = r.allocation_masses(&py, &a, ell);
        let total: f64 = masses.iter().sum();
        assert!((total - r.predictive_pattern_prob(&py, &a, ell)).abs() < 1e-15);
        let mut rng = RngStream::new(8, 0);
        let n = 100_000;
        let mut freq = [0usize; 4];
        for _ in 0..n {
            match r.conditional_allocation(&py, &a, ell, &mut rng) {
                Allocation::Existing(h) => freq[h] += 1,
                Allocation::New => freq[3] += 1,
                Allocation::Fallback(_) => unreachable!(),
            }
        }
        for h in 0..4 {
            let p = masses[h] / total;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq[h] as f64 / n as f64 - p).abs() < 4.0 * se, "cluster {h}");
        }
    }

    #[test]
    fn birth_atom_mean() {
        let mut rng = RngStream::new(12, 0);
        let n = 50_000;
        let mut s = 0.0;
        for _ in 0..n {
            s += birth_atom(0, &[1.0, 1.0], &mut rng)[0];
        }
        // Dirichlet(2, 1): mean 2/3, variance 2/36
        let se = (2.0 / 36.0 / n as f64).sqrt();
        assert!((s / n as f64 - 2.0 / 3.0).abs() < 4.0 * se);
    }

    proptest! {
        #[test]
        fn predictive_is_a_distribution(
            counts in prop::collection::vec(1usize..6, 0..5),
            seed in any::<u64>(),
        ) {
            let mut rng = RngStream::new(seed, 0);
            let a = vec![0.3, 0.05, 1.2];
            let atoms = counts.iter().map(|_| update_atom(&[0, 0, 0], &a, &mut rng)).collect();
            let r = registry(&counts, atoms);
            let py = PitmanYor::new(6.0, -1.0).unwrap();
            let total: f64 = r.predictive_pattern_probs(&py, &a).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
