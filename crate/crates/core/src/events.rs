//! Clinical event indicators computed from a dynamic score series, and the
//! pattern code built from them.

use crate::error::{Error, Result};
use crate::special::norm_ppf;

/// Cut-offs for the three event indicators.
#[derive(Clone, Debug, PartialEq)]
pub struct EventThresholds {
    pub r1_mean_cut: f64,
    pub r2_high_cut: f64,
    pub r2_risk_cut: f64,
    pub r2_ratio_cut: f64,
    pub r3_window: usize,
}

impl Default for EventThresholds {
    fn default() -> Self {
        Self {
            r1_mean_cut: 1.0,
            r2_high_cut: norm_ppf(0.95),
            r2_risk_cut: 1.0,
            r2_ratio_cut: 0.5,
            r3_window: 90,
        }
    }
}

impl EventThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("events.r1_mean_cut", self.r1_mean_cut),
            ("events.r2_high_cut", self.r2_high_cut),
            ("events.r2_risk_cut", self.r2_risk_cut),
            ("events.r2_ratio_cut", self.r2_ratio_cut),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        if self.r2_high_cut <= self.r2_risk_cut {
            return Err(Error::config("events.r2_high_cut", "must exceed r2_risk_cut"));
        }
        if self.r3_window == 0 {
            return Err(Error::config("events.r3_window", "must be at least 1"));
        }
        Ok(())
    }
}

/// Elevated average risk: mean score at or above the cut.
pub fn event_r1(gamma: &[f64], th: &EventThresholds) -> Result<bool> {
    if gamma.is_empty() {
        return Err(Error::InvalidArgument("score series is empty".into()));
    }
    Ok(mean(gamma) >= th.r1_mean_cut)
}

/// Clumping: high-risk days make up a large share of at-risk days.
pub fn event_r2(gamma: &[f64], th: &EventThresholds) -> bool {
    let high = gamma.iter().filter(|g| **g >= th.r2_high_cut).count();
    let risk = gamma.iter().filter(|g| **g >= th.r2_risk_cut).count();
    high as f64 / (risk as f64 + 1.0) >= th.r2_ratio_cut
}

/// Non-response to the last treatment change: mean score after the change is
/// at least the mean over the window before it. Both windows include the change day.
pub fn event_r3(gamma: &[f64], treatment_changes: &[usize], th: &EventThresholds) -> Result<bool> {
    let last = *treatment_changes
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("no treatment changes".into()))?;
    if last == 0 || last > gamma.len() {
        return Err(Error::DayOutOfRange {
            day: last,
            len: gamma.len(),
        });
    }
    let (pre, post) = pre_post_means(gamma, last, gamma.len(), th.r3_window);
    Ok(pre <= post)
}

/// Means over `[max(change - window, 1), change]` and `[change, end]`, all 1-based inclusive.
pub(crate) fn pre_post_means(gamma: &[f64], change: usize, end: usize, window: usize) -> (f64, f64) {
    let lo = change.saturating_sub(window).max(1);
    (mean(&gamma[lo - 1..change]), mean(&gamma[change - 1..end]))
}

pub fn encode(r1: bool, r2: bool, r3: bool) -> usize {
    4 * r1 as usize + 2 * r2 as usize + r3 as usize
}

pub fn decode(code: usize) -> (bool, bool, bool) {
    (code & 4 != 0, code & 2 != 0, code & 1 != 0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Rule mapping a score series to a pattern index in `0..n_patterns()`.
#[derive(Clone, Debug, PartialEq)]
pub enum PatternRule {
    /// The three clinical indicators encoded as `4 r1 + 2 r2 + r3` (eight patterns).
    Clinical(EventThresholds),
    /// Two patterns: 1 when the mean score reaches `cut`, else 0.
    MeanThreshold { cut: f64 },
}

impl Default for PatternRule {
    fn default() -> Self {
        PatternRule::Clinical(EventThresholds::default())
    }
}

impl PatternRule {
    pub fn n_patterns(&self) -> usize {
        match self {
            PatternRule::Clinical(_) => 8,
            PatternRule::MeanThreshold { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PatternRule::Clinical(th) => th.validate(),
            PatternRule::MeanThreshold { cut } if !cut.is_finite() => {
                Err(Error::config("events.cut", "must be finite"))
            }
            PatternRule::MeanThreshold { .. } => Ok(()),
        }
    }

    /// Pattern of a non-empty score series whose change days lie within it.
    pub fn classify(&self, gamma: &[f64], treatment_changes: &[usize]) -> usize {
        debug_assert!(!gamma.is_empty());
        match self {
            PatternRule::Clinical(th) => {
                let r1 = mean(gamma) >= th.r1_mean_cut;
                let r2 = event_r2(gamma, th);
                let last = treatment_changes
                    .iter()
                    .copied()
                    .max()
                    .unwrap_or(1)
                    .clamp(1, gamma.len());
                let (pre, post) = pre_post_means(gamma, last, gamma.len(), th.r3_window);
                encode(r1, r2, pre <= post)
            }
            PatternRule::MeanThreshold { cut } => (mean(gamma) >= *cut) as usize,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn r1_examples() {
        let th = EventThresholds::default();
        assert!(event_r1(&[1.0; 5], &th).unwrap());
        assert!(!event_r1(&[0.0; 5], &th).unwrap());
        assert!(event_r1(&[0.5, 1.5, 2.0], &th).unwrap());
        assert!(event_r1(&[], &th).is_err());
    }

    #[test]
    fn r2_examples() {
        let th = EventThresholds::default();
        assert!((th.r2_high_cut - 1.644_853_626_951_472_2).abs() < 1e-12);
        assert!(!event_r2(&[0.5; 10], &th));
        let mut g = vec![2.0; 10];
        g.extend([1.2; 5]);
        g.extend([0.0; 7]);
        assert!(event_r2(&g, &th)); // 10 / 16
        let mut g = vec![2.0; 3];
        g.extend([1.2; 6]);
        assert!(!event_r2(&g, &th)); // 3 / 10
    }

    #[test]
    fn r3_examples() {
        let th = EventThresholds::default();
        assert!(event_r3(&[0.7; 20], &[1, 10], &th).unwrap());
        assert!(!event_r3(&[2.0, 0.0, 0.0], &[1], &th).unwrap());
        let dec: Vec<f64> = (0..200).map(|t| 5.0 - 0.01 * t as f64).collect();
        assert!(!event_r3(&dec, &[1, 101], &th).unwrap());
        assert!(event_r3(&[1.0], &[], &th).is_err());
    }

    #[test]
    fn r3_window_is_clipped_at_day_one() {
        // change at day 50 with a 90 day window: pre covers days 1..=50
        let th = EventThresholds::default();
        let mut g = vec![0.0; 100];
        g[0] = 100.0;
        // pre mean = 100/50 = 2, post mean over 50..=100 = 0
        assert!(!event_r3(&g, &[1, 50], &th).unwrap());
        g[0] = 0.0;
        g[99] = 51.0; // post mean = 51/51 = 1 > 0
        assert!(event_r3(&g, &[1, 50], &th).unwrap());
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(false, false, false), 0);
        assert_eq!(encode(false, true, false), 2);
        assert_eq!(encode(true, true, true), 7);
        for c in 0..8 {
            let (a, b, d) = decode(c);
            assert_eq!(encode(a, b, d), c);
        }
    }

    #[test]
    fn zero_scores_give_pattern_one() {
        let rule = PatternRule::default();
        assert_eq!(rule.classify(&[0.0; 30], &[1, 15]), 1);
    }

    proptest! {
        #[test]
        fn classify_agrees_with_indicators(
            gamma in prop::collection::vec(-3.0f64..3.0, 1..150),
            change_frac in 0.0f64..1.0,
        ) {
            let th = EventThresholds::default();
            let change = 1 + ((gamma.len() - 1) as f64 * change_frac) as usize;
            let changes = if change > 1 { vec![1, change] } else { vec![1] };
            let code = PatternRule::Clinical(th.clone()).classify(&gamma, &changes);
            let expect = encode(
                event_r1(&gamma, &th).unwrap(),
                event_r2(&gamma, &th),
                event_r3(&gamma, &changes, &th).unwrap(),
            );
            prop_assert_eq!(code, expect);
        }

        #[test]
        fn r2_never_divides_by_zero(gamma in prop::collection::vec(-1e3f64..1e3, 0..50)) {
            let _ = event_r2(&gamma, &EventThresholds::default());
        }
    }
}
