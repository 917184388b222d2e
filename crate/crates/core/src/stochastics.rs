//! Random streams and the elementary samplers used by the filters and the Gibbs sweep.

use crate::error::{Error, Result};
use crate::special::norm_cdf;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Gamma, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a tuple of integers into a stream identifier.
pub fn stream_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5851_F42D_4C95_7F2D, |h, &k| splitmix(h ^ splitmix(k)))
}

/// A reproducible random stream addressed by `(seed, stream_id)`.
///
/// Two streams with different ids are statistically independent for practical
/// purposes, so work can be split across threads without changing any draw.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: Xoshiro256PlusPlus,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut state = splitmix(seed) ^ splitmix(stream_id ^ 0xD1B5_4A32_D192_ED03).rotate_left(23);
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            chunk.copy_from_slice(&splitmix(state).to_le_bytes());
        }
        Self {
            seed,
            stream_id,
            inner: Xoshiro256PlusPlus::from_seed(bytes),
        }
    }

    /// Stream for a structured key such as `(chain, sweep, subject, purpose)`.
    pub fn keyed(seed: u64, key: &[u64]) -> Self {
        Self::new(seed, stream_key(key))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Uniform on (0, 1]; safe to take logs of.
#[inline]
pub(crate) fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

#[inline]
pub(crate) fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Half-open interval `[lower, upper)`; either end may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncRegion {
    pub lower: f64,
    pub upper: f64,
}

impl TruncRegion {
    /// `[0, ∞)`, the latent region for a positive outcome.
    pub const POSITIVE: TruncRegion = TruncRegion {
        lower: 0.0,
        upper: f64::INFINITY,
    };
    /// `(-∞, 0)`, the latent region for a negative outcome.
    pub const NEGATIVE: TruncRegion = TruncRegion {
        lower: f64::NEG_INFINITY,
        upper: 0.0,
    };

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::InvalidArgument(format!(
                "truncation region [{lower}, {upper}) is empty"
            )));
        }
        Ok(Self { lower, upper })
    }

    #[inline]
    pub fn for_outcome(y: bool) -> Self {
        if y {
            Self::POSITIVE
        } else {
            Self::NEGATIVE
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x < self.upper
    }
}

/// Draw from N(mean, var) restricted to `region`.
pub fn sample_trunc_normal<R: Rng + ?Sized>(mean: f64, var: f64, region: TruncRegion, rng: &mut R) -> Result<f64> {
    if !mean.is_finite() {
        return Err(Error::InvalidArgument(format!("mean must be finite, got {mean}")));
    }
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance must be positive, got {var}")));
    }
    let region = TruncRegion::new(region.lower, region.upper)?;
    Ok(trunc_normal(mean, var.sqrt(), region, rng))
}

/// Unchecked truncated normal draw with standard deviation `sd`.
#[inline]
pub(crate) fn trunc_normal<R: Rng + ?Sized>(mean: f64, sd: f64, region: TruncRegion, rng: &mut R) -> f64 {
    let a = (region.lower - mean) / sd;
    let b = (region.upper - mean) / sd;
    let s = std_trunc(a, b, rng);
    let x = mean + sd * s;
    // Rounding in the affine map can leave the draw a hair outside the region.
    if x < region.lower {
        region.lower
    } else if x >= region.upper {
        region.upper.next_down()
    } else {
        x
    }
}

/// Standard normal restricted to `[a, b)`.
fn std_trunc<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (false, false) => std_normal(rng),
        (true, false) => std_lower_tail(a, rng),
        (false, true) => -std_lower_tail(-b, rng),
        (true, true) => {
            if a >= 0.0 {
                std_bounded_positive(a, b, rng)
            } else if b <= 0.0 {
                -std_bounded_positive(-b, -a, rng)
            } else {
                std_bounded_straddling(a, b, rng)
            }
        }
    }
}

/// Standard normal restricted to `[a, ∞)`.
fn std_lower_tail<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a < 0.0 {
        loop {
            let x = std_normal(rng);
            if x >= a {
                return x;
            }
        }
    }
    // Exponential proposal with the optimal rate.
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let x = a - open_uniform(rng).ln() / lambda;
        let d = x - lambda;
        if rng.random::<f64>() <= (-0.5 * d * d).exp() {
            return x;
        }
    }
}

/// `[a, b)` with `0 <= a < b < ∞`.
fn std_bounded_positive<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if 0.5 * (b * b - a * a) <= 4f64.ln() {
        let width = b - a;
        loop {
            let x = a + width * rng.random::<f64>();
            if rng.random::<f64>() <= (0.5 * (a * a - x * x)).exp() {
                return x;
            }
        }
    }
    loop {
        let x = std_lower_tail(a, rng);
        if x < b {
            return x;
        }
    }
}

/// `[a, b)` with `a < 0 < b`.
fn std_bounded_straddling<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if norm_cdf(b) - norm_cdf(a) >= 0.25 {
        loop {
            let x = std_normal(rng);
            if x >= a && x < b {
                return x;
            }
        }
    }
    let width = b - a;
    loop {
        let x = a + width * rng.random::<f64>();
        if rng.random::<f64>() <= (-0.5 * x * x).exp() {
            return x;
        }
    }
}

/// Draw from a Dirichlet distribution with concentration `alpha`.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::InvalidArgument("Dirichlet needs at least one component".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "Dirichlet concentration must be positive, got {a}"
        )));
    }
    let mut out = vec![0.0; alpha.len()];
    dirichlet_into(alpha, rng, &mut out);
    Ok(out)
}

/// Unchecked Dirichlet draw written into `out`.
pub(crate) fn dirichlet_into<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R, out: &mut [f64]) {
    // Work with log-gammas so tiny shapes do not underflow to an all-zero vector.
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = if a >= 1.0 {
            Gamma::new(a, 1.0).expect("positive shape").sample(rng).ln()
        } else {
            let g: f64 = Gamma::new(a + 1.0, 1.0).expect("positive shape").sample(rng);
            g.ln() + open_uniform(rng).ln() / a
        };
    }
    let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Draw an index with probability proportional to `weights`.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cum += w;
            last_positive = Some(i);
            if target < cum {
                return Some(i);
            }
        }
    }
    last_positive
}

/// Systematic resampling with an explicit offset `u0 ∈ [0, 1)`.
///
/// Index `j` is selected for every `k` with `(u0 + k) / count` falling in the
/// `j`-th cumulative weight interval.
pub fn systematic_resample_with_offset(weights: &[f64], count: usize, u0: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&u0) {
        return Err(Error::InvalidArgument(format!("offset must lie in [0, 1), got {u0}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let mut out = Vec::with_capacity(count);
    if !systematic_into(weights, count, u0, &mut out) {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    Ok(out)
}

/// Systematic resampling with a uniform offset drawn from `rng`.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    systematic_resample_with_offset(weights, count, rng.random::<f64>())
}

/// Core of systematic resampling; returns `false` when the weights have no mass.
pub(crate) fn systematic_into(weights: &[f64], count: usize, u0: f64, out: &mut Vec<usize>) -> bool {
    out.clear();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return false;
    }
    let Some(last_positive) = weights.iter().rposition(|&w| w > 0.0) else {
        return false;
    };
    let step = total / count as f64;
    let mut j = 0;
    let mut cum = weights[0];
    for k in 0..count {
        let target = (u0 + k as f64) * step;
        while cum <= target && j < last_positive {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    true
}

/// Kish effective sample size of unnormalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let (s, s2) = weights.iter().fold((0.0, 0.0), |(s, s2), &w| (s + w, s2 + w * w));
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{norm_cdf, norm_pdf};
    use proptest::prelude::*;
    use rand::RngCore;

    fn trunc_moments(a: f64, b: f64) -> (f64, f64) {
        // Closed-form mean and variance of a standard normal restricted to [a, b).
        let z = norm_cdf(b) - norm_cdf(a);
        let (pa, pb) = (norm_pdf(a), norm_pdf(b));
        let apa = if a.is_finite() { a * pa } else { 0.0 };
        let bpb = if b.is_finite() { b * pb } else { 0.0 };
        let mean = (pa - pb) / z;
        let var = 1.0 + (apa - bpb) / z - mean * mean;
        (mean, var)
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draws = |s: u64, id: u64| {
            let mut r = RngStream::new(s, id);
            (0..4).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        assert_eq!(draws(7, 3), draws(7, 3));
        assert_ne!(draws(7, 3), draws(7, 4));
        assert_ne!(draws(7, 3), draws(8, 3));
        assert_ne!(stream_key(&[1, 2]), stream_key(&[2, 1]));
    }

    #[test]
    fn trunc_normal_matches_closed_form_moments() {
        let regions = [
            (0.0, f64::INFINITY),
            (f64::NEG_INFINITY, 0.0),
            (2.5, f64::INFINITY),
            (-1.0, 0.5),
            (0.3, 0.6),
            (3.0, 3.8),
            (-0.05, 0.05),
            (f64::NEG_INFINITY, -6.0),
        ];
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        for &(a, b) in &regions {
            let (m, v) = trunc_moments(a, b);
            let region = TruncRegion::new(a, b).unwrap();
            let xs: Vec<f64> = (0..n)
                .map(|_| sample_trunc_normal(0.0, 1.0, region, &mut rng).unwrap())
                .collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (v / n as f64).sqrt();
            assert!((mean - m).abs() < 5.0 * se, "[{a},{b}) mean {mean} vs {m}");
            assert!((var / v - 1.0).abs() < 0.03, "[{a},{b}) var {var} vs {v}");
            assert!(xs.iter().all(|x| region.contains(*x)));
        }
    }

    #[test]
    fn trunc_normal_rejects_bad_arguments() {
        let mut rng = RngStream::new(1, 1);
        assert!(sample_trunc_normal(0.0, 0.0, TruncRegion::POSITIVE, &mut rng).is_err());
        assert!(sample_trunc_normal(f64::NAN, 1.0, TruncRegion::POSITIVE, &mut rng).is_err());
        let empty = TruncRegion { lower: 1.0, upper: 1.0 };
        assert!(sample_trunc_normal(0.0, 1.0, empty, &mut rng).is_err());
    }

    #[test]
    fn systematic_example() {
        let idx = systematic_resample_with_offset(&[0.75, 0.25], 4, 0.5).unwrap();
        assert_eq!(idx, vec![0, 0, 0, 1]);
        assert!(systematic_resample_with_offset(&[0.0, 0.0], 4, 0.5).is_err());
    }

    #[test]
    fn dirichlet_small_shapes_do_not_underflow() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..1000 {
            let d = sample_dirichlet(&[1e-3, 1e-3, 1e-3], &mut rng).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }

    #[test]
    fn dirichlet_mean() {
        let mut rng = RngStream::new(5, 0);
        let alpha = [0.5, 2.0, 4.5];
        let n = 50_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let d = sample_dirichlet(&alpha, &mut rng).unwrap();
            for k in 0..3 {
                acc[k] += d[k];
            }
        }
        for k in 0..3 {
            let m = alpha[k] / 7.0;
            let v = m * (1.0 - m) / 8.0;
            assert!((acc[k] / n as f64 - m).abs() < 5.0 * (v / n as f64).sqrt());
        }
    }

    proptest! {
        #[test]
        fn trunc_normal_stays_in_region(
            mean in -50.0f64..50.0,
            var in 1e-3f64..100.0,
            lo in -20.0f64..20.0,
            width in prop_oneof![Just(f64::INFINITY), 1e-6f64..10.0],
            seed in any::<u64>(),
        ) {
            let region = TruncRegion::new(lo, lo + width).unwrap();
            let mut rng = RngStream::new(seed, 0);
            for _ in 0..20 {
                let x = sample_trunc_normal(mean, var, region, &mut rng).unwrap();
                prop_assert!(region.contains(x), "{x} not in {region:?}");
            }
            let neg = sample_trunc_normal(mean, var, TruncRegion::NEGATIVE, &mut rng).unwrap();
            prop_assert!(neg < 0.0);
        }

        #[test]
        fn dirichlet_sums_to_one(alpha in prop::collection::vec(1e-4f64..50.0, 1..8), seed in any::<u64>()) {
            let mut rng = RngStream::new(seed, 9);
            let d = sample_dirichlet(&alpha, &mut rng).unwrap();
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(d.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn systematic_counts_are_floor_or_ceil(
            weights in prop::collection::vec(0.0f64..1.0, 1..30),
            count in 1usize..200,
            u0 in 0.0f64..1.0,
        ) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 1e-9);
            let idx = systematic_resample_with_offset(&weights, count, u0).unwrap();
            prop_assert_eq!(idx.len(), count);
            let mut counts = vec![0usize; weights.len()];
            for i in idx {
                counts[i] += 1;
            }
            for (c, w) in counts.iter().zip(&weights) {
                let expected = count as f64 * w / total;
                // floor or ceil of the expected count, with slack for rounding at integers
                prop_assert!((*c as f64 - expected).abs() < 1.0 + 1e-9);
                if *w == 0.0 {
                    prop_assert_eq!(*c, 0);
                }
            }
        }
    }
}
