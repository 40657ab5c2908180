//! Small numeric helpers shared across the crate.
//!
//! Everything here is deterministic: fixed evaluation order, no
//! platform-dependent intrinsics.  The experiment pipeline relies on
//! byte-identical reruns, so reductions must not be reordered.

/// log(sum(exp(xs))) with the usual max shift.
///
/// Returns `f64::NEG_INFINITY` for an empty slice or when every entry is
/// negative infinity.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All -inf (or empty): the sum is zero.  +inf propagates as +inf.
        return m;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Softmax of a logit row.  Entries are mathematically strictly positive;
/// in floating point an entry more than ~745 nats below the row maximum
/// underflows to zero, which callers in log space never observe.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    out
}

/// Log-softmax of a logit row: exact in log space, never -inf for finite
/// logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(logits);
    logits.iter().map(|&l| l - z).collect()
}

/// Compensated (Kahan) accumulator.  Used where millions of terms feed a
/// tolerance of 1e-10 or tighter.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Draw an index from a probability row using a single uniform variate.
///
/// The row must sum to ~1; any residual mass from rounding goes to the last
/// index.  Iteration order is fixed (ascending index), which pins the
/// rng-to-outcome mapping for reproducibility.
pub fn sample_categorical<R: rand::Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    debug_assert!(!probs.is_empty());
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// SplitMix64 step, used to derive independent per-run seeds from a master
/// seed.  Adding runs never perturbs the seeds of earlier runs.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Max-norm of a vector.
pub fn max_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [-1.0f64, 0.5, -3.25, 2.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_handles_extreme_shifts() {
        let xs = [-1000.0, -1000.0];
        let got = log_sum_exp(&xs);
        assert!((got - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_rows_normalize() {
        let p = softmax(&[50.0, -50.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[0] > 0.999);
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        let q = softmax(&[1.0, 2.0, 3.0]);
        for (a, b) in lp.iter().zip(&q) {
            assert!((a.exp() - b).abs() < 1e-15);
        }
    }

    #[test]
    fn categorical_frequencies_track_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let probs = [0.2, 0.5, 0.3];
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[sample_categorical(&mut rng, &probs)] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let freq = *c as f64 / 100_000.0;
            assert!((freq - p).abs() < 0.01, "freq {freq} vs p {p}");
        }
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(42, 0);
        assert_eq!(a, derive_seed(42, 0));
        assert_ne!(a, derive_seed(42, 1));
        assert_ne!(a, derive_seed(43, 0));
    }

    #[test]
    fn kahan_beats_naive_on_tiny_increments() {
        let mut k = KahanSum::new();
        k.add(1.0);
        for _ in 0..10_000_000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-9)).abs() < 1e-12);
    }
}
