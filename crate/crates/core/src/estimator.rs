//! Return estimators over a pool of recorded trials.
//!
//! Each trial pairs the policy that acted with the history it produced.
//! Because the world factor W(h) of the sampling probability is shared by
//! every policy, the likelihood ratios that drive the estimators reduce to
//! ratios of action likelihoods A(h, pi), which the dataset caches.
//!
//! Three estimators of the expected return of a `target` policy are
//! offered, kept deliberately distinct in code:
//!
//! * `Naive`: mean of R_i * A(h_i, target) / A(h_i, sampler_i), the
//!   per-trial ratio form.  Unbiased but typically wild.
//! * `Unnormalized`: sum of R_i * u_i with the mixture weights
//!   u_i = A(h_i, target) / sum_j A(h_i, sampler_j).  Exactly unbiased for
//!   any sampler collection; the weights sum to one only in expectation.
//! * `Normalized`: sum R_i u_i / sum u_i.  Biased at finite n but a convex
//!   combination of the observed returns, so it never leaves their range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, KahanSum};
use crate::policy::{FscPolicy, PolicyGradient};
use crate::world::{episode_return, History};

/// One executed trial: the controller that acted and what happened.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub policy: FscPolicy,
    pub history: History,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    Naive,
    Unnormalized,
    Normalized,
}

impl std::fmt::Display for EstimateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimateKind::Naive => "naive",
            EstimateKind::Unnormalized => "unnormalized",
            EstimateKind::Normalized => "normalized",
        })
    }
}

impl std::str::FromStr for EstimateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(EstimateKind::Naive),
            "unnormalized" => Ok(EstimateKind::Unnormalized),
            "normalized" => Ok(EstimateKind::Normalized),
            other => Err(Error::Parse {
                where_: "estimator kind".into(),
                msg: format!("unknown kind {other:?} (naive, unnormalized, normalized)"),
            }),
        }
    }
}

/// Trial pool with cached action likelihoods.
///
/// Sampler policies are deduplicated by exact parameter equality, so a pool
/// whose trials were all run by the same policy stores one likelihood
/// column instead of n.  The cache holds log A(h_i, pi_u) for every record
/// i and distinct sampler u, plus the per-record mixture denominator
/// log sum_j A(h_i, sampler_j) with multiplicities folded in.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<TrialRecord>,
    returns: Vec<f64>,
    distinct: Vec<FscPolicy>,
    counts: Vec<usize>,
    which: Vec<usize>,
    log_lik: Vec<Vec<f64>>,
    log_denom: Vec<f64>,
    log_own: Vec<f64>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    pub fn from_records(records: Vec<TrialRecord>) -> Self {
        let mut d = Dataset::new();
        for r in records {
            d.push(r);
        }
        d
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn n_distinct_samplers(&self) -> usize {
        self.distinct.len()
    }

    /// Cached log A(h_i, sampler_j), by original record indices.
    pub fn log_lik(&self, i: usize, j: usize) -> f64 {
        self.log_lik[i][self.which[j]]
    }

    pub fn push(&mut self, record: TrialRecord) {
        let dist_idx = match self.distinct.iter().position(|p| *p == record.policy) {
            Some(u) => {
                self.counts[u] += 1;
                u
            }
            None => {
                // New sampler: extend every existing record's likelihood row.
                let tables = record.policy.tables();
                for (row, r) in self.log_lik.iter_mut().zip(&self.records) {
                    row.push(tables.log_likelihood(&r.history));
                }
                self.distinct.push(record.policy.clone());
                self.counts.push(1);
                self.distinct.len() - 1
            }
        };
        let row: Vec<f64> = self
            .distinct
            .iter()
            .map(|p| p.log_likelihood(&record.history))
            .collect();
        self.returns.push(episode_return(&record.history));
        self.which.push(dist_idx);
        self.log_own.push(row[dist_idx]);
        self.log_lik.push(row);
        self.records.push(record);
        self.refresh_denominators();
    }

    /// Recomputes log sum_j A(h_i, sampler_j) for every record.  Counts
    /// enter as log multiplicities, so the sum over distinct samplers
    /// equals the sum over records exactly.
    fn refresh_denominators(&mut self) {
        let log_counts: Vec<f64> = self.counts.iter().map(|&c| (c as f64).ln()).collect();
        self.log_denom = self
            .log_lik
            .iter()
            .map(|row| {
                let terms: Vec<f64> = row
                    .iter()
                    .zip(&log_counts)
                    .map(|(&l, &lc)| l + lc)
                    .collect();
                log_sum_exp(&terms)
            })
            .collect();
    }

    /// log u_i = log A(h_i, target) - log sum_j A(h_i, sampler_j).
    fn log_weights(&self, target: &FscPolicy) -> Vec<f64> {
        let tables = target.tables();
        self.records
            .iter()
            .zip(&self.log_denom)
            .map(|(r, &den)| tables.log_likelihood(&r.history) - den)
            .collect()
    }

    /// The mixture weights u_i.  Their sum has expectation one but is not
    /// one in any given pool.
    pub fn weights(&self, target: &FscPolicy) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(self.log_weights(target).iter().map(|&s| s.exp()).collect())
    }

    /// u_i / sum_j u_j, computed under a shared shift so the ratio survives
    /// even when every raw weight underflows.
    pub fn normalized_weights(&self, target: &FscPolicy) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let log_w = self.log_weights(target);
        let shift = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            return Err(Error::Invalid(
                "target assigns zero likelihood to every recorded history".into(),
            ));
        }
        let scaled: Vec<f64> = log_w.iter().map(|&s| (s - shift).exp()).collect();
        let mut total = KahanSum::new();
        for &w in &scaled {
            total.add(w);
        }
        let total = total.value();
        Ok(scaled.into_iter().map(|w| w / total).collect())
    }

    /// Estimated expected return of `target` under the chosen estimator.
    pub fn estimate(&self, kind: EstimateKind, target: &FscPolicy) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        match kind {
            EstimateKind::Naive => {
                let tables = target.tables();
                let mut sum = KahanSum::new();
                for ((r, &own), &ret) in self.records.iter().zip(&self.log_own).zip(&self.returns) {
                    sum.add(ret * (tables.log_likelihood(&r.history) - own).exp());
                }
                Ok(sum.value() / self.len() as f64)
            }
            EstimateKind::Unnormalized => {
                let log_w = self.log_weights(target);
                let mut sum = KahanSum::new();
                for (&s, &ret) in log_w.iter().zip(&self.returns) {
                    sum.add(ret * s.exp());
                }
                Ok(sum.value())
            }
            EstimateKind::Normalized => {
                let log_w = self.log_weights(target);
                let shift = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if shift == f64::NEG_INFINITY {
                    // Zero likelihood everywhere: the ratio is undefined.
                    return Err(Error::Invalid(
                        "target assigns zero likelihood to every recorded history".into(),
                    ));
                }
                let mut num = KahanSum::new();
                let mut den = KahanSum::new();
                for (&s, &ret) in log_w.iter().zip(&self.returns) {
                    let w = (s - shift).exp();
                    num.add(ret * w);
                    den.add(w);
                }
                Ok(num.value() / den.value())
            }
        }
    }

    /// Estimate and its gradient with respect to the target's logits.
    ///
    /// Every estimator is a weighted sum of exp(log-ratio) terms, so the
    /// gradient is the matching weighted sum of likelihood gradients.
    /// Records whose coefficient is exactly zero are skipped: their
    /// gradient could only contribute 0 * x, and when the likelihood
    /// itself has underflowed that product would be 0 * NaN.
    pub fn estimate_grad(
        &self,
        kind: EstimateKind,
        target: &FscPolicy,
    ) -> Result<(f64, PolicyGradient)> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let tables = target.tables();
        let mut grad = PolicyGradient::zeros(target.n_obs, target.n_actions, target.n_mem);
        let log_num: Vec<f64> = self
            .records
            .iter()
            .map(|r| tables.log_likelihood(&r.history))
            .collect();

        // Per-record coefficients and the estimate, by kind.
        let (value, coeffs): (f64, Vec<f64>) = match kind {
            EstimateKind::Naive => {
                let n = self.len() as f64;
                let mut sum = KahanSum::new();
                let mut coeffs = Vec::with_capacity(self.len());
                for ((&num, &own), &ret) in log_num.iter().zip(&self.log_own).zip(&self.returns) {
                    let term = ret * (num - own).exp();
                    sum.add(term);
                    coeffs.push(term / n);
                }
                (sum.value() / n, coeffs)
            }
            EstimateKind::Unnormalized => {
                let mut sum = KahanSum::new();
                let mut coeffs = Vec::with_capacity(self.len());
                for ((&num, &den), &ret) in log_num.iter().zip(&self.log_denom).zip(&self.returns) {
                    let term = ret * (num - den).exp();
                    sum.add(term);
                    coeffs.push(term);
                }
                (sum.value(), coeffs)
            }
            EstimateKind::Normalized => {
                let log_w: Vec<f64> = log_num
                    .iter()
                    .zip(&self.log_denom)
                    .map(|(&num, &den)| num - den)
                    .collect();
                let shift = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if shift == f64::NEG_INFINITY {
                    return Err(Error::Invalid(
                        "target assigns zero likelihood to every recorded history".into(),
                    ));
                }
                let weights: Vec<f64> = log_w.iter().map(|&s| (s - shift).exp()).collect();
                let mut num = KahanSum::new();
                let mut den = KahanSum::new();
                for (&w, &ret) in weights.iter().zip(&self.returns) {
                    num.add(ret * w);
                    den.add(w);
                }
                let den = den.value();
                let est = num.value() / den;
                let coeffs = weights
                    .iter()
                    .zip(&self.returns)
                    .map(|(&w, &ret)| (ret - est) * w / den)
                    .collect();
                (est, coeffs)
            }
        };

        for (record, &coeff) in self.records.iter().zip(&coeffs) {
            if coeff == 0.0 {
                continue;
            }
            let (_, g) = tables.log_likelihood_grad(&record.history);
            grad.scaled_add(coeff, &g);
        }
        Ok((value, grad))
    }

    /// Estimated difference between the expected returns of two targets.
    ///
    /// For `Naive` and `Unnormalized` this is the plain difference of the
    /// two estimates.  For `Normalized` it is the cross statistic
    ///
    /// ```text
    /// sum_i R_i u_i^a * sum_j u_j^b  -  sum_i R_i u_i^b * sum_j u_j^a
    /// ```
    ///
    /// rather than the difference of the two ratios: the ratio difference
    /// has an O(1) bias for disparate targets, while the cross form's
    /// expectation is exactly the return difference minus a 1/n coupling
    /// term, and it vanishes identically when the targets coincide.
    pub fn difference(
        &self,
        kind: EstimateKind,
        target_a: &FscPolicy,
        target_b: &FscPolicy,
    ) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        match kind {
            EstimateKind::Naive | EstimateKind::Unnormalized => {
                Ok(self.estimate(kind, target_a)? - self.estimate(kind, target_b)?)
            }
            EstimateKind::Normalized => {
                let log_a = self.log_weights(target_a);
                let log_b = self.log_weights(target_b);
                let shift_a = log_a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let shift_b = log_b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if shift_a == f64::NEG_INFINITY || shift_b == f64::NEG_INFINITY {
                    // One side has zero weight everywhere: both cross terms
                    // vanish.
                    return Ok(0.0);
                }
                let mut num_a = KahanSum::new();
                let mut den_a = KahanSum::new();
                let mut num_b = KahanSum::new();
                let mut den_b = KahanSum::new();
                for ((&sa, &sb), &ret) in log_a.iter().zip(&log_b).zip(&self.returns) {
                    let wa = (sa - shift_a).exp();
                    let wb = (sb - shift_b).exp();
                    num_a.add(ret * wa);
                    den_a.add(wa);
                    num_b.add(ret * wb);
                    den_b.add(wb);
                }
                let cross = num_a.value() * den_b.value() - num_b.value() * den_a.value();
                if cross == 0.0 {
                    return Ok(0.0);
                }
                Ok((shift_a + shift_b).exp() * cross)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::likelihood_batch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_policy(rng: &mut ChaCha8Rng, n_mem: usize) -> FscPolicy {
        let mut p = FscPolicy::uniform(2, 2, n_mem);
        for x in 0..2 {
            for m in 0..n_mem {
                for a in 0..2 {
                    p.act_logits[x][m][a] = 3.0 * (rng.random::<f64>() - 0.5);
                }
                for k in 0..n_mem {
                    p.mem_logits[x][m][k] = 3.0 * (rng.random::<f64>() - 0.5);
                }
            }
        }
        p
    }

    fn random_record(rng: &mut ChaCha8Rng, n_mem: usize, t: usize) -> TrialRecord {
        let policy = random_policy(rng, n_mem);
        let history = History {
            obs_seq: (0..t).map(|_| rng.random_range(0..2)).collect(),
            act_seq: (0..t).map(|_| rng.random_range(0..2)).collect(),
            rew_seq: (0..t).map(|_| rng.random::<f64>()).collect(),
            state_seq: None,
        };
        TrialRecord { policy, history }
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, n_mem: usize) -> Dataset {
        Dataset::from_records((0..n).map(|_| random_record(rng, n_mem, 6)).collect())
    }

    #[test]
    fn weights_match_direct_likelihood_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = random_dataset(&mut rng, 4, 2);
        let target = random_policy(&mut rng, 2);
        let weights = data.weights(&target).unwrap();
        let samplers: Vec<FscPolicy> = data.records().iter().map(|r| r.policy.clone()).collect();
        for (i, record) in data.records().iter().enumerate() {
            let num = target.log_likelihood(&record.history).exp();
            let den: f64 = likelihood_batch(&samplers, &record.history)
                .iter()
                .map(|&l| l.exp())
                .sum();
            assert!((weights[i] - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_cache_agrees_with_fresh_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        // Repeat one policy so deduplication actually kicks in.
        let shared = random_policy(&mut rng, 2);
        let mut records: Vec<TrialRecord> = (0..3).map(|_| random_record(&mut rng, 2, 6)).collect();
        records[1].policy = shared.clone();
        records.push(TrialRecord {
            policy: shared,
            history: records[0].history.clone(),
        });
        let data = Dataset::from_records(records.clone());
        assert_eq!(data.n_distinct_samplers(), 3);
        for i in 0..data.len() {
            for j in 0..data.len() {
                let fresh = records[j].policy.log_likelihood(&records[i].history);
                assert_eq!(data.log_lik(i, j), fresh);
            }
        }
    }

    #[test]
    fn single_trial_naive_equals_unnormalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = random_dataset(&mut rng, 1, 2);
        let target = random_policy(&mut rng, 2);
        let a = data.estimate(EstimateKind::Naive, &target).unwrap();
        let b = data.estimate(EstimateKind::Unnormalized, &target).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn identical_samplers_reduce_to_single_denominator() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let sampler = random_policy(&mut rng, 1);
        let records: Vec<TrialRecord> = (0..5)
            .map(|_| {
                let mut r = random_record(&mut rng, 1, 6);
                r.policy = sampler.clone();
                r
            })
            .collect();
        let data = Dataset::from_records(records.clone());
        assert_eq!(data.n_distinct_samplers(), 1);
        let target = random_policy(&mut rng, 1);
        let weights = data.weights(&target).unwrap();
        for (i, r) in records.iter().enumerate() {
            let expect = (target.log_likelihood(&r.history) - sampler.log_likelihood(&r.history))
                .exp()
                / 5.0;
            assert!((weights[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_estimate_stays_inside_return_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..50 {
            let data = random_dataset(&mut rng, 6, 2);
            let target = random_policy(&mut rng, 2);
            let est = data.estimate(EstimateKind::Normalized, &target).unwrap();
            let lo = data.returns().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = data
                .returns()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(est >= lo - 1e-12 && est <= hi + 1e-12);
            let nw = data.normalized_weights(&target).unwrap();
            let total: f64 = nw.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(nw.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn normalized_difference_is_exactly_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let data = random_dataset(&mut rng, 5, 2);
        let a = random_policy(&mut rng, 2);
        let b = random_policy(&mut rng, 2);
        let ab = data.difference(EstimateKind::Normalized, &a, &b).unwrap();
        let ba = data.difference(EstimateKind::Normalized, &b, &a).unwrap();
        assert_eq!(ab, -ba);
        assert_eq!(
            data.difference(EstimateKind::Normalized, &a, &a).unwrap(),
            0.0
        );
    }

    #[test]
    fn unnormalized_difference_matches_estimate_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let data = random_dataset(&mut rng, 5, 2);
        let a = random_policy(&mut rng, 2);
        let b = random_policy(&mut rng, 2);
        let gap = data.estimate(EstimateKind::Unnormalized, &a).unwrap()
            - data.estimate(EstimateKind::Unnormalized, &b).unwrap();
        let diff = data.difference(EstimateKind::Unnormalized, &a, &b).unwrap();
        assert!((gap - diff).abs() < 1e-12);
    }

    #[test]
    fn estimate_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let data = random_dataset(&mut rng, 4, 2);
        for kind in [
            EstimateKind::Naive,
            EstimateKind::Unnormalized,
            EstimateKind::Normalized,
        ] {
            let target = random_policy(&mut rng, 2);
            let (value, grad) = data.estimate_grad(kind, &target).unwrap();
            assert!((value - data.estimate(kind, &target).unwrap()).abs() < 1e-12);
            let flat = grad.flatten();
            let theta = target.flatten_logits();
            let step = 1e-5;
            for i in 0..theta.len() {
                let mut up = theta.clone();
                up[i] += step;
                let mut dn = theta.clone();
                dn[i] -= step;
                let fd = (data
                    .estimate(kind, &target.with_logits(&up).unwrap())
                    .unwrap()
                    - data
                        .estimate(kind, &target.with_logits(&dn).unwrap())
                        .unwrap())
                    / (2.0 * step);
                let denom = fd.abs().max(flat[i].abs()).max(1e-3);
                assert!(
                    (fd - flat[i]).abs() / denom < 1e-4,
                    "{kind} coord {i}: fd {fd} vs {}",
                    flat[i]
                );
            }
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = Dataset::new();
        let target = FscPolicy::uniform(2, 2, 1);
        assert!(matches!(
            data.estimate(EstimateKind::Normalized, &target),
            Err(Error::EmptyDataset)
        ));
        assert!(data.weights(&target).is_err());
    }

    #[test]
    fn underflowing_weights_still_normalize() {
        // Target that makes every recorded action astronomically unlikely:
        // raw u_i underflow to zero, the shifted ratio must survive.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let sampler = FscPolicy::uniform(2, 2, 1);
        let records: Vec<TrialRecord> = (0..3)
            .map(|_| {
                let mut r = random_record(&mut rng, 1, 400);
                r.policy = sampler.clone();
                for a in &mut r.history.act_seq {
                    *a = 0;
                }
                r
            })
            .collect();
        let data = Dataset::from_records(records);
        let mut target = FscPolicy::uniform(2, 2, 1);
        for x in 0..2 {
            target.act_logits[x][0] = vec![-400.0, 400.0];
        }
        let raw = data.weights(&target).unwrap();
        assert!(raw.iter().all(|&w| w == 0.0));
        let est = data.estimate(EstimateKind::Normalized, &target).unwrap();
        assert!(est.is_finite());
        let nw = data.normalized_weights(&target).unwrap();
        assert!((nw.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
