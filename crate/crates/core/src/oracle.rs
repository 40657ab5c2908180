//! Ground-truth machinery for worlds small enough to enumerate.
//!
//! Everything here is deliberately independent of the estimator code: the
//! moment formulas below are evaluated from first principles over the
//! enumerated history space, so they can confirm (or indict) the sampling
//! estimators instead of merely agreeing with them by construction.  The
//! one place estimator code *is* invoked, `dataset_expectation`, runs the
//! production statistic over every possible dataset and weights it by the
//! dataset's exact probability, which turns "unbiased" from a claim into a
//! finite sum.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimator::{Dataset, TrialRecord};
use crate::numeric::{derive_seed, KahanSum};
use crate::policy::{FscActor, FscPolicy};
use crate::world::{sample_episode, History, Pomdp};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One distinguishable history of a fully enumerated world, with the
/// policy-independent factor of its probability.
///
/// `weight` is W(h): the product of start, observation and transition
/// probabilities summed over every latent state path compatible with the
/// history.  For any action-selection likelihood A(h, pi) the sampling
/// probability is exactly `weight * A(h, pi)`.
#[derive(Debug, Clone)]
pub struct HistoryAtom {
    pub history: History,
    pub weight: f64,
    pub ret: f64,
}

/// Enumerates every positive-probability history of `model`.
///
/// The traversal visits `n_states * (n_obs * n_actions * n_states)^horizon`
/// branches in the worst case; if that exceeds `cap` the world is refused
/// rather than ground through.  Only tiny diagnostic worlds are meant to
/// pass.  Atoms are returned in a deterministic order (sorted by
/// observation, action, then reward sequence).
pub fn enumerate_atoms(model: &Pomdp, cap: u128) -> Result<Vec<HistoryAtom>> {
    model.validate()?;
    let per_step = (model.n_obs as u128)
        .saturating_mul(model.n_actions as u128)
        .saturating_mul(model.n_states as u128);
    let branches = per_step
        .checked_pow(model.horizon as u32)
        .and_then(|b| b.checked_mul(model.n_states as u128))
        .unwrap_or(u128::MAX);
    if branches > cap {
        return Err(Error::TooLarge {
            what: "history branches",
            count: branches,
            cap,
        });
    }

    // Merge state paths that produce the same observable trace.  Rewards
    // are keyed by their bit patterns; the values themselves come from the
    // reward table, so equal patterns mean equal rewards.
    type Key = (Vec<usize>, Vec<usize>, Vec<u64>);
    let mut merged: BTreeMap<Key, f64> = BTreeMap::new();
    let mut obs_seq = Vec::with_capacity(model.horizon);
    let mut act_seq = Vec::with_capacity(model.horizon);
    let mut rew_seq: Vec<f64> = Vec::with_capacity(model.horizon);

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        model: &Pomdp,
        t: usize,
        s: usize,
        weight: f64,
        obs_seq: &mut Vec<usize>,
        act_seq: &mut Vec<usize>,
        rew_seq: &mut Vec<f64>,
        merged: &mut BTreeMap<Key, f64>,
    ) {
        if t == model.horizon {
            let key = (
                obs_seq.clone(),
                act_seq.clone(),
                rew_seq.iter().map(|r| r.to_bits()).collect(),
            );
            *merged.entry(key).or_insert(0.0) += weight;
            return;
        }
        for (x, &po) in model.obs[s].iter().enumerate() {
            if po == 0.0 {
                continue;
            }
            for a in 0..model.n_actions {
                for (s_next, &pt) in model.trans[s][a].iter().enumerate() {
                    if pt == 0.0 {
                        continue;
                    }
                    obs_seq.push(x);
                    act_seq.push(a);
                    rew_seq.push(model.reward[s][a][s_next]);
                    recurse(
                        model,
                        t + 1,
                        s_next,
                        weight * po * pt,
                        obs_seq,
                        act_seq,
                        rew_seq,
                        merged,
                    );
                    obs_seq.pop();
                    act_seq.pop();
                    rew_seq.pop();
                }
            }
        }
    }

    for (s, &p0) in model.start.iter().enumerate() {
        if p0 == 0.0 {
            continue;
        }
        recurse(
            model,
            0,
            s,
            p0,
            &mut obs_seq,
            &mut act_seq,
            &mut rew_seq,
            &mut merged,
        );
    }

    Ok(merged
        .into_iter()
        .map(|((obs_seq, act_seq, rew_bits), weight)| {
            let rew_seq: Vec<f64> = rew_bits.into_iter().map(f64::from_bits).collect();
            let ret = rew_seq.iter().sum();
            HistoryAtom {
                history: History {
                    obs_seq,
                    act_seq,
                    rew_seq,
                    state_seq: None,
                },
                weight,
                ret,
            }
        })
        .collect())
}

/// p(h | policy) for every atom: weight times action likelihood.
pub fn atom_probs(atoms: &[HistoryAtom], policy: &FscPolicy) -> Vec<f64> {
    let tables = policy.tables();
    atoms
        .iter()
        .map(|a| a.weight * tables.log_likelihood(&a.history).exp())
        .collect()
}

/// Expected return of `policy` as an explicit sum over atoms.
pub fn exact_return_from_atoms(atoms: &[HistoryAtom], policy: &FscPolicy) -> f64 {
    let probs = atom_probs(atoms, policy);
    let mut sum = KahanSum::new();
    for (atom, &p) in atoms.iter().zip(&probs) {
        sum.add(atom.ret * p);
    }
    sum.value()
}

/// First and second moments of the two difference statistics, computed
/// directly from history-space sums.
///
/// With p_X(h) the sampling probability of history h under policy X,
/// p_bar(h) the slot-average of the sampler probabilities and
/// p_bar(h, g) the slot-average of products, the statistics built on the
/// mixture weights u satisfy
///
/// * E[unnormalized difference] = R_a - R_b (exact),
/// * E[cross-normalized difference] = R_a - R_b - cross_bias / n (exact),
/// * var[unnormalized difference] is an exact single/pair sum,
/// * var[cross-normalized difference] is the first-order expansion around
///   the weight means; its error shrinks as 1/n^2.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub n_trials: usize,
    pub return_a: f64,
    pub return_b: f64,
    /// Sampler-coupling term: zero-mean-shift between the targets induced
    /// by sharing one denominator.  Equals `return_a - return_b` when all
    /// samplers coincide.
    pub cross_bias: f64,
    pub expected_unnorm_diff: f64,
    pub expected_norm_diff: f64,
    pub var_unnorm_diff: f64,
    /// First-order (delta) approximation; error is O(1/n^2).
    pub var_norm_diff: f64,
}

/// Evaluates `MomentReport` for `n_trials` slots whose samplers cycle
/// through `samplers` (slot i uses `samplers[i % samplers.len()]`).
pub fn moments(
    atoms: &[HistoryAtom],
    samplers: &[FscPolicy],
    n_trials: usize,
    target_a: &FscPolicy,
    target_b: &FscPolicy,
) -> Result<MomentReport> {
    if samplers.is_empty() {
        return Err(Error::Invalid("no sampler policies given".into()));
    }
    if n_trials == 0 {
        return Err(Error::EmptyDataset);
    }
    if atoms.is_empty() {
        return Err(Error::Invalid("no history atoms given".into()));
    }
    let n = n_trials;
    let slot_probs: Vec<Vec<f64>> = (0..n)
        .map(|i| atom_probs(atoms, &samplers[i % samplers.len()]))
        .collect();
    let m = atoms.len();
    let mut p_bar = vec![0.0; m];
    for probs in &slot_probs {
        for (acc, &p) in p_bar.iter_mut().zip(probs) {
            *acc += p;
        }
    }
    for acc in &mut p_bar {
        *acc /= n as f64;
        if *acc == 0.0 {
            return Err(Error::Invalid(
                "sampler mixture assigns zero probability to an enumerated history".into(),
            ));
        }
    }

    let p_a = atom_probs(atoms, target_a);
    let p_b = atom_probs(atoms, target_b);
    let rets: Vec<f64> = atoms.iter().map(|a| a.ret).collect();

    let mut return_a = KahanSum::new();
    let mut return_b = KahanSum::new();
    for h in 0..m {
        return_a.add(rets[h] * p_a[h]);
        return_b.add(rets[h] * p_b[h]);
    }
    let return_a = return_a.value();
    let return_b = return_b.value();

    // Per-history numerators of the two statistics' slot summands
    // (each summand is numerator / (n * p_bar)).
    let unnorm_num: Vec<f64> = (0..m).map(|h| rets[h] * (p_a[h] - p_b[h])).collect();
    let norm_num: Vec<f64> = (0..m)
        .map(|h| (rets[h] - return_b) * p_a[h] - (rets[h] - return_a) * p_b[h])
        .collect();

    let mut single_unnorm = KahanSum::new();
    let mut single_norm = KahanSum::new();
    for h in 0..m {
        single_unnorm.add(unnorm_num[h] * unnorm_num[h] / p_bar[h]);
        single_norm.add(norm_num[h] * norm_num[h] / p_bar[h]);
    }

    let mut pair_unnorm = KahanSum::new();
    let mut pair_norm = KahanSum::new();
    let mut cross_bias = KahanSum::new();
    for h in 0..m {
        for g in 0..m {
            let mut pair_bar = 0.0;
            for probs in &slot_probs {
                pair_bar += probs[h] * probs[g];
            }
            pair_bar /= n as f64;
            let coupling = pair_bar / (p_bar[h] * p_bar[g]);
            pair_unnorm.add(unnorm_num[h] * unnorm_num[g] * coupling);
            pair_norm.add(norm_num[h] * norm_num[g] * coupling);
            cross_bias.add((rets[h] - rets[g]) * p_a[h] * p_b[g] * coupling);
        }
    }
    let cross_bias = cross_bias.value();

    Ok(MomentReport {
        n_trials: n,
        return_a,
        return_b,
        cross_bias,
        expected_unnorm_diff: return_a - return_b,
        expected_norm_diff: return_a - return_b - cross_bias / n as f64,
        var_unnorm_diff: (single_unnorm.value() - pair_unnorm.value()) / n as f64,
        var_norm_diff: (single_norm.value() - pair_norm.value()) / n as f64,
    })
}

/// Exact mean, variance and total probability of a statistic over every
/// dataset a sampling experiment could produce.
#[derive(Debug, Clone, Copy)]
pub struct ExpectationSummary {
    pub mean: f64,
    pub variance: f64,
    /// Sum of dataset probabilities; a healthy enumeration gives 1 up to
    /// rounding.
    pub total_probability: f64,
}

/// Runs `statistic` on all `atoms.len() ^ n_trials` datasets (slot i drawn
/// from `samplers[i % samplers.len()]`) and weights each value by the exact
/// probability of that dataset.  Zero-probability datasets are skipped
/// without evaluating the statistic.
pub fn dataset_expectation<F>(
    atoms: &[HistoryAtom],
    samplers: &[FscPolicy],
    n_trials: usize,
    cap: u128,
    statistic: F,
) -> Result<ExpectationSummary>
where
    F: Fn(&Dataset) -> f64,
{
    if samplers.is_empty() {
        return Err(Error::Invalid("no sampler policies given".into()));
    }
    if n_trials == 0 {
        return Err(Error::EmptyDataset);
    }
    let m = atoms.len();
    let combos = (m as u128)
        .checked_pow(n_trials as u32)
        .unwrap_or(u128::MAX);
    if combos > cap {
        return Err(Error::TooLarge {
            what: "dataset combinations",
            count: combos,
            cap,
        });
    }
    let slot_probs: Vec<Vec<f64>> = (0..n_trials)
        .map(|i| atom_probs(atoms, &samplers[i % samplers.len()]))
        .collect();

    let mut mean = KahanSum::new();
    let mut second = KahanSum::new();
    let mut total = KahanSum::new();
    let mut idx = vec![0usize; n_trials];
    loop {
        let mut prob = 1.0;
        for (slot, &atom) in idx.iter().enumerate() {
            prob *= slot_probs[slot][atom];
        }
        if prob > 0.0 {
            let records: Vec<TrialRecord> = idx
                .iter()
                .enumerate()
                .map(|(slot, &atom)| TrialRecord {
                    policy: samplers[slot % samplers.len()].clone(),
                    history: atoms[atom].history.clone(),
                })
                .collect();
            let value = statistic(&Dataset::from_records(records));
            mean.add(prob * value);
            second.add(prob * value * value);
            total.add(prob);
        }
        // Odometer increment over atom indices.
        let mut slot = 0;
        loop {
            if slot == n_trials {
                let mean = mean.value();
                return Ok(ExpectationSummary {
                    mean,
                    variance: (second.value() - mean * mean).max(0.0),
                    total_probability: total.value(),
                });
            }
            idx[slot] += 1;
            if idx[slot] < m {
                break;
            }
            idx[slot] = 0;
            slot += 1;
        }
    }
}

/// Expected return of a controller by exact forward propagation of the
/// joint (state, memory) distribution.  No sampling is involved, so this
/// is the reference value the estimators are judged against.
pub fn exact_return(model: &Pomdp, policy: &FscPolicy) -> Result<f64> {
    if policy.n_obs != model.n_obs || policy.n_actions != model.n_actions {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{} (obs x actions), world needs {}x{}",
            policy.n_obs, policy.n_actions, model.n_obs, model.n_actions
        )));
    }
    let tables = policy.tables();
    let mm = policy.n_mem;
    let mut dist = vec![vec![0.0; mm]; model.n_states];
    for (s, &p0) in model.start.iter().enumerate() {
        if p0 == 0.0 {
            continue;
        }
        for (m, &pm) in policy.init_mem.iter().enumerate() {
            dist[s][m] = p0 * pm;
        }
    }
    let mut total = KahanSum::new();
    for _ in 0..model.horizon {
        let mut next = vec![vec![0.0; mm]; model.n_states];
        for s in 0..model.n_states {
            for m in 0..mm {
                let mass = dist[s][m];
                if mass == 0.0 {
                    continue;
                }
                for (x, &po) in model.obs[s].iter().enumerate() {
                    if po == 0.0 {
                        continue;
                    }
                    for a in 0..model.n_actions {
                        let w = mass * po * tables.act[x][m][a];
                        if w == 0.0 {
                            continue;
                        }
                        for (s_next, &pt) in model.trans[s][a].iter().enumerate() {
                            if pt == 0.0 {
                                continue;
                            }
                            total.add(w * pt * model.reward[s][a][s_next]);
                            let wt = w * pt;
                            for (m_next, &pw) in tables.mem[x][m].iter().enumerate() {
                                next[s_next][m_next] += wt * pw;
                            }
                        }
                    }
                }
            }
        }
        dist = next;
    }
    Ok(total.value())
}

/// Exhaustive search over two-observation, two-action memoryless
/// controllers on a `(resolution + 1)^2` probability grid.  Returns the
/// best controller and its exact return; ties keep the first grid point
/// scanned (row-major in P(action 0 | obs)).
pub fn best_reactive_on_grid(model: &Pomdp, resolution: usize) -> Result<(FscPolicy, f64)> {
    if model.n_obs != 2 || model.n_actions != 2 {
        return Err(Error::DimensionMismatch(format!(
            "grid search covers 2x2 worlds only, got {} observations / {} actions",
            model.n_obs, model.n_actions
        )));
    }
    if resolution == 0 {
        return Err(Error::Invalid("grid resolution must be positive".into()));
    }
    let mut best: Option<(FscPolicy, f64)> = None;
    for i in 0..=resolution {
        let p0 = i as f64 / resolution as f64;
        for j in 0..=resolution {
            let p1 = j as f64 / resolution as f64;
            let policy = FscPolicy::reactive_from_probs(&[vec![p0, 1.0 - p0], vec![p1, 1.0 - p1]])?;
            let value = exact_return(model, &policy)?;
            if best.as_ref().map_or(true, |(_, v)| value > *v) {
                best = Some((policy, value));
            }
        }
    }
    Ok(best.expect("grid is never empty"))
}

/// Hand-built two-memory controller for the cart world: run right while
/// the register says "outbound", run left while it says "inbound", and
/// flip the register at the ends.  Logits of +/-40 make every choice
/// deterministic to double precision; the exact return at horizon 100 is
/// 13 (one delivery per 8-step round trip after the 4-step opening run).
pub fn load_unload_solution() -> FscPolicy {
    const L: f64 = 40.0;
    let mut p = FscPolicy::uniform(5, 2, 2);
    for x in 0..5 {
        for m in 0..2 {
            // Action 0 is left, action 1 is right.
            let go_right = match x {
                0 => true,
                4 => false,
                _ => m == 0,
            };
            p.act_logits[x][m] = if go_right { vec![-L, L] } else { vec![L, -L] };
            // Register: 0 = outbound, 1 = inbound, rewritten at the ends.
            let next_m = match x {
                0 => 0,
                4 => 1,
                _ => m,
            };
            p.mem_logits[x][m] = if next_m == 0 {
                vec![L, -L]
            } else {
                vec![-L, L]
            };
        }
    }
    p
}

/// Point estimates of a dataset statistic as the pool grows, replicated
/// over independently seeded experiments.
///
/// `values[k][s][r]` is statistic `s` evaluated at checkpoint `ns[k]`
/// in replication `r`.
#[derive(Debug, Clone)]
pub struct StatisticSweep {
    pub ns: Vec<usize>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl StatisticSweep {
    pub fn mean(&self, checkpoint: usize, stat: usize) -> f64 {
        let xs = &self.values[checkpoint][stat];
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    /// Sample standard deviation; `None` below two replications.
    pub fn std(&self, checkpoint: usize, stat: usize) -> Option<f64> {
        let xs = &self.values[checkpoint][stat];
        if xs.len() < 2 {
            return None;
        }
        let mean = self.mean(checkpoint, stat);
        let ss: f64 = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
        Some((ss / (xs.len() - 1) as f64).sqrt())
    }
}

/// Grows a trial pool episode by episode (slot i acted by
/// `samplers[i % samplers.len()]`) and evaluates `eval` at each checkpoint
/// in `ns`.  Replication r uses an independent stream derived from `seed`,
/// so results are reproducible and insensitive to the number of
/// replications run elsewhere.
pub fn empirical_sweep<F>(
    model: &Pomdp,
    samplers: &[FscPolicy],
    ns: &[usize],
    replications: usize,
    seed: u64,
    n_stats: usize,
    eval: F,
) -> Result<StatisticSweep>
where
    F: Fn(&Dataset) -> Vec<f64>,
{
    if samplers.is_empty() {
        return Err(Error::Invalid("no sampler policies given".into()));
    }
    if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(
            "checkpoints must be positive and strictly increasing".into(),
        ));
    }
    if replications == 0 {
        return Err(Error::Invalid("need at least one replication".into()));
    }
    let mut values = vec![vec![vec![0.0; replications]; n_stats]; ns.len()];
    let max_n = *ns.last().unwrap();
    for rep in 0..replications {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, rep as u64));
        let mut pool = Dataset::new();
        let mut next_checkpoint = 0;
        for i in 0..max_n {
            let sampler = &samplers[i % samplers.len()];
            let mut actor = FscActor::new(sampler);
            let history = sample_episode(model, &mut actor, &mut rng, false);
            pool.push(TrialRecord {
                policy: sampler.clone(),
                history,
            });
            if next_checkpoint < ns.len() && pool.len() == ns[next_checkpoint] {
                let stats = eval(&pool);
                assert_eq!(stats.len(), n_stats, "eval returned a wrong-sized row");
                for (s, &v) in stats.iter().enumerate() {
                    values[next_checkpoint][s][rep] = v;
                }
                next_checkpoint += 1;
            }
        }
    }
    Ok(StatisticSweep {
        ns: ns.to_vec(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::EstimateKind;
    use crate::world::{build_left_right, build_load_unload};
    use rand::Rng;

    /// Two states, identity observations, horizon 2.  Small enough that
    /// the full history space has at most 16 atoms.
    fn tiny_world() -> Pomdp {
        let model = Pomdp {
            name: "tiny".to_string(),
            n_states: 2,
            n_obs: 2,
            n_actions: 2,
            horizon: 2,
            start: vec![0.6, 0.4],
            trans: vec![
                vec![vec![0.7, 0.3], vec![0.2, 0.8]],
                vec![vec![0.6, 0.4], vec![0.1, 0.9]],
            ],
            obs: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            reward: vec![
                vec![vec![1.0, 0.0], vec![0.0, 2.0]],
                vec![vec![0.5, 0.0], vec![0.0, 1.5]],
            ],
        };
        model.validate().unwrap();
        model
    }

    fn random_reactive(rng: &mut ChaCha8Rng) -> FscPolicy {
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let p: f64 = 0.05 + 0.9 * rng.random::<f64>();
                vec![p, 1.0 - p]
            })
            .collect();
        FscPolicy::reactive_from_probs(&rows).unwrap()
    }

    #[test]
    fn atom_probabilities_sum_to_one_for_any_policy() {
        let model = tiny_world();
        let atoms = enumerate_atoms(&model, 1 << 20).unwrap();
        assert!(!atoms.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let policy = random_reactive(&mut rng);
            let total: f64 = atom_probs(&atoms, &policy).iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "total {total}");
        }
        let uniform = FscPolicy::uniform(2, 2, 2);
        let total: f64 = atom_probs(&atoms, &uniform).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn atom_sum_and_forward_propagation_agree_on_returns() {
        // Two fully independent routes to the same expectation.
        let model = tiny_world();
        let atoms = enumerate_atoms(&model, 1 << 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..5 {
            let policy = random_reactive(&mut rng);
            let via_atoms = exact_return_from_atoms(&atoms, &policy);
            let via_dp = exact_return(&model, &policy).unwrap();
            assert!((via_atoms - via_dp).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_refuses_oversized_worlds() {
        let model = build_load_unload();
        assert!(matches!(
            enumerate_atoms(&model, 1 << 30),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn unnormalized_estimate_is_unbiased_over_all_datasets() {
        let model = tiny_world();
        let atoms = enumerate_atoms(&model, 1 << 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let samplers = vec![random_reactive(&mut rng), random_reactive(&mut rng)];
        let target = random_reactive(&mut rng);
        let truth = exact_return(&model, &target).unwrap();
        let summary = dataset_expectation(&atoms, &samplers, 2, 1 << 20, |d| {
            d.estimate(EstimateKind::Unnormalized, &target).unwrap()
        })
        .unwrap();
        assert!((summary.total_probability - 1.0).abs() < 1e-10);
        assert!(
            (summary.mean - truth).abs() < 1e-10,
            "mean {} vs truth {truth}",
            summary.mean
        );
    }

    #[test]
    fn moment_formulas_match_exhaustive_enumeration() {
        let model = tiny_world();
        let atoms = enumerate_atoms(&model, 1 << 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let samplers = vec![random_reactive(&mut rng), random_reactive(&mut rng)];
        let target_a = random_reactive(&mut rng);
        let target_b = random_reactive(&mut rng);
        for n in [1usize, 2, 3] {
            let report = moments(&atoms, &samplers, n, &target_a, &target_b).unwrap();
            let norm = dataset_expectation(&atoms, &samplers, n, 1 << 22, |d| {
                d.difference(EstimateKind::Normalized, &target_a, &target_b)
                    .unwrap()
            })
            .unwrap();
            assert!(
                (report.expected_norm_diff - norm.mean).abs() < 1e-10,
                "n={n}: formula {} vs enumeration {}",
                report.expected_norm_diff,
                norm.mean
            );
            let unnorm = dataset_expectation(&atoms, &samplers, n, 1 << 22, |d| {
                d.difference(EstimateKind::Unnormalized, &target_a, &target_b)
                    .unwrap()
            })
            .unwrap();
            assert!((report.expected_unnorm_diff - unnorm.mean).abs() < 1e-10);
            assert!(
                (report.var_unnorm_diff - unnorm.variance).abs() < 1e-9,
                "n={n}: var formula {} vs enumeration {}",
                report.var_unnorm_diff,
                unnorm.variance
            );
        }
    }

    #[test]
    fn identical_samplers_shrink_the_difference_by_one_over_n() {
        let model = tiny_world();
        let atoms = enumerate_atoms(&model, 1 << 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let sampler = vec![random_reactive(&mut rng)];
        let target_a = random_reactive(&mut rng);
        let target_b = random_reactive(&mut rng);
        for n in [1usize, 2, 4] {
            let report = moments(&atoms, &sampler, n, &target_a, &target_b).unwrap();
            let delta = report.return_a - report.return_b;
            assert!((report.cross_bias - delta).abs() < 1e-12);
            let scaled = delta * (n as f64 - 1.0) / n as f64;
            assert!((report.expected_norm_diff - scaled).abs() < 1e-12);
        }
    }

    #[test]
    fn cart_world_solution_earns_thirteen() {
        let model = build_load_unload();
        let policy = load_unload_solution();
        let value = exact_return(&model, &policy).unwrap();
        assert!((value - 13.0).abs() < 1e-9, "value {value}");
    }

    #[test]
    fn corridor_grid_prefers_running_left() {
        let model = build_left_right(&[0, 7], 0.0).unwrap();
        let (best, value) = best_reactive_on_grid(&model, 10).unwrap();
        assert!((value - 98.0).abs() < 1e-6, "value {value}");
        // P(action 0 | left half) = 1; the right half is never visited
        // under that choice, so its action probability is unconstrained.
        let tables = best.tables();
        assert!(tables.act[0][0][0] > 0.999);
    }

    #[test]
    fn sweep_is_reproducible_and_shaped() {
        let model = tiny_world();
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let samplers = vec![random_reactive(&mut rng)];
        let target = random_reactive(&mut rng);
        let run = |seed| {
            empirical_sweep(&model, &samplers, &[2, 5], 3, seed, 1, |d| {
                vec![d.estimate(EstimateKind::Normalized, &target).unwrap()]
            })
            .unwrap()
        };
        let a = run(9);
        let b = run(9);
        assert_eq!(a.values, b.values);
        assert_eq!(a.ns, vec![2, 5]);
        assert_eq!(a.values.len(), 2);
        assert_eq!(a.values[0][0].len(), 3);
        let c = run(10);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn sweep_rejects_bad_checkpoints() {
        let model = tiny_world();
        let samplers = vec![FscPolicy::uniform(2, 2, 1)];
        assert!(empirical_sweep(&model, &samplers, &[], 1, 0, 0, |_| vec![]).is_err());
        assert!(empirical_sweep(&model, &samplers, &[3, 3], 1, 0, 0, |_| vec![]).is_err());
        assert!(empirical_sweep(&model, &samplers, &[0, 2], 1, 0, 0, |_| vec![]).is_err());
    }
}
