//! Finite-state stochastic controllers and their action-sequence
//! likelihoods.
//!
//! A controller holds a memory value `m` between steps.  On observing `x`
//! it draws an action from `softmax(act_logits[x][m])` and a next memory
//! value from `softmax(mem_logits[x][m])`.  The probability that a policy
//! would have produced the actions of a recorded history, given that
//! history's observations, is
//!
//! ```text
//! A(h, pi) = sum over memory paths of
//!            p(m_1) * prod_t pi_act(a_t | x_t, m_t) * pi_mem(m_{t+1} | x_t, m_t)
//! ```
//!
//! which factors the sampling distribution as p(h|pi) = W(h) * A(h, pi)
//! with W independent of the policy.  Everything downstream (weights,
//! estimators, search) is built on `A`, evaluated here by a scaled forward
//! recursion with exact log-space accumulation, and on its gradient,
//! evaluated by the matching forward-backward pass.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_softmax, sample_categorical, softmax};
use crate::world::{Actor, History};

/// Tolerance for `init_mem` summing to one.
const INIT_SUM_TOLERANCE: f64 = 1e-12;

/// A finite-state controller parameterized by unnormalized logits.
///
/// `act_logits` is indexed `[obs][mem][action]`, `mem_logits`
/// `[obs][mem][next_mem]`.  Probability tables are always derived from the
/// logits on demand; they are never stored, so a policy cannot drift out of
/// sync with its parameters.  `init_mem` is the distribution of the memory
/// value before the first step (point mass on 0 unless stated otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FscPolicy {
    pub n_obs: usize,
    pub n_actions: usize,
    pub n_mem: usize,
    pub act_logits: Vec<Vec<Vec<f64>>>,
    pub mem_logits: Vec<Vec<Vec<f64>>>,
    pub init_mem: Vec<f64>,
}

impl FscPolicy {
    /// Uniform policy: all logits zero, memory starting at value 0.
    pub fn uniform(n_obs: usize, n_actions: usize, n_mem: usize) -> Self {
        let mut init_mem = vec![0.0; n_mem];
        init_mem[0] = 1.0;
        FscPolicy {
            n_obs,
            n_actions,
            n_mem,
            act_logits: vec![vec![vec![0.0; n_actions]; n_mem]; n_obs],
            mem_logits: vec![vec![vec![0.0; n_mem]; n_mem]; n_obs],
            init_mem,
        }
    }

    /// Memoryless policy with the given per-observation action
    /// probabilities.  Probabilities are clamped to 1e-12 before taking
    /// logs, so rows may contain zeros; each row is renormalized by the
    /// softmax.
    pub fn reactive_from_probs(action_probs: &[Vec<f64>]) -> Result<Self> {
        if action_probs.is_empty() {
            return Err(Error::Invalid("no observation rows given".into()));
        }
        let n_actions = action_probs[0].len();
        if n_actions == 0 {
            return Err(Error::Invalid("empty action row".into()));
        }
        let mut act_logits = Vec::with_capacity(action_probs.len());
        for (x, row) in action_probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::Invalid(format!(
                    "action row {x} has {} entries, expected {n_actions}",
                    row.len()
                )));
            }
            let mut logits = Vec::with_capacity(n_actions);
            for &p in row {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::Invalid(format!("action probability {p} in row {x}")));
                }
                logits.push(p.max(1e-12).ln());
            }
            act_logits.push(vec![logits]);
        }
        Ok(FscPolicy {
            n_obs: action_probs.len(),
            n_actions,
            n_mem: 1,
            act_logits,
            mem_logits: vec![vec![vec![0.0]]; action_probs.len()],
            init_mem: vec![1.0],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs == 0 || self.n_actions == 0 || self.n_mem == 0 {
            return Err(Error::Invalid(
                "observation, action and memory counts must be positive".into(),
            ));
        }
        if self.init_mem.len() != self.n_mem {
            return Err(Error::Invalid(format!(
                "init_mem has {} entries, expected {}",
                self.init_mem.len(),
                self.n_mem
            )));
        }
        for &p in &self.init_mem {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Invalid(format!("init_mem contains {p}")));
            }
        }
        let sum: f64 = self.init_mem.iter().sum();
        if (sum - 1.0).abs() > INIT_SUM_TOLERANCE {
            return Err(Error::Invalid(format!("init_mem sums to {sum}")));
        }
        check_logits(
            &self.act_logits,
            self.n_obs,
            self.n_mem,
            self.n_actions,
            "act_logits",
        )?;
        check_logits(
            &self.mem_logits,
            self.n_obs,
            self.n_mem,
            self.n_mem,
            "mem_logits",
        )?;
        Ok(())
    }

    pub fn same_shape(&self, other: &FscPolicy) -> bool {
        self.n_obs == other.n_obs && self.n_actions == other.n_actions && self.n_mem == other.n_mem
    }

    /// Number of logit parameters (rows are over-parameterized by one
    /// softmax shift each; see `free_params` for the identifiable count).
    pub fn n_params(&self) -> usize {
        self.n_obs * self.n_mem * (self.n_actions + self.n_mem)
    }

    /// Identifiable parameter count: each softmax row loses one degree of
    /// freedom to shift invariance.
    pub fn free_params(&self) -> usize {
        self.n_obs * self.n_mem * ((self.n_actions - 1) + (self.n_mem - 1))
    }

    /// Flat logit vector: action rows first, then memory rows, row-major.
    /// `with_logits` and `PolicyGradient::flatten` use the same order.
    pub fn flatten_logits(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for x in 0..self.n_obs {
            for m in 0..self.n_mem {
                out.extend_from_slice(&self.act_logits[x][m]);
            }
        }
        for x in 0..self.n_obs {
            for m in 0..self.n_mem {
                out.extend_from_slice(&self.mem_logits[x][m]);
            }
        }
        out
    }

    /// Same shape and initial memory, new logits.
    pub fn with_logits(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "logit vector has {} entries, policy has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut out = self.clone();
        let mut it = flat.iter();
        for x in 0..self.n_obs {
            for m in 0..self.n_mem {
                for a in 0..self.n_actions {
                    out.act_logits[x][m][a] = *it.next().unwrap();
                }
            }
        }
        for x in 0..self.n_obs {
            for m in 0..self.n_mem {
                for k in 0..self.n_mem {
                    out.mem_logits[x][m][k] = *it.next().unwrap();
                }
            }
        }
        Ok(out)
    }

    /// Derives the probability tables.
    pub fn tables(&self) -> PolicyTables {
        PolicyTables::new(self)
    }

    /// Draws (action, next memory) for one step.  Action first, memory
    /// second; the draw order is part of the reproducibility contract.
    pub fn step(&self, obs: usize, mem: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let act_row = softmax(&self.act_logits[obs][mem]);
        let a = sample_categorical(rng, &act_row);
        let mem_row = softmax(&self.mem_logits[obs][mem]);
        let m_next = sample_categorical(rng, &mem_row);
        (a, m_next)
    }

    /// log A(h, self); see the module docs.  Always <= 0.
    pub fn log_likelihood(&self, history: &History) -> f64 {
        self.tables().log_likelihood(history)
    }

    /// log A(h, self) and its gradient with respect to every logit.
    pub fn log_likelihood_grad(&self, history: &History) -> (f64, PolicyGradient) {
        self.tables().log_likelihood_grad(history)
    }
}

fn check_logits(
    logits: &[Vec<Vec<f64>>],
    n_obs: usize,
    n_mem: usize,
    width: usize,
    what: &str,
) -> Result<()> {
    if logits.len() != n_obs {
        return Err(Error::Invalid(format!(
            "{what} has {} observation rows, expected {n_obs}",
            logits.len()
        )));
    }
    for (x, per_mem) in logits.iter().enumerate() {
        if per_mem.len() != n_mem {
            return Err(Error::Invalid(format!(
                "{what}[{x}] has {} memory rows, expected {n_mem}",
                per_mem.len()
            )));
        }
        for (m, row) in per_mem.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Invalid(format!(
                    "{what}[{x}][{m}] has {} entries, expected {width}",
                    row.len()
                )));
            }
            for &l in row {
                if !l.is_finite() {
                    return Err(Error::Invalid(format!("{what}[{x}][{m}] contains {l}")));
                }
            }
        }
    }
    Ok(())
}

/// Batch convenience: log A(h, pi) for several policies against one history.
pub fn likelihood_batch(policies: &[FscPolicy], history: &History) -> Vec<f64> {
    policies.iter().map(|p| p.log_likelihood(history)).collect()
}

/// Softmax tables compiled from a policy, for repeated likelihood work.
/// Probabilities and log-probabilities are kept side by side: the linear
/// tables drive the scaled recursions, the log tables are exact even where
/// a probability underflows.
pub struct PolicyTables {
    pub n_obs: usize,
    pub n_actions: usize,
    pub n_mem: usize,
    pub act: Vec<Vec<Vec<f64>>>,
    pub log_act: Vec<Vec<Vec<f64>>>,
    pub mem: Vec<Vec<Vec<f64>>>,
    pub log_mem: Vec<Vec<Vec<f64>>>,
    pub init_mem: Vec<f64>,
}

impl PolicyTables {
    fn new(policy: &FscPolicy) -> Self {
        type Rows = Vec<Vec<Vec<f64>>>;
        let build = |logits: &Rows| -> (Rows, Rows) {
            let mut lin = Vec::with_capacity(logits.len());
            let mut log = Vec::with_capacity(logits.len());
            for per_mem in logits {
                let mut lin_m = Vec::with_capacity(per_mem.len());
                let mut log_m = Vec::with_capacity(per_mem.len());
                for row in per_mem {
                    lin_m.push(softmax(row));
                    log_m.push(log_softmax(row));
                }
                lin.push(lin_m);
                log.push(log_m);
            }
            (lin, log)
        };
        let (act, log_act) = build(&policy.act_logits);
        let (mem, log_mem) = build(&policy.mem_logits);
        PolicyTables {
            n_obs: policy.n_obs,
            n_actions: policy.n_actions,
            n_mem: policy.n_mem,
            act,
            log_act,
            mem,
            log_mem,
            init_mem: policy.init_mem.clone(),
        }
    }

    fn check_history(&self, history: &History) {
        debug_assert_eq!(history.obs_seq.len(), history.act_seq.len());
        debug_assert!(history.obs_seq.iter().all(|&x| x < self.n_obs));
        debug_assert!(history.act_seq.iter().all(|&a| a < self.n_actions));
    }

    /// Scaled forward pass.  Returns (log A, per-step alpha rows, scales);
    /// `alphas[t]` is the normalized memory distribution before step `t`,
    /// conditioned on the actions taken so far.
    fn forward(&self, history: &History) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
        self.check_history(history);
        let t_max = history.len();
        let mm = self.n_mem;
        let mut alphas = Vec::with_capacity(t_max + 1);
        let mut scales = Vec::with_capacity(t_max);
        alphas.push(self.init_mem.clone());
        let mut log_a = 0.0;
        for t in 0..t_max {
            let x = history.obs_seq[t];
            let a = history.act_seq[t];
            let prev = &alphas[t];
            let mut next = vec![0.0; mm];
            for m in 0..mm {
                let w = prev[m] * self.act[x][m][a];
                if w == 0.0 {
                    continue;
                }
                let mem_row = &self.mem[x][m];
                for (k, nk) in next.iter_mut().enumerate() {
                    *nk += w * mem_row[k];
                }
            }
            let c: f64 = next.iter().sum();
            if c == 0.0 {
                // The recorded action is (numerically) impossible under this
                // policy from every reachable memory state.
                return (f64::NEG_INFINITY, alphas, scales);
            }
            for nk in &mut next {
                *nk /= c;
            }
            log_a += c.ln();
            alphas.push(next);
            scales.push(c);
        }
        (log_a, alphas, scales)
    }

    /// log A(h, pi).  One-memory controllers reduce to the product of
    /// per-step action log-probabilities.
    pub fn log_likelihood(&self, history: &History) -> f64 {
        if self.n_mem == 1 {
            // Fast path; also exact in log space for near-deterministic rows.
            self.check_history(history);
            return history
                .obs_seq
                .iter()
                .zip(&history.act_seq)
                .map(|(&x, &a)| self.log_act[x][0][a])
                .sum();
        }
        self.forward(history).0
    }

    /// log A and its gradient, via the scaled forward-backward pass.
    ///
    /// With the memory posterior gamma_t and pair posterior xi_t the
    /// nonzero contributions are, per step t with x = x_t:
    ///
    /// ```text
    /// d/d act_logits[x][m][a'] += gamma_t(m) * (1[a' = a_t] - pi_act(a'|x,m))
    /// d/d mem_logits[x][m][k]  += xi_t(m,k) - gamma_t(m) * pi_mem(k|x,m)
    /// ```
    ///
    /// Each softmax row's entries therefore sum to zero.
    pub fn log_likelihood_grad(&self, history: &History) -> (f64, PolicyGradient) {
        let t_max = history.len();
        let mm = self.n_mem;
        let mut grad = PolicyGradient::zeros(self.n_obs, self.n_actions, self.n_mem);

        let (log_a, alphas, scales) = self.forward(history);
        if !log_a.is_finite() {
            return (log_a, grad);
        }

        // Scaled backward pass, sharing the forward scale factors.
        let mut beta = vec![1.0; mm];
        for t in (0..t_max).rev() {
            let x = history.obs_seq[t];
            let a = history.act_seq[t];
            let c = scales[t];
            let alpha = &alphas[t];
            let mut beta_prev = vec![0.0; mm];
            for m in 0..mm {
                let act_p = self.act[x][m][a];
                let mem_row = &self.mem[x][m];
                // beta for time t and the (m -> k) pair posteriors.
                let mut b = 0.0;
                for k in 0..mm {
                    let g = act_p * mem_row[k];
                    b += g * beta[k];
                    let xi = alpha[m] * g * beta[k] / c;
                    grad.mem[x][m][k] += xi;
                }
                b /= c;
                beta_prev[m] = b;
                let gamma = alpha[m] * b;
                // Action row: gamma * (one-hot - pi_act).
                grad.act[x][m][a] += gamma;
                let act_row = &self.act[x][m];
                for a2 in 0..self.n_actions {
                    grad.act[x][m][a2] -= gamma * act_row[a2];
                }
                // Memory row: subtract gamma * pi_mem (xi added above).
                for k in 0..mm {
                    grad.mem[x][m][k] -= gamma * mem_row[k];
                }
            }
            beta = beta_prev;
        }
        (log_a, grad)
    }
}

/// Gradient of log A with respect to every logit, same shapes as the
/// policy's logit tables.
#[derive(Debug, Clone)]
pub struct PolicyGradient {
    pub act: Vec<Vec<Vec<f64>>>,
    pub mem: Vec<Vec<Vec<f64>>>,
}

impl PolicyGradient {
    pub fn zeros(n_obs: usize, n_actions: usize, n_mem: usize) -> Self {
        PolicyGradient {
            act: vec![vec![vec![0.0; n_actions]; n_mem]; n_obs],
            mem: vec![vec![vec![0.0; n_mem]; n_mem]; n_obs],
        }
    }

    /// self += coeff * other (matching shapes assumed).
    pub fn scaled_add(&mut self, coeff: f64, other: &PolicyGradient) {
        for (dst, src) in self.act.iter_mut().zip(&other.act) {
            for (dst_m, src_m) in dst.iter_mut().zip(src) {
                for (d, s) in dst_m.iter_mut().zip(src_m) {
                    *d += coeff * s;
                }
            }
        }
        for (dst, src) in self.mem.iter_mut().zip(&other.mem) {
            for (dst_m, src_m) in dst.iter_mut().zip(src) {
                for (d, s) in dst_m.iter_mut().zip(src_m) {
                    *d += coeff * s;
                }
            }
        }
    }

    /// Flat vector in the order of `FscPolicy::flatten_logits`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for per_mem in &self.act {
            for row in per_mem {
                out.extend_from_slice(row);
            }
        }
        for per_mem in &self.mem {
            for row in per_mem {
                out.extend_from_slice(row);
            }
        }
        out
    }

    pub fn max_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for per_mem in self.act.iter().chain(self.mem.iter()) {
            for row in per_mem {
                for &v in row {
                    m = m.max(v.abs());
                }
            }
        }
        m
    }
}

/// Runs an `FscPolicy` as an episode actor: samples the initial memory in
/// `begin`, then one action and one memory write per step.
pub struct FscActor {
    tables: PolicyTables,
    mem: usize,
}

impl FscActor {
    pub fn new(policy: &FscPolicy) -> Self {
        FscActor {
            tables: policy.tables(),
            mem: 0,
        }
    }
}

impl Actor for FscActor {
    fn begin(&mut self, rng: &mut ChaCha8Rng) {
        self.mem = sample_categorical(rng, &self.tables.init_mem);
    }

    fn act(&mut self, obs: usize, rng: &mut ChaCha8Rng) -> usize {
        let a = sample_categorical(rng, &self.tables.act[obs][self.mem]);
        self.mem = sample_categorical(rng, &self.tables.mem[obs][self.mem]);
        a
    }
}
