//! Gradient ascent over controller logits, and the learning loops built
//! on top of it.
//!
//! The climber is a Polak-Ribiere conjugate-gradient method with a
//! bracketing plus golden-section line search, restarted to steepest
//! ascent periodically and whenever a conjugate direction stops paying.
//! Estimates are cheap relative to their gradients here (a value needs n
//! forward passes, a gradient n forward-backward passes), which is why the
//! line search leans on values only.

// `!(a >= b)` is not `a < b` when a probe returns NaN, and the line search
// leans on that: a NaN value must count as "no rise".
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{Dataset, EstimateKind, TrialRecord};
use crate::numeric::max_norm;
use crate::policy::{FscActor, FscPolicy};
use crate::world::{episode_return, sample_episode, Pomdp};

#[derive(Debug, Clone)]
pub struct ClimbOptions {
    pub max_iterations: usize,
    /// Stop once the gradient max-norm falls below this.
    pub gradient_tolerance: f64,
    /// First trial step of every line search, in units of the
    /// max-norm-one direction.
    pub initial_step: f64,
    /// Factor by which the trial step grows while bracketing.
    pub bracket_growth: f64,
    /// Longest step a single line search may take, in logit units.  Softmax
    /// saturates: a step much past this would drive competing histories'
    /// likelihood ratios out of floating-point range and zero out every
    /// later gradient.
    pub bracket_cap: f64,
    /// Absolute width at which golden-section stops shrinking a bracket.
    pub golden_tolerance: f64,
    /// Iterations between forced steepest-ascent restarts; defaults to the
    /// parameter count.
    pub restart_period: Option<usize>,
}

impl Default for ClimbOptions {
    fn default() -> Self {
        ClimbOptions {
            max_iterations: 100,
            gradient_tolerance: 1e-6,
            initial_step: 0.1,
            bracket_growth: 2.0,
            bracket_cap: 50.0,
            golden_tolerance: 1e-4,
            restart_period: None,
        }
    }
}

/// Anything the climber can ascend: a value and its gradient over a flat
/// parameter vector.
pub trait ClimbObjective {
    fn value(&self, theta: &[f64]) -> f64;
    fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>);
}

/// A dataset estimate as a function of the target policy's logits.
/// Undefined estimates (an everywhere-impossible target) are treated as
/// negative infinity so the line search backs away from them.
pub struct EstimatorObjective<'a> {
    pub data: &'a Dataset,
    pub template: &'a FscPolicy,
    pub kind: EstimateKind,
}

impl ClimbObjective for EstimatorObjective<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        let policy = self.template.with_logits(theta).expect("template shape");
        self.data
            .estimate(self.kind, &policy)
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let policy = self.template.with_logits(theta).expect("template shape");
        match self.data.estimate_grad(self.kind, &policy) {
            Ok((v, g)) => (v, g.flatten()),
            Err(_) => (f64::NEG_INFINITY, vec![0.0; theta.len()]),
        }
    }
}

/// Golden-section maximization on `[lo, hi]`.
///
/// Shrinks the bracket by the inverse golden ratio per evaluation until
/// its width is at most `tol`, then returns the better interior point.
/// Uses 2 + ceil(ln(width / tol) / ln(phi)) evaluations.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidBracket(format!("[{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidBracket(format!("tolerance {tol}")));
    }
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - (hi - lo) * INVPHI;
    let mut x2 = lo + (hi - lo) * INVPHI;
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if !(lo < x1 && x1 < x2 && x2 < hi) {
            // The interval can no longer be subdivided in floating point
            // (huge endpoints from a runaway bracket); the best evaluated
            // interior point is as good as it gets.
            break;
        }
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - (hi - lo) * INVPHI;
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + (hi - lo) * INVPHI;
            f2 = f(x2);
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Grows the trial step by `bracket_growth` until the objective drops (or
/// turns NaN), the value plateaus after a strict rise, or the step reaches
/// `bracket_cap`, then returns an interval straddling the maximum along
/// the ray.  `f0` is the already-known value at 0.
///
/// Plateaus get special treatment, in both directions.  Mixture-weight
/// surfaces have wide regions where a genuine rise is smaller than the f64
/// resolution around the current value, so a probe equal to `f0` keeps the
/// expansion going; stopping at the first flat probe would never find the
/// far side.  But once the value has strictly risen, a flat probe means
/// the top plateau is reached, and expanding further would only push the
/// bracket (and with it the accepted step) deeper into saturated
/// territory; the search stops there, and golden_section's preference for
/// the low end of ties lands near the plateau's near edge.
fn bracket_max<F>(f: &mut F, f0: f64, options: &ClimbOptions) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let mut prev_s = 0.0;
    let mut cur_s = options.initial_step.min(options.bracket_cap);
    let mut cur_f = f(cur_s);
    if !(cur_f >= f0) {
        // Strictly worse already: the rise, if any, is inside the first step.
        return (0.0, cur_s);
    }
    while cur_s < options.bracket_cap {
        let next_s = (cur_s * options.bracket_growth).min(options.bracket_cap);
        let next_f = f(next_s);
        if !(next_f >= cur_f) || (next_f == cur_f && cur_f > f0) {
            return (prev_s, next_s);
        }
        prev_s = cur_s;
        cur_s = next_s;
        cur_f = next_f;
    }
    (prev_s, cur_s)
}

#[derive(Debug, Clone)]
pub struct ClimbOutcome {
    pub policy: FscPolicy,
    pub value: f64,
    /// Gradient max-norm at the returned point.
    pub grad_max_norm: f64,
    /// Accepted ascent steps.
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ascends `objective` from `start`.
///
/// Directions are normalized to unit max-norm so `initial_step` has the
/// same meaning at every scale.  A conjugate step that fails to improve
/// retries as steepest ascent from the same point; if steepest ascent
/// cannot improve either, the climb is done.  Accepted steps never
/// decrease the objective, so the outcome value is monotone in the
/// iteration count.
///
/// One class of accepted step is not a strict improvement: while a climb
/// has yet to gain anything, an equal-valued step of at least the initial
/// step along the gradient ray is taken rather than terminating.  Around a
/// sharp controller the estimate is often bit-identical over more logit
/// distance than one capped line search can cover (a weight below the
/// f64 resolution of the dominant return has to grow through dozens of
/// log-units before the value budges), and these drift steps chain line
/// searches across such regions.  Once any strict gain has been made the
/// climb is past the flat region and equal values mean converged.
pub fn climb<O: ClimbObjective>(
    objective: &O,
    start: &FscPolicy,
    options: &ClimbOptions,
) -> Result<ClimbOutcome> {
    if !(options.initial_step > 0.0) {
        return Err(Error::Invalid(format!(
            "initial step {} must be positive",
            options.initial_step
        )));
    }
    if !(options.bracket_growth > 1.0) {
        return Err(Error::Invalid(format!(
            "bracket growth {} must exceed 1",
            options.bracket_growth
        )));
    }
    if !(options.bracket_cap > 0.0) {
        return Err(Error::Invalid(format!(
            "bracket cap {} must be positive",
            options.bracket_cap
        )));
    }
    if !(options.golden_tolerance > 0.0) {
        return Err(Error::Invalid(format!(
            "golden tolerance {} must be positive",
            options.golden_tolerance
        )));
    }
    if options.gradient_tolerance < 0.0 {
        return Err(Error::Invalid(format!(
            "gradient tolerance {} must not be negative",
            options.gradient_tolerance
        )));
    }

    let mut theta = start.flatten_logits();
    let dim = theta.len();
    let restart_period = options.restart_period.unwrap_or(dim).max(1);
    let (mut value, mut grad) = objective.value_grad(&theta);
    let mut prev_grad: Option<Vec<f64>> = None;
    let mut prev_dir: Option<Vec<f64>> = None;
    let mut since_restart = 0usize;
    let mut iterations = 0usize;
    let mut gained = false;

    while iterations < options.max_iterations {
        if max_norm(&grad) <= options.gradient_tolerance {
            break;
        }

        // Polak-Ribiere direction, clipped at zero; anything that is not
        // an ascent direction falls back to the gradient itself.
        let mut steepest = since_restart == 0;
        let mut dir = if steepest {
            grad.clone()
        } else {
            let pg = prev_grad.as_ref().expect("set after first step");
            let pd = prev_dir.as_ref().expect("set after first step");
            let denom = dot(pg, pg);
            let beta = if denom > 0.0 {
                (dot(&grad, &grad) - dot(&grad, pg)).max(0.0) / denom
            } else {
                0.0
            };
            let d: Vec<f64> = grad.iter().zip(pd).map(|(g, d)| g + beta * d).collect();
            if dot(&d, &grad) <= 0.0 {
                steepest = true;
                grad.clone()
            } else {
                d
            }
        };

        loop {
            let scale = max_norm(&dir);
            if scale == 0.0 {
                return finish(theta, value, &grad, iterations, start);
            }
            let unit: Vec<f64> = dir.iter().map(|d| d / scale).collect();
            let mut line = |s: f64| {
                let probe: Vec<f64> = theta.iter().zip(&unit).map(|(t, u)| t + s * u).collect();
                objective.value(&probe)
            };
            let (lo, hi) = bracket_max(&mut line, value, options);
            let (best_s, best_f) = golden_section(&mut line, lo, hi, options.golden_tolerance)?;

            let strict = best_f > value;
            let drift = !strict
                && !gained
                && steepest
                && value.is_finite()
                && best_f == value
                && best_s >= options.initial_step;
            if strict || drift {
                for (t, u) in theta.iter_mut().zip(&unit) {
                    *t += best_s * u;
                }
                let (v, g) = objective.value_grad(&theta);
                value = v;
                gained = gained || strict;
                prev_grad = Some(std::mem::replace(&mut grad, g));
                prev_dir = Some(unit.iter().map(|u| u * scale).collect());
                iterations += 1;
                since_restart += 1;
                if since_restart >= restart_period {
                    since_restart = 0;
                }
                break;
            }
            if steepest {
                // Even the gradient direction cannot improve on this line
                // search scale: converged as far as the tolerance allows.
                return finish(theta, value, &grad, iterations, start);
            }
            steepest = true;
            dir = grad.clone();
        }
    }
    finish(theta, value, &grad, iterations, start)
}

fn finish(
    theta: Vec<f64>,
    value: f64,
    grad: &[f64],
    iterations: usize,
    template: &FscPolicy,
) -> Result<ClimbOutcome> {
    Ok(ClimbOutcome {
        policy: template.with_logits(&theta)?,
        value,
        grad_max_norm: max_norm(grad),
        iterations,
    })
}

/// Per-trial log line shared by the learning loops.
#[derive(Debug, Clone)]
pub struct TrialStats {
    /// 1-based trial number.
    pub trial: usize,
    /// Return of the episode executed this trial (before any update).
    pub ret: f64,
    /// Value of the climbed estimate, where the loop has one.
    pub estimate: Option<f64>,
    /// Gradient max-norm: at the climb's endpoint, or of the applied
    /// policy-gradient update.
    pub grad_max_norm: f64,
    /// Ascent steps taken this trial (0 for the policy-gradient loop).
    pub climb_iterations: usize,
}

/// Everything a learning run produces: the raw trials, per-trial
/// statistics and the policy left behind.
#[derive(Debug, Clone)]
pub struct LearnLog {
    pub records: Vec<TrialRecord>,
    pub stats: Vec<TrialStats>,
    pub final_policy: FscPolicy,
}

impl LearnLog {
    pub fn returns(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.ret).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GreedyOptions {
    pub n_trials: usize,
    pub kind: EstimateKind,
    pub climb: ClimbOptions,
}

/// Greedy estimate-and-climb learning.
///
/// Each trial executes one episode with the current controller, adds it to
/// the pool, then adopts whatever policy the climber reaches from the
/// current one on the pooled estimate.  All randomness flows from `seed`;
/// reruns reproduce the log exactly.
pub fn greedy_learn(
    model: &Pomdp,
    initial: &FscPolicy,
    options: &GreedyOptions,
    seed: u64,
) -> Result<LearnLog> {
    check_compatible(model, initial)?;
    if options.n_trials == 0 {
        return Err(Error::Invalid("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = initial.clone();
    let mut pool = Dataset::new();
    let mut records = Vec::with_capacity(options.n_trials);
    let mut stats = Vec::with_capacity(options.n_trials);

    for trial in 1..=options.n_trials {
        let mut actor = FscActor::new(&policy);
        let history = sample_episode(model, &mut actor, &mut rng, false);
        let ret = episode_return(&history);
        let record = TrialRecord {
            policy: policy.clone(),
            history,
        };
        records.push(record.clone());
        pool.push(record);

        let objective = EstimatorObjective {
            data: &pool,
            template: &policy,
            kind: options.kind,
        };
        let outcome = climb(&objective, &policy, &options.climb)?;
        stats.push(TrialStats {
            trial,
            ret,
            estimate: Some(outcome.value),
            grad_max_norm: outcome.grad_max_norm,
            climb_iterations: outcome.iterations,
        });
        policy = outcome.policy;
    }
    Ok(LearnLog {
        records,
        stats,
        final_policy: policy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDecay {
    /// alpha_k = rate.
    Constant,
    /// alpha_k = rate / k.
    InverseTrial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    None,
    /// Mean of the returns observed in earlier trials (0 for the first).
    RunningMean,
}

#[derive(Debug, Clone)]
pub struct ReinforceOptions {
    pub n_trials: usize,
    pub learning_rate: f64,
    pub decay: StepDecay,
    pub baseline: BaselineMode,
}

/// Single-episode policy-gradient learning: after each episode the logits
/// move along (return - baseline) times the gradient of the episode's own
/// log-likelihood.
pub fn reinforce_learn(
    model: &Pomdp,
    initial: &FscPolicy,
    options: &ReinforceOptions,
    seed: u64,
) -> Result<LearnLog> {
    check_compatible(model, initial)?;
    if options.n_trials == 0 {
        return Err(Error::Invalid("need at least one trial".into()));
    }
    if !(options.learning_rate > 0.0) {
        return Err(Error::Invalid(format!(
            "learning rate {} must be positive",
            options.learning_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = initial.clone();
    let mut records = Vec::with_capacity(options.n_trials);
    let mut stats = Vec::with_capacity(options.n_trials);
    let mut return_sum = 0.0;

    for trial in 1..=options.n_trials {
        let mut actor = FscActor::new(&policy);
        let history = sample_episode(model, &mut actor, &mut rng, false);
        let ret = episode_return(&history);
        records.push(TrialRecord {
            policy: policy.clone(),
            history: history.clone(),
        });

        let baseline = match options.baseline {
            BaselineMode::None => 0.0,
            BaselineMode::RunningMean if trial > 1 => return_sum / (trial - 1) as f64,
            BaselineMode::RunningMean => 0.0,
        };
        let rate = match options.decay {
            StepDecay::Constant => options.learning_rate,
            StepDecay::InverseTrial => options.learning_rate / trial as f64,
        };
        let (_, grad) = policy.log_likelihood_grad(&history);
        let update = grad.flatten();
        let coeff = ret - baseline;
        let mut theta = policy.flatten_logits();
        for (t, u) in theta.iter_mut().zip(&update) {
            *t += rate * coeff * u;
        }
        policy = policy.with_logits(&theta)?;
        return_sum += ret;

        stats.push(TrialStats {
            trial,
            ret,
            estimate: None,
            grad_max_norm: coeff.abs() * max_norm(&update),
            climb_iterations: 0,
        });
    }
    Ok(LearnLog {
        records,
        stats,
        final_policy: policy,
    })
}

fn check_compatible(model: &Pomdp, policy: &FscPolicy) -> Result<()> {
    policy.validate()?;
    if policy.n_obs != model.n_obs || policy.n_actions != model.n_actions {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{} (obs x actions), world needs {}x{}",
            policy.n_obs, policy.n_actions, model.n_obs, model.n_actions
        )));
    }
    Ok(())
}
