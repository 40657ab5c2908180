//! Finite POMDPs with explicit tables and episode simulation.
//!
//! Time is 1-based in the documentation (an episode visits states
//! `s_1 .. s_{T+1}`) and 0-based in storage.  Rewards follow the
//! `r_t = reward[s_t][a_t][s_{t+1}]` convention: a reward is earned on the
//! transition *into* a state, which makes "one unit each time the agent
//! enters" layouts expressible.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::sample_categorical;

/// Tolerance for probability rows summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// A finite partially observable MDP with dense tables.
///
/// `trans` and `reward` are indexed `[s][a][s']`, `obs` is `[s][x]`.
/// Observations are emitted from the *current* state before the action is
/// chosen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pomdp {
    pub name: String,
    pub n_states: usize,
    pub n_obs: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub start: Vec<f64>,
    pub trans: Vec<Vec<Vec<f64>>>,
    pub obs: Vec<Vec<f64>>,
    pub reward: Vec<Vec<Vec<f64>>>,
}

fn check_row(row: &[f64], what: impl Fn() -> String) -> Result<()> {
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Invalid(format!("{} contains {}", what(), p)));
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::Invalid(format!("{} sums to {}", what(), sum)));
    }
    Ok(())
}

impl Pomdp {
    /// Checks dimensions, stochasticity and finiteness.  Reports the first
    /// violation with its indices.
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_obs == 0 || self.n_actions == 0 {
            return Err(Error::Invalid(
                "state, observation and action counts must be positive".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        if self.start.len() != self.n_states {
            return Err(Error::Invalid(format!(
                "start has {} entries, expected {}",
                self.start.len(),
                self.n_states
            )));
        }
        if self.trans.len() != self.n_states {
            return Err(Error::Invalid(format!(
                "trans has {} state rows, expected {}",
                self.trans.len(),
                self.n_states
            )));
        }
        if self.obs.len() != self.n_states {
            return Err(Error::Invalid(format!(
                "obs has {} state rows, expected {}",
                self.obs.len(),
                self.n_states
            )));
        }
        if self.reward.len() != self.n_states {
            return Err(Error::Invalid(format!(
                "reward has {} state rows, expected {}",
                self.reward.len(),
                self.n_states
            )));
        }
        check_row(&self.start, || "start".to_string())?;
        for s in 0..self.n_states {
            if self.trans[s].len() != self.n_actions {
                return Err(Error::Invalid(format!(
                    "trans[{s}] has {} action rows, expected {}",
                    self.trans[s].len(),
                    self.n_actions
                )));
            }
            if self.reward[s].len() != self.n_actions {
                return Err(Error::Invalid(format!(
                    "reward[{s}] has {} action rows, expected {}",
                    self.reward[s].len(),
                    self.n_actions
                )));
            }
            for a in 0..self.n_actions {
                if self.trans[s][a].len() != self.n_states {
                    return Err(Error::Invalid(format!(
                        "trans[{s}][{a}] has {} entries, expected {}",
                        self.trans[s][a].len(),
                        self.n_states
                    )));
                }
                check_row(&self.trans[s][a], || format!("trans[{s}][{a}]"))?;
                if self.reward[s][a].len() != self.n_states {
                    return Err(Error::Invalid(format!(
                        "reward[{s}][{a}] has {} entries, expected {}",
                        self.reward[s][a].len(),
                        self.n_states
                    )));
                }
                for &r in &self.reward[s][a] {
                    if !r.is_finite() {
                        return Err(Error::Invalid(format!("reward[{s}][{a}] contains {r}")));
                    }
                }
            }
            if self.obs[s].len() != self.n_obs {
                return Err(Error::Invalid(format!(
                    "obs[{s}] has {} entries, expected {}",
                    self.obs[s].len(),
                    self.n_obs
                )));
            }
            check_row(&self.obs[s], || format!("obs[{s}]"))?;
        }
        Ok(())
    }
}

/// The observable trace of one episode: `T` observations, actions and
/// rewards.  States are kept only when explicitly requested and are never
/// serialized, so persisted histories cannot leak latent information to
/// the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    #[serde(rename = "obs")]
    pub obs_seq: Vec<usize>,
    #[serde(rename = "act")]
    pub act_seq: Vec<usize>,
    #[serde(rename = "rew")]
    pub rew_seq: Vec<f64>,
    #[serde(skip)]
    pub state_seq: Option<Vec<usize>>,
}

impl History {
    pub fn len(&self) -> usize {
        self.obs_seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs_seq.is_empty()
    }
}

/// Undiscounted return: the rewards summed in time order.
pub fn episode_return(history: &History) -> f64 {
    history.rew_seq.iter().sum()
}

/// Something that maps observations to actions, possibly carrying internal
/// state between steps.  `begin` is called once per episode before the
/// first observation.
pub trait Actor {
    fn begin(&mut self, rng: &mut ChaCha8Rng);
    fn act(&mut self, obs: usize, rng: &mut ChaCha8Rng) -> usize;
}

/// Runs one episode of exactly `model.horizon` steps.
///
/// Draw order per episode is pinned: start state, `actor.begin`, then per
/// step observation / action / successor.  Changing it would silently break
/// replay of published seeds.
pub fn sample_episode(
    model: &Pomdp,
    actor: &mut dyn Actor,
    rng: &mut ChaCha8Rng,
    keep_states: bool,
) -> History {
    let t_max = model.horizon;
    let mut obs_seq = Vec::with_capacity(t_max);
    let mut act_seq = Vec::with_capacity(t_max);
    let mut rew_seq = Vec::with_capacity(t_max);
    let mut state_seq = if keep_states {
        Some(Vec::with_capacity(t_max + 1))
    } else {
        None
    };

    let mut s = sample_categorical(rng, &model.start);
    actor.begin(rng);
    if let Some(states) = state_seq.as_mut() {
        states.push(s);
    }
    for _ in 0..t_max {
        let x = sample_categorical(rng, &model.obs[s]);
        let a = actor.act(x, rng);
        debug_assert!(a < model.n_actions);
        let s_next = sample_categorical(rng, &model.trans[s][a]);
        obs_seq.push(x);
        act_seq.push(a);
        rew_seq.push(model.reward[s][a][s_next]);
        if let Some(states) = state_seq.as_mut() {
            states.push(s_next);
        }
        s = s_next;
    }
    History {
        obs_seq,
        act_seq,
        rew_seq,
        state_seq,
    }
}

/// Cart-on-a-track world.  Five positions; the cart is loaded whenever it
/// reaches the left end and earns one unit of reward when it arrives at the
/// right end while loaded (becoming unloaded).  Only the position is
/// observable, so the load flag must be tracked by the controller's memory.
///
/// States are (position, loaded) pairs minus the unreachable
/// (leftmost, unloaded): 9 states, indexed leftmost-loaded first.
/// Deterministic dynamics; moving off an end leaves the cart unmoved;
/// starts loaded at the left end; horizon 100.
pub fn build_load_unload() -> Pomdp {
    const POSITIONS: usize = 5;
    // idx 0 = (pos 0, loaded); for pos p >= 1: 2p-1 = unloaded, 2p = loaded.
    let idx = |pos: usize, loaded: bool| -> usize {
        if pos == 0 {
            assert!(loaded);
            0
        } else {
            2 * pos - 1 + usize::from(loaded)
        }
    };
    let n_states = 2 * POSITIONS - 1;
    let n_actions = 2; // 0 = left, 1 = right
    let states: Vec<(usize, bool)> = {
        let mut v = vec![(0, true)];
        for p in 1..POSITIONS {
            v.push((p, false));
            v.push((p, true));
        }
        v
    };

    let mut trans = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut reward = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut obs = vec![vec![0.0; POSITIONS]; n_states];
    for (s, &(pos, loaded)) in states.iter().enumerate() {
        obs[s][pos] = 1.0;
        for a in 0..n_actions {
            let next_pos = if a == 0 {
                pos.saturating_sub(1)
            } else {
                (pos + 1).min(POSITIONS - 1)
            };
            // Load on arriving at the left end; unload (and pay) on arriving
            // at the right end while loaded.
            let (next_loaded, r) = if next_pos == 0 {
                (true, 0.0)
            } else if next_pos == POSITIONS - 1 && loaded {
                (false, 1.0)
            } else {
                (loaded, 0.0)
            };
            let s_next = idx(next_pos, next_loaded);
            trans[s][a][s_next] = 1.0;
            reward[s][a][s_next] = r;
        }
    }
    let mut start = vec![0.0; n_states];
    start[idx(0, true)] = 1.0;

    let model = Pomdp {
        name: "load-unload".to_string(),
        n_states,
        n_obs: POSITIONS,
        n_actions,
        horizon: 100,
        start,
        trans,
        obs,
        reward,
    };
    debug_assert!(model.validate().is_ok());
    model
}

/// Eight-state corridor.  The agent starts in state 3 (the fourth from the
/// left) and only observes which half it is in (states 0-3 vs 4-7).  Action
/// 0 moves left, action 1 moves right; with probability `slip` the move
/// fails and the agent stays put; moving off an end stays put.  One unit of
/// reward is earned on every transition that arrives in a reward state,
/// including arrivals that stay in place.  Horizon 100.
pub fn build_left_right(reward_states: &[usize], slip: f64) -> Result<Pomdp> {
    const N: usize = 8;
    if reward_states.is_empty() {
        return Err(Error::Invalid("reward state set is empty".into()));
    }
    for &s in reward_states {
        if s >= N {
            return Err(Error::Invalid(format!(
                "reward state {s} out of range (8 states)"
            )));
        }
    }
    if !(0.0..0.5).contains(&slip) {
        return Err(Error::Invalid(format!("slip {slip} outside [0, 0.5)")));
    }
    let is_reward = |s: usize| reward_states.contains(&s);

    let n_actions = 2; // 0 = left, 1 = right
    let mut trans = vec![vec![vec![0.0; N]; n_actions]; N];
    let mut reward = vec![vec![vec![0.0; N]; n_actions]; N];
    let mut obs = vec![vec![0.0; 2]; N];
    for s in 0..N {
        obs[s][usize::from(s >= N / 2)] = 1.0;
        for a in 0..n_actions {
            let target = if a == 0 {
                s.saturating_sub(1)
            } else {
                (s + 1).min(N - 1)
            };
            if target == s {
                trans[s][a][s] = 1.0;
            } else {
                trans[s][a][target] = 1.0 - slip;
                trans[s][a][s] = slip;
            }
            for s_next in 0..N {
                if is_reward(s_next) {
                    reward[s][a][s_next] = 1.0;
                }
            }
        }
    }
    let mut start = vec![0.0; N];
    start[3] = 1.0;

    let model = Pomdp {
        name: "left-right".to_string(),
        n_states: N,
        n_obs: 2,
        n_actions,
        horizon: 100,
        start,
        trans,
        obs,
        reward,
    };
    model.validate()?;
    Ok(model)
}

/// Wraps a POMDP so that `n_mem` memory values become part of the
/// environment: states, observations and actions are replaced by
/// (state, memory), (observation, memory) and (action, memory-write)
/// pairs.  A memoryless policy on the wrapped world is exactly a
/// stateful controller on the original one, except that the controller
/// must *learn* how its own memory register behaves.
///
/// Joint indices: state `s * n_mem + m`, observation `x * n_mem + m`,
/// action `a * n_mem + m_next`.  The register starts at 0.
pub fn externalize(model: &Pomdp, n_mem: usize) -> Result<Pomdp> {
    if n_mem == 0 {
        return Err(Error::Invalid("memory state count must be positive".into()));
    }
    let ns = model.n_states * n_mem;
    let nx = model.n_obs * n_mem;
    let na = model.n_actions * n_mem;
    let mut start = vec![0.0; ns];
    for s in 0..model.n_states {
        start[s * n_mem] = model.start[s];
    }
    let mut obs = vec![vec![0.0; nx]; ns];
    let mut trans = vec![vec![vec![0.0; ns]; na]; ns];
    let mut reward = vec![vec![vec![0.0; ns]; na]; ns];
    for s in 0..model.n_states {
        for m in 0..n_mem {
            let sj = s * n_mem + m;
            for x in 0..model.n_obs {
                obs[sj][x * n_mem + m] = model.obs[s][x];
            }
            for a in 0..model.n_actions {
                for m_next in 0..n_mem {
                    let aj = a * n_mem + m_next;
                    for s_next in 0..model.n_states {
                        let tj = s_next * n_mem + m_next;
                        trans[sj][aj][tj] = model.trans[s][a][s_next];
                        reward[sj][aj][tj] = model.reward[s][a][s_next];
                    }
                }
            }
        }
    }
    let wrapped = Pomdp {
        name: format!("{}+mem{}", model.name, n_mem),
        n_states: ns,
        n_obs: nx,
        n_actions: na,
        horizon: model.horizon,
        start,
        trans,
        obs,
        reward,
    };
    wrapped.validate()?;
    Ok(wrapped)
}
