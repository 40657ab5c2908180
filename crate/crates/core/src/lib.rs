//! Off-policy evaluation and policy search for finite POMDPs with
//! finite-state controllers.
//!
//! The central fact the crate is built around: the probability of an
//! episode factors into a world part W(h) that no policy can change and an
//! action-likelihood part A(h, pi) that depends only on observables.  Data
//! collected by arbitrary (known) controllers can therefore be reweighted
//! to evaluate any other controller, with every W cancelling out of the
//! weights.  On top of that sit
//!
//! * [`world`]: table POMDPs, episode simulation and the two benchmark
//!   worlds (a cart that ferries loads, a corridor with hidden halves),
//! * [`policy`]: finite-state controllers, their likelihoods and
//!   likelihood gradients,
//! * [`estimator`]: trial pools and three reweighting estimators of a
//!   target policy's expected return, plus paired difference statistics,
//! * [`oracle`]: exhaustive ground truth for small worlds (history
//!   enumeration, moment formulas, exact returns) used to test the
//!   estimators rather than trust them,
//! * [`search`]: conjugate-gradient ascent on estimates and the greedy and
//!   policy-gradient learning loops,
//! * [`io`]: JSON persistence for worlds, policies and trial logs.
//!
//! All randomness is explicit: every sampling entry point takes either a
//! seed or a caller-owned ChaCha generator, and repeated runs are
//! bit-identical.

// The DP recurrences index several tables by one shared subscript; iterator
// chains there would bury the math.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod estimator;
pub mod io;
pub mod numeric;
pub mod oracle;
pub mod policy;
pub mod search;
pub mod world;

pub use error::{Error, Result};
pub use estimator::{Dataset, EstimateKind, TrialRecord};
pub use policy::{likelihood_batch, FscActor, FscPolicy, PolicyGradient, PolicyTables};
pub use search::{
    climb, golden_section, greedy_learn, reinforce_learn, BaselineMode, ClimbOptions, ClimbOutcome,
    GreedyOptions, LearnLog, ReinforceOptions, StepDecay, TrialStats,
};
pub use world::{
    build_left_right, build_load_unload, episode_return, externalize, sample_episode, Actor,
    History, Pomdp,
};
