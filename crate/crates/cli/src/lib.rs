//! Library half of the `pomis` binary: world resolution, provenance-stamped
//! report files and the canned experiment suites.  The binary itself is a
//! thin argument parser over these entry points so integration tests can
//! drive experiments without spawning processes.

pub mod bias_variance;
pub mod experiments;
pub mod leftright;
pub mod loadunload;
pub mod report;
pub mod stats;
pub mod worlds;

pub use experiments::{load_spec, run, ExperimentId, ExperimentOutput, ExperimentSpec};
pub use report::FileMeta;
pub use worlds::resolve_world;
