//! Built-in worlds and the world-reference resolution used everywhere a
//! command or experiment spec names one.

use std::path::Path;

use pomis_core::{build_left_right, build_load_unload, externalize, FscPolicy, Pomdp, Result};

/// Names `resolve_world` accepts without touching the filesystem.
pub const BUILTIN_WORLDS: [&str; 3] = ["left-right", "load-unload", "load-unload-external"];

/// Default corridor layout: reward at both ends, deterministic moves.
/// Running left is slightly better because the start sits one step closer
/// to the left end.
pub fn default_left_right() -> Pomdp {
    build_left_right(&[0, 7], 0.0).expect("default layout is valid")
}

/// The cart world with its memory register folded into the observation and
/// action spaces, for learners without internal memory.
pub fn external_load_unload() -> Pomdp {
    externalize(&build_load_unload(), 2).expect("the cart world externalizes")
}

/// Resolves a world reference: a built-in name, or a path to a world JSON
/// document.
pub fn resolve_world(reference: &str) -> Result<Pomdp> {
    match reference {
        "left-right" => Ok(default_left_right()),
        "load-unload" => Ok(build_load_unload()),
        "load-unload-external" => Ok(external_load_unload()),
        path => pomis_core::io::load_world(Path::new(path)),
    }
}

/// Memoryless controller at a point of the two-parameter policy square,
/// written as (P(action 0 | observation 0), P(action 0 | observation 1)).
pub fn reactive_point(p0: f64, p1: f64) -> Result<FscPolicy> {
    FscPolicy::reactive_from_probs(&[vec![p0, 1.0 - p0], vec![p1, 1.0 - p1]])
}

/// Reads the policy-square coordinates back out of a memoryless
/// controller.
pub fn reactive_coords(policy: &FscPolicy) -> (f64, f64) {
    let tables = policy.tables();
    (tables.act[0][0][0], tables.act[1][0][0])
}
