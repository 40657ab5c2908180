//! Provenance-stamped output files.
//!
//! Every file an experiment writes opens with `#`-prefixed header lines
//! recording the tool version, the master seed, the world (name plus a
//! fingerprint of its full JSON form), the estimator kind, and whatever
//! search or policy-gradient settings were in force.  Reruns with the same
//! master seed must reproduce every file byte for byte, so headers carry
//! no timestamps and every numeric cell is written in shortest round-trip
//! decimal form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pomis_core::search::{BaselineMode, ClimbOptions, ReinforceOptions, StepDecay};
use pomis_core::{Error, Pomdp, Result, TrialRecord};

/// FNV-1a over the world's JSON document.  Stable across runs because
/// struct fields serialize in declaration order.
pub fn world_fingerprint(model: &Pomdp) -> u64 {
    let doc = serde_json::to_string(model).expect("worlds always serialize");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &byte in doc.as_bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Header block stamped on one output file.
#[derive(Debug, Clone)]
pub struct FileMeta {
    pub master_seed: u64,
    pub world_name: String,
    pub world_fingerprint: u64,
    /// Estimator kind(s) behind the file's numbers; "exact" for
    /// oracle-computed files, "none" for raw simulation logs.
    pub estimator: String,
    pub climb: Option<ClimbOptions>,
    pub reinforce: Option<ReinforceOptions>,
    /// Extra keys in insertion order (grid resolution, run index, ...).
    pub extra: Vec<(String, String)>,
}

impl FileMeta {
    pub fn new(master_seed: u64, world: &Pomdp, estimator: impl Into<String>) -> Self {
        FileMeta {
            master_seed,
            world_name: world.name.clone(),
            world_fingerprint: world_fingerprint(world),
            estimator: estimator.into(),
            climb: None,
            reinforce: None,
            extra: Vec::new(),
        }
    }

    pub fn with_climb(mut self, climb: &ClimbOptions) -> Self {
        self.climb = Some(climb.clone());
        self
    }

    pub fn with_reinforce(mut self, options: &ReinforceOptions) -> Self {
        self.reinforce = Some(options.clone());
        self
    }

    pub fn with_extra(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn header(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# tool: pomis {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# master_seed: {}", self.master_seed);
        let _ = writeln!(
            out,
            "# world: {} fingerprint={:016x}",
            self.world_name, self.world_fingerprint
        );
        let _ = writeln!(out, "# estimator: {}", self.estimator);
        if let Some(c) = &self.climb {
            let restart = c
                .restart_period
                .map_or("auto".to_string(), |p| p.to_string());
            let _ = writeln!(
                out,
                "# climb: max_iterations={} gradient_tolerance={:e} initial_step={} \
                 bracket_growth={} bracket_cap={} golden_tolerance={} restart_period={}",
                c.max_iterations,
                c.gradient_tolerance,
                c.initial_step,
                c.bracket_growth,
                c.bracket_cap,
                c.golden_tolerance,
                restart
            );
        }
        if let Some(r) = &self.reinforce {
            let _ = writeln!(
                out,
                "# reinforce: trials={} learning_rate={} decay={} baseline={}",
                r.n_trials,
                r.learning_rate,
                decay_name(r.decay),
                baseline_name(r.baseline)
            );
        }
        for (key, value) in &self.extra {
            let _ = writeln!(out, "# {key}: {value}");
        }
        out
    }
}

pub fn decay_name(decay: StepDecay) -> &'static str {
    match decay {
        StepDecay::Constant => "constant",
        StepDecay::InverseTrial => "inverse_trial",
    }
}

pub fn baseline_name(baseline: BaselineMode) -> &'static str {
    match baseline {
        BaselineMode::None => "none",
        BaselineMode::RunningMean => "running_mean",
    }
}

/// One CSV cell.  `f64`'s Display form is the shortest decimal that parses
/// back to the same bits, which is exactly the round-trip guarantee the
/// output format promises.
pub fn cell(value: f64) -> String {
    value.to_string()
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_csv(path: &Path, meta: &FileMeta, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = meta.header();
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len(), "ragged row in {}", path.display());
        let mut first = true;
        for &value in row {
            if !first {
                out.push(',');
            }
            out.push_str(&cell(value));
            first = false;
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Plain-text report body under the usual header.
pub fn write_text(path: &Path, meta: &FileMeta, body: &str) -> Result<()> {
    let mut out = meta.header();
    out.push_str(body);
    if !body.ends_with('\n') {
        out.push('\n');
    }
    write_file(path, &out)
}

/// Trial log in the JSON-lines interchange format, under the usual header.
pub fn write_trials(path: &Path, meta: &FileMeta, records: &[TrialRecord]) -> Result<()> {
    let mut out = meta.header();
    out.push_str(&pomis_core::io::trials_document(records)?);
    write_file(path, &out)
}
