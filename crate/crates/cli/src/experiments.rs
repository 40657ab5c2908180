//! Experiment driver: a small spec naming what to run and runners that
//! turn it into provenance-stamped report files.
//!
//! Seeding discipline: run r of an experiment draws from
//! `derive_seed(master, r)` (or the spec's explicit per-run seed list),
//! split once more per experiment arm under a fixed arm identifier.
//! Adding runs or arms therefore never perturbs existing streams, and a
//! rerun with the same master seed reproduces every output file byte for
//! byte.  Independent runs execute in parallel and each writes its own
//! files; merged tables are assembled only after every run has finished.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pomis_core::numeric::derive_seed;
use pomis_core::{
    greedy_learn, ClimbOptions, Error, EstimateKind, FscPolicy, GreedyOptions, LearnLog, Result,
};

use crate::bias_variance::{self, BiasVarianceConfig};
use crate::leftright::{self, LeftrightConfig};
use crate::loadunload::{self, LoadunloadConfig};
use crate::report::{write_csv, write_trials, FileMeta};
use crate::stats::five_number;
use crate::worlds::resolve_world;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    /// Spread and bias of the two difference statistics as the pool grows.
    BiasVariance,
    /// Greedy search against random policy choice on the corridor world.
    LeftrightCompare,
    /// Greedy search against policy-gradient learning on the cart world.
    LoadunloadCompare,
    /// Greedy learning on an arbitrary world reference.
    Custom,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentId::BiasVariance => "bias-variance",
            ExperimentId::LeftrightCompare => "leftright-compare",
            ExperimentId::LoadunloadCompare => "loadunload-compare",
            ExperimentId::Custom => "custom",
        })
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentId,
    /// Built-in world name or world JSON path.
    pub world: String,
    /// Independent runs (replications for bias-variance).
    pub runs: usize,
    /// One seed per run; omit to derive them from the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub master_seed: u64,
    /// Estimator kinds to exercise; empty means the experiment's default.
    #[serde(default)]
    pub estimators: Vec<EstimateKind>,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Invalid("run count must be at least 1".into()));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.runs {
                return Err(Error::Invalid(format!(
                    "seed list has {} entries for {} runs",
                    seeds.len(),
                    self.runs
                )));
            }
        }
        Ok(())
    }

    /// Base seed of run `run`, before any per-arm split.
    pub fn run_seed(&self, run: usize) -> u64 {
        match &self.seeds {
            Some(seeds) => seeds[run],
            None => derive_seed(self.master_seed, run as u64),
        }
    }

    /// Stream for one arm of one run.  Arm identifiers are fixed per
    /// experiment, so a spec exercising fewer arms still hands the shared
    /// ones identical data.
    pub fn arm_seed(&self, arm: u64, run: usize) -> u64 {
        derive_seed(self.run_seed(run), arm)
    }

    pub fn estimators_or(&self, default: &[EstimateKind]) -> Vec<EstimateKind> {
        if self.estimators.is_empty() {
            default.to_vec()
        } else {
            self.estimators.clone()
        }
    }
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let spec: ExperimentSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        where_: path.display().to_string(),
        msg: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Files written by a finished experiment, in creation order.
#[derive(Debug, Default)]
pub struct ExperimentOutput {
    pub files: Vec<PathBuf>,
}

impl ExperimentOutput {
    pub fn push(&mut self, path: PathBuf) {
        self.files.push(path);
    }
}

/// Runs a spec with each experiment's default configuration.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    match spec.experiment {
        ExperimentId::BiasVariance => bias_variance::run(spec, &BiasVarianceConfig::default()),
        ExperimentId::LeftrightCompare => leftright::run(spec, &LeftrightConfig::default()),
        ExperimentId::LoadunloadCompare => loadunload::run(spec, &LoadunloadConfig::default()),
        ExperimentId::Custom => run_custom(spec, &CustomConfig::default()),
    }
}

pub(crate) fn prepare_out_dir(spec: &ExperimentSpec) -> Result<()> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir).map_err(|source| Error::Io {
        path: spec.out_dir.display().to_string(),
        source,
    })
}

/// Greedy learning on whatever world the spec references.
#[derive(Debug, Clone)]
pub struct CustomConfig {
    pub trials: usize,
    pub memory_states: usize,
}

impl Default for CustomConfig {
    fn default() -> Self {
        CustomConfig {
            trials: 50,
            memory_states: 1,
        }
    }
}

fn kind_arm(kind: EstimateKind) -> u64 {
    match kind {
        EstimateKind::Naive => 0,
        EstimateKind::Unnormalized => 1,
        EstimateKind::Normalized => 2,
    }
}

pub fn run_custom(spec: &ExperimentSpec, cfg: &CustomConfig) -> Result<ExperimentOutput> {
    prepare_out_dir(spec)?;
    if cfg.trials == 0 || cfg.memory_states == 0 {
        return Err(Error::Invalid(
            "custom experiments need at least one trial and one memory state".into(),
        ));
    }
    let world = resolve_world(&spec.world)?;
    let initial = FscPolicy::uniform(world.n_obs, world.n_actions, cfg.memory_states);
    let climb = ClimbOptions::default();
    let mut output = ExperimentOutput::default();

    for kind in spec.estimators_or(&[EstimateKind::Normalized]) {
        let options = GreedyOptions {
            n_trials: cfg.trials,
            kind,
            climb: climb.clone(),
        };
        let meta = FileMeta::new(spec.master_seed, &world, kind.to_string())
            .with_climb(&climb)
            .with_extra("runs", spec.runs)
            .with_extra("trials", cfg.trials)
            .with_extra("memory_states", cfg.memory_states);

        let logs: Vec<LearnLog> = (0..spec.runs)
            .into_par_iter()
            .map(|run| -> Result<LearnLog> {
                let seed = spec.arm_seed(kind_arm(kind), run);
                let log = greedy_learn(&world, &initial, &options, seed)?;
                let run_meta = meta
                    .clone()
                    .with_extra("run", run)
                    .with_extra("run_seed", seed);
                let path = spec
                    .out_dir
                    .join(format!("trials_{kind}_run{run:02}.jsonl"));
                write_trials(&path, &run_meta, &log.records)?;
                Ok(log)
            })
            .collect::<Result<_>>()?;
        for run in 0..spec.runs {
            output.push(
                spec.out_dir
                    .join(format!("trials_{kind}_run{run:02}.jsonl")),
            );
        }

        let rows: Vec<Vec<f64>> = (0..cfg.trials)
            .map(|t| {
                let at_t: Vec<f64> = logs.iter().map(|log| log.stats[t].ret).collect();
                let [min, q1, med, q3, max] = five_number(&at_t);
                vec![(t + 1) as f64, min, q1, med, q3, max]
            })
            .collect();
        let path = spec.out_dir.join(format!("bands_{kind}.csv"));
        write_csv(
            &path,
            &meta,
            &["trial", "min", "q1", "median", "q3", "max"],
            &rows,
        )?;
        output.push(path);
    }
    Ok(output)
}
