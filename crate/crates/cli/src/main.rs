//! Thin command line over the experiment library: argument parsing and
//! printing only, so everything observable is reachable from tests through
//! the library entry points.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pomis::bias_variance::{self, BiasVarianceConfig};
use pomis::experiments::{self, CustomConfig, ExperimentId, ExperimentOutput, ExperimentSpec};
use pomis::leftright::{self, LeftrightConfig};
use pomis::loadunload::{self, LoadunloadConfig};
use pomis::report::{self, cell, FileMeta};
use pomis::worlds::resolve_world;
use pomis_core::oracle::exact_return;
use pomis_core::search::{BaselineMode, StepDecay};
use pomis_core::{
    episode_return, externalize, greedy_learn, reinforce_learn, sample_episode, ClimbOptions,
    Error, EstimateKind, FscActor, FscPolicy, GreedyOptions, LearnLog, Pomdp, ReinforceOptions,
    Result, TrialRecord,
};

#[derive(Parser)]
#[command(
    name = "pomis",
    version,
    about = "Importance-sampled return estimation and policy search for small worlds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct WorldArgs {
    /// Built-in world name (left-right, load-unload, load-unload-external)
    /// or a world JSON path.
    #[arg(long, default_value = "left-right")]
    world: String,
    /// Override the world's episode length.
    #[arg(long)]
    horizon: Option<usize>,
}

impl WorldArgs {
    fn load(&self) -> Result<Pomdp> {
        let mut world = resolve_world(&self.world)?;
        if let Some(horizon) = self.horizon {
            if horizon == 0 {
                return Err(Error::Invalid("horizon must be positive".into()));
            }
            world.horizon = horizon;
        }
        Ok(world)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes with a fixed controller and write a trial log.
    Simulate {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Controller JSON; a uniform controller when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Memory states of the uniform controller (ignored with --policy).
        #[arg(long, default_value_t = 1)]
        memory_states: usize,
        /// Trial log to write (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact model quantities: a controller's return, and optionally the
    /// return over the whole reactive policy square.
    Oracle {
        #[command(flatten)]
        world: WorldArgs,
        /// Controller JSON; a uniform controller when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        memory_states: usize,
        /// Scan the policy square at this many points per axis.
        #[arg(long)]
        grid: Option<usize>,
        /// Where the grid table goes (required with --grid).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy estimate-and-climb learning.
    Learn {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// naive, unnormalized or normalized.
        #[arg(long, default_value = "normalized")]
        estimator: String,
        #[arg(long, default_value_t = 1)]
        memory_states: usize,
        /// Fold the memory states into the world's observations and
        /// actions instead of the controller.
        #[arg(long)]
        external_memory: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-episode policy-gradient learning.
    Reinforce {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        memory_states: usize,
        /// Fold the memory states into the world instead of the controller.
        #[arg(long)]
        external_memory: bool,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        /// constant or inverse-trial.
        #[arg(long, default_value = "constant")]
        decay: String,
        /// none or running-mean.
        #[arg(long, default_value = "running-mean")]
        baseline: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Canned experiment suites writing provenance-stamped report files.
    Experiment {
        /// Which suite to run; may be omitted when --spec names one.
        #[arg(value_enum)]
        id: Option<ExperimentId>,
        /// Experiment spec JSON; flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        world: Option<String>,
        /// Master seed all run streams derive from.
        #[arg(long)]
        seed: Option<u64>,
        /// Run count; overriding it drops any explicit seed list.
        #[arg(long)]
        runs: Option<usize>,
        /// Estimator kind; repeat the flag for several.
        #[arg(long)]
        estimator: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trials per run (leftright-compare, custom).
        #[arg(long)]
        trials: Option<usize>,
        /// Controller memory states (custom).
        #[arg(long)]
        memory_states: Option<usize>,
        /// Largest trial pool (bias-variance).
        #[arg(long)]
        max_n: Option<usize>,
        /// Explicit-memory greedy trial budget (loadunload-compare).
        #[arg(long)]
        greedy_trials: Option<usize>,
        /// Policy-gradient trial budget (loadunload-compare).
        #[arg(long)]
        reinforce_trials: Option<usize>,
        /// Externalized greedy trial budget (loadunload-compare).
        #[arg(long)]
        ablation_trials: Option<usize>,
        /// Skip the externalized greedy ablation (loadunload-compare).
        #[arg(long)]
        no_ablation: bool,
    },
    /// Check worlds, controllers, trial logs or experiment specs.
    Validate {
        #[arg(long)]
        world: Option<String>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        trials: Option<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            world,
            seed,
            trials,
            policy,
            memory_states,
            out,
        } => run_simulate(&world, seed, trials, policy.as_deref(), memory_states, &out),
        Command::Oracle {
            world,
            policy,
            memory_states,
            grid,
            out,
        } => run_oracle(
            &world,
            policy.as_deref(),
            memory_states,
            grid,
            out.as_deref(),
        ),
        Command::Learn {
            world,
            seed,
            trials,
            estimator,
            memory_states,
            external_memory,
            out,
        } => run_learn(
            &world,
            seed,
            trials,
            &estimator,
            memory_states,
            external_memory,
            &out,
        ),
        Command::Reinforce {
            world,
            seed,
            trials,
            memory_states,
            external_memory,
            learning_rate,
            decay,
            baseline,
            out,
        } => run_reinforce(
            &world,
            seed,
            trials,
            memory_states,
            external_memory,
            learning_rate,
            &decay,
            &baseline,
            &out,
        ),
        Command::Experiment {
            id,
            spec,
            world,
            seed,
            runs,
            estimator,
            out,
            trials,
            memory_states,
            max_n,
            greedy_trials,
            reinforce_trials,
            ablation_trials,
            no_ablation,
        } => {
            let overrides = ExperimentOverrides {
                id,
                spec,
                world,
                seed,
                runs,
                estimator,
                out,
                trials,
                memory_states,
                max_n,
                greedy_trials,
                reinforce_trials,
                ablation_trials,
                no_ablation,
            };
            run_experiment(overrides)
        }
        Command::Validate {
            world,
            policy,
            trials,
            spec,
        } => run_validate(world, policy, trials, spec),
    }
}

fn load_policy_or_uniform(
    world: &Pomdp,
    policy: Option<&std::path::Path>,
    memory_states: usize,
) -> Result<FscPolicy> {
    let policy = match policy {
        Some(path) => pomis_core::io::load_policy(path)?,
        None => {
            if memory_states == 0 {
                return Err(Error::Invalid("need at least one memory state".into()));
            }
            FscPolicy::uniform(world.n_obs, world.n_actions, memory_states)
        }
    };
    if policy.n_obs != world.n_obs || policy.n_actions != world.n_actions {
        return Err(Error::DimensionMismatch(format!(
            "controller reads {} observations / {} actions, world offers {} / {}",
            policy.n_obs, policy.n_actions, world.n_obs, world.n_actions
        )));
    }
    Ok(policy)
}

fn run_simulate(
    world_args: &WorldArgs,
    seed: u64,
    trials: usize,
    policy: Option<&std::path::Path>,
    memory_states: usize,
    out: &std::path::Path,
) -> Result<()> {
    if trials == 0 {
        return Err(Error::Invalid("need at least one trial".into()));
    }
    let world = world_args.load()?;
    let policy = load_policy_or_uniform(&world, policy, memory_states)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<TrialRecord> = (0..trials)
        .map(|_| {
            let mut actor = FscActor::new(&policy);
            let history = sample_episode(&world, &mut actor, &mut rng, false);
            TrialRecord {
                policy: policy.clone(),
                history,
            }
        })
        .collect();
    let mean = records
        .iter()
        .map(|r| episode_return(&r.history))
        .sum::<f64>()
        / trials as f64;
    let meta = FileMeta::new(seed, &world, "none").with_extra("trials", trials);
    write_dir_of(out)?;
    report::write_trials(out, &meta, &records)?;
    println!(
        "wrote {} ({trials} trials, mean return {})",
        out.display(),
        cell(mean)
    );
    Ok(())
}

fn run_oracle(
    world_args: &WorldArgs,
    policy: Option<&std::path::Path>,
    memory_states: usize,
    grid: Option<usize>,
    out: Option<&std::path::Path>,
) -> Result<()> {
    let world = world_args.load()?;
    let policy = load_policy_or_uniform(&world, policy, memory_states)?;
    println!("exact return: {}", cell(exact_return(&world, &policy)?));
    if let Some(points) = grid {
        let out = out.ok_or_else(|| Error::Invalid("--grid needs --out for the table".into()))?;
        if points < 2 {
            return Err(Error::Invalid(
                "the grid needs at least 2 points per axis".into(),
            ));
        }
        let rows = leftright::exact_rows(&world, points)?;
        let best = rows
            .iter()
            .max_by(|a, b| a[2].partial_cmp(&b[2]).expect("finite returns"))
            .expect("grid is never empty");
        println!(
            "grid optimum: {} at ({},{})",
            cell(best[2]),
            cell(best[0]),
            cell(best[1])
        );
        let meta =
            FileMeta::new(0, &world, "exact").with_extra("grid", format!("{points}x{points}"));
        write_dir_of(out)?;
        report::write_csv(
            out,
            &meta,
            &["p_left_in_left_half", "p_left_in_right_half", "return"],
            &rows,
        )?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn write_dir_of(path: &std::path::Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    Ok(())
}

fn ensure_dir(path: &std::path::Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the shared artifacts of a finished learning run: the trial log,
/// a per-trial statistics table and the final controller.
fn write_learn_outputs(out: &std::path::Path, meta: &FileMeta, log: &LearnLog) -> Result<()> {
    ensure_dir(out)?;
    report::write_trials(&out.join("trials.jsonl"), meta, &log.records)?;
    let rows: Vec<Vec<f64>> = log
        .stats
        .iter()
        .map(|s| {
            vec![
                s.trial as f64,
                s.ret,
                s.estimate.unwrap_or(f64::NAN),
                s.grad_max_norm,
                s.climb_iterations as f64,
            ]
        })
        .collect();
    report::write_csv(
        &out.join("returns.csv"),
        meta,
        &[
            "trial",
            "return",
            "estimate",
            "grad_max_norm",
            "climb_iterations",
        ],
        &rows,
    )?;
    // Controller documents are interchange JSON, which has no room for
    // comment headers; their provenance lives in the sibling files.
    pomis_core::io::save_policy(out.join("policy.json"), &log.final_policy)?;
    let mean = log.returns().iter().sum::<f64>() / log.stats.len() as f64;
    println!(
        "wrote {} ({} trials, mean return {}, final-trial return {})",
        out.display(),
        log.stats.len(),
        cell(mean),
        cell(log.stats.last().expect("at least one trial").ret)
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_learn(
    world_args: &WorldArgs,
    seed: u64,
    trials: usize,
    estimator: &str,
    memory_states: usize,
    external_memory: bool,
    out: &std::path::Path,
) -> Result<()> {
    let kind = EstimateKind::from_str(estimator)?;
    if memory_states == 0 {
        return Err(Error::Invalid("need at least one memory state".into()));
    }
    let base = world_args.load()?;
    let (world, n_mem, memory_label) = if external_memory {
        (
            externalize(&base, memory_states)?,
            1,
            format!("external, {memory_states} states"),
        )
    } else {
        (
            base,
            memory_states,
            format!("explicit, {memory_states} states"),
        )
    };
    let options = GreedyOptions {
        n_trials: trials,
        kind,
        climb: ClimbOptions::default(),
    };
    let initial = FscPolicy::uniform(world.n_obs, world.n_actions, n_mem);
    let log = greedy_learn(&world, &initial, &options, seed)?;
    let meta = FileMeta::new(seed, &world, kind.to_string())
        .with_climb(&options.climb)
        .with_extra("learner", "greedy")
        .with_extra("memory", memory_label)
        .with_extra("trials", trials);
    write_learn_outputs(out, &meta, &log)
}

#[allow(clippy::too_many_arguments)]
fn run_reinforce(
    world_args: &WorldArgs,
    seed: u64,
    trials: usize,
    memory_states: usize,
    external_memory: bool,
    learning_rate: f64,
    decay: &str,
    baseline: &str,
    out: &std::path::Path,
) -> Result<()> {
    let decay = match decay {
        "constant" => StepDecay::Constant,
        "inverse-trial" => StepDecay::InverseTrial,
        other => {
            return Err(Error::Parse {
                where_: "step decay".into(),
                msg: format!("unknown schedule {other:?} (constant, inverse-trial)"),
            })
        }
    };
    let baseline = match baseline {
        "none" => BaselineMode::None,
        "running-mean" => BaselineMode::RunningMean,
        other => {
            return Err(Error::Parse {
                where_: "baseline".into(),
                msg: format!("unknown baseline {other:?} (none, running-mean)"),
            })
        }
    };
    if memory_states == 0 {
        return Err(Error::Invalid("need at least one memory state".into()));
    }
    let base = world_args.load()?;
    let (world, n_mem, memory_label) = if external_memory {
        (
            externalize(&base, memory_states)?,
            1,
            format!("external, {memory_states} states"),
        )
    } else {
        (
            base,
            memory_states,
            format!("explicit, {memory_states} states"),
        )
    };
    let options = ReinforceOptions {
        n_trials: trials,
        learning_rate,
        decay,
        baseline,
    };
    let initial = FscPolicy::uniform(world.n_obs, world.n_actions, n_mem);
    let log = reinforce_learn(&world, &initial, &options, seed)?;
    let meta = FileMeta::new(seed, &world, "none")
        .with_reinforce(&options)
        .with_extra("learner", "policy-gradient")
        .with_extra("memory", memory_label);
    write_learn_outputs(out, &meta, &log)
}

struct ExperimentOverrides {
    id: Option<ExperimentId>,
    spec: Option<PathBuf>,
    world: Option<String>,
    seed: Option<u64>,
    runs: Option<usize>,
    estimator: Vec<String>,
    out: Option<PathBuf>,
    trials: Option<usize>,
    memory_states: Option<usize>,
    max_n: Option<usize>,
    greedy_trials: Option<usize>,
    reinforce_trials: Option<usize>,
    ablation_trials: Option<usize>,
    no_ablation: bool,
}

fn default_spec(id: ExperimentId) -> ExperimentSpec {
    let (world, runs) = match id {
        ExperimentId::BiasVariance => ("left-right", 600),
        ExperimentId::LeftrightCompare => ("left-right", 10),
        ExperimentId::LoadunloadCompare => ("load-unload", 10),
        ExperimentId::Custom => ("left-right", 5),
    };
    ExperimentSpec {
        experiment: id,
        world: world.into(),
        runs,
        seeds: None,
        master_seed: 1,
        estimators: Vec::new(),
        out_dir: PathBuf::from("out").join(id.to_string()),
    }
}

fn run_experiment(overrides: ExperimentOverrides) -> Result<()> {
    let mut spec = match (&overrides.spec, overrides.id) {
        (Some(path), _) => experiments::load_spec(path)?,
        (None, Some(id)) => default_spec(id),
        (None, None) => return Err(Error::Invalid("name an experiment or pass --spec".into())),
    };
    if let Some(id) = overrides.id {
        spec.experiment = id;
    }
    if let Some(world) = overrides.world {
        spec.world = world;
    }
    if let Some(seed) = overrides.seed {
        spec.master_seed = seed;
    }
    if let Some(runs) = overrides.runs {
        if runs != spec.runs {
            spec.seeds = None;
        }
        spec.runs = runs;
    }
    if !overrides.estimator.is_empty() {
        spec.estimators = overrides
            .estimator
            .iter()
            .map(|s| EstimateKind::from_str(s))
            .collect::<Result<_>>()?;
    }
    if let Some(out) = overrides.out {
        spec.out_dir = out;
    }

    let output: ExperimentOutput = match spec.experiment {
        ExperimentId::BiasVariance => {
            let mut cfg = BiasVarianceConfig::default();
            if let Some(max_n) = overrides.max_n {
                cfg.max_n = max_n;
                cfg.step_n = cfg.step_n.min(max_n);
            }
            bias_variance::run(&spec, &cfg)?
        }
        ExperimentId::LeftrightCompare => {
            let cfg = match overrides.trials {
                Some(trials) => LeftrightConfig::for_trials(trials),
                None => LeftrightConfig::default(),
            };
            leftright::run(&spec, &cfg)?
        }
        ExperimentId::LoadunloadCompare => {
            let mut cfg = LoadunloadConfig::default();
            if let Some(t) = overrides.greedy_trials {
                cfg.greedy_trials = t;
            }
            if let Some(t) = overrides.reinforce_trials {
                cfg.reinforce_trials = t;
            }
            if let Some(t) = overrides.ablation_trials {
                cfg.ablation_trials = t;
            }
            if overrides.no_ablation {
                cfg.ablation = false;
            }
            loadunload::run(&spec, &cfg)?
        }
        ExperimentId::Custom => {
            let mut cfg = CustomConfig::default();
            if let Some(trials) = overrides.trials {
                cfg.trials = trials;
            }
            if let Some(memory_states) = overrides.memory_states {
                cfg.memory_states = memory_states;
            }
            experiments::run_custom(&spec, &cfg)?
        }
    };
    for file in &output.files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn run_validate(
    world: Option<String>,
    policy: Option<PathBuf>,
    trials: Option<PathBuf>,
    spec: Option<PathBuf>,
) -> Result<()> {
    let mut checked = false;
    if let Some(reference) = world {
        resolve_world(&reference)?;
        println!("ok: world {reference}");
        checked = true;
    }
    if let Some(path) = policy {
        pomis_core::io::load_policy(&path)?;
        println!("ok: policy {}", path.display());
        checked = true;
    }
    if let Some(path) = trials {
        let records = pomis_core::io::load_trials(&path)?;
        println!(
            "ok: trial log {} ({} trials)",
            path.display(),
            records.len()
        );
        checked = true;
    }
    if let Some(path) = spec {
        let spec = experiments::load_spec(&path)?;
        println!("ok: spec {} ({})", path.display(), spec.experiment);
        checked = true;
    }
    if !checked {
        return Err(Error::Invalid(
            "nothing to validate; pass --world, --policy, --trials or --spec".into(),
        ));
    }
    Ok(())
}
