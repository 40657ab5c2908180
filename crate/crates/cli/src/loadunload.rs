//! Cart-world comparison: greedy search with an explicit memory bit
//! against policy-gradient learning on externalized memory, plus a greedy
//! ablation that also runs on externalized memory to isolate how much of
//! the gap the explicit memory model accounts for.

use rayon::prelude::*;

use pomis_core::oracle::{exact_return, load_unload_solution};
use pomis_core::search::{BaselineMode, StepDecay};
use pomis_core::{
    externalize, greedy_learn, reinforce_learn, ClimbOptions, Error, EstimateKind, FscPolicy,
    GreedyOptions, Pomdp, ReinforceOptions, Result,
};

use crate::experiments::{prepare_out_dir, ExperimentOutput, ExperimentSpec};
use crate::report::{cell, decay_name, write_csv, write_text, FileMeta};
use crate::stats::{first_reach, five_number, median, smooth_trailing};
use crate::worlds::resolve_world;

#[derive(Debug, Clone)]
pub struct LoadunloadConfig {
    pub greedy_trials: usize,
    pub reinforce_trials: usize,
    /// Trial budget for the externalized greedy ablation, which needs
    /// roughly twice the explicit-memory budget to reach the same bar.
    pub ablation_trials: usize,
    /// Trailing window for smoothing single-episode policy-gradient
    /// returns before they are summarized.
    pub smoothing_window: usize,
    /// Success bar as a fraction of the oracle-optimal return.
    pub threshold_fraction: f64,
    /// Step-size schedule grid the policy-gradient arm is tuned over.
    pub learning_rates: Vec<f64>,
    pub decays: Vec<StepDecay>,
    pub ablation: bool,
}

impl Default for LoadunloadConfig {
    fn default() -> Self {
        LoadunloadConfig {
            greedy_trials: 100,
            reinforce_trials: 1000,
            ablation_trials: 250,
            smoothing_window: 10,
            threshold_fraction: 0.8,
            learning_rates: vec![0.01, 0.05, 0.1, 0.5],
            decays: vec![StepDecay::Constant, StepDecay::InverseTrial],
            ablation: true,
        }
    }
}

/// Fixed arm identifiers.  Tuning arms follow grid order, so changing the
/// grid reshuffles only the tuning streams.
const GREEDY_ARM: u64 = 0;
const ABLATION_ARM: u64 = 1;
const TUNING_ARM_BASE: u64 = 16;

/// Per-trial climb iteration budgets for the two greedy arms.  The
/// explicit-memory landscape rewards a few steps per trial; the
/// externalized one, with two and a half times the parameters, saturates
/// sooner and does best taking the shortest productive update.
const EXPLICIT_CLIMB_ITERATIONS: usize = 5;
const EXTERNAL_CLIMB_ITERATIONS: usize = 2;

/// Hill-climb settings for this world, tuned in two directions at once.
/// Mixture-weight gradients shrink by dozens of orders of magnitude as the
/// policy sharpens while their direction stays informative, so the stock
/// gradient cutoff would read a sharp policy as converged and freeze the
/// learner; the smallest positive cutoff keeps every climb alive.  In the
/// other direction, letting one climb run to convergence lets it chase a
/// single lucky history so far into saturation that every other record's
/// weight underflows and the learner goes numerically blind; a few
/// iterations per trial keeps each update short of that cliff, and the
/// next trial's climb picks up from there with fresh data.
fn climb_options(max_iterations: usize) -> ClimbOptions {
    ClimbOptions {
        max_iterations,
        gradient_tolerance: f64::MIN_POSITIVE,
        ..ClimbOptions::default()
    }
}

fn quantile_rows(curves: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let trials = curves[0].len();
    (0..trials)
        .map(|t| {
            let at_t: Vec<f64> = curves.iter().map(|curve| curve[t]).collect();
            let [min, q1, med, q3, max] = five_number(&at_t);
            vec![(t + 1) as f64, min, q1, med, q3, max]
        })
        .collect()
}

fn median_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let trials = curves[0].len();
    (0..trials)
        .map(|t| median(&curves.iter().map(|c| c[t]).collect::<Vec<f64>>()))
        .collect()
}

const BAND_COLUMNS: [&str; 6] = ["trial", "min", "q1", "median", "q3", "max"];

struct GreedyArm {
    curves: Vec<Vec<f64>>,
    estimates: Vec<Vec<f64>>,
}

fn run_greedy_arm(
    spec: &ExperimentSpec,
    world: &Pomdp,
    n_mem: usize,
    kind: EstimateKind,
    trials: usize,
    climb: ClimbOptions,
    arm: u64,
) -> Result<GreedyArm> {
    let options = GreedyOptions {
        n_trials: trials,
        kind,
        climb,
    };
    let initial = FscPolicy::uniform(world.n_obs, world.n_actions, n_mem);
    let per_run: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.runs)
        .into_par_iter()
        .map(|run| -> Result<(Vec<f64>, Vec<f64>)> {
            let log = greedy_learn(world, &initial, &options, spec.arm_seed(arm, run))?;
            let returns = log.returns();
            let estimates = log
                .stats
                .iter()
                .map(|s| s.estimate.unwrap_or(f64::NAN))
                .collect();
            Ok((returns, estimates))
        })
        .collect::<Result<_>>()?;
    let (curves, estimates) = per_run.into_iter().unzip();
    Ok(GreedyArm { curves, estimates })
}

fn write_greedy_files(
    spec: &ExperimentSpec,
    meta: &FileMeta,
    name: &str,
    arm: u64,
    data: &GreedyArm,
    output: &mut ExperimentOutput,
) -> Result<()> {
    for run in 0..spec.runs {
        let rows: Vec<Vec<f64>> = data.curves[run]
            .iter()
            .zip(&data.estimates[run])
            .enumerate()
            .map(|(t, (&ret, &est))| vec![(t + 1) as f64, ret, est])
            .collect();
        let run_meta = meta
            .clone()
            .with_extra("run", run)
            .with_extra("run_seed", spec.arm_seed(arm, run));
        let path = spec.out_dir.join(format!("returns_{name}_run{run:02}.csv"));
        write_csv(&path, &run_meta, &["trial", "return", "estimate"], &rows)?;
        output.push(path);
    }
    let path = spec.out_dir.join(format!("bands_{name}.csv"));
    write_csv(&path, meta, &BAND_COLUMNS, &quantile_rows(&data.curves))?;
    output.push(path);
    Ok(())
}

pub fn run(spec: &ExperimentSpec, cfg: &LoadunloadConfig) -> Result<ExperimentOutput> {
    prepare_out_dir(spec)?;
    if cfg.greedy_trials == 0 || cfg.reinforce_trials == 0 || cfg.ablation_trials == 0 {
        return Err(Error::Invalid("every arm needs at least one trial".into()));
    }
    if cfg.smoothing_window == 0 {
        return Err(Error::Invalid("smoothing window must be positive".into()));
    }
    if cfg.learning_rates.is_empty() || cfg.decays.is_empty() {
        return Err(Error::Invalid("the tuning grid must not be empty".into()));
    }
    let world = resolve_world(&spec.world)?;
    if world.n_obs != 5 || world.n_actions != 2 {
        return Err(Error::DimensionMismatch(format!(
            "this comparison expects the cart world's 5 observations and 2 actions, got {}x{}",
            world.n_obs, world.n_actions
        )));
    }
    let external = externalize(&world, 2)?;
    let kind = spec.estimators_or(&[EstimateKind::Normalized])[0];
    let optimal = exact_return(&world, &load_unload_solution())?;
    let threshold = cfg.threshold_fraction * optimal;
    let climb = climb_options(EXPLICIT_CLIMB_ITERATIONS);
    let mut output = ExperimentOutput::default();
    let mut summary = String::new();
    summary.push_str(&format!("oracle_optimal: {}\n", cell(optimal)));
    summary.push_str(&format!("threshold: {}\n", cell(threshold)));

    // Greedy with the explicit memory bit.
    let greedy = run_greedy_arm(
        spec,
        &world,
        2,
        kind,
        cfg.greedy_trials,
        climb.clone(),
        GREEDY_ARM,
    )?;
    let greedy_meta = FileMeta::new(spec.master_seed, &world, kind.to_string())
        .with_climb(&climb)
        .with_extra("learner", "greedy")
        .with_extra("memory", "explicit, 2 states")
        .with_extra("runs", spec.runs)
        .with_extra("trials", cfg.greedy_trials);
    write_greedy_files(
        spec,
        &greedy_meta,
        "greedy",
        GREEDY_ARM,
        &greedy,
        &mut output,
    )?;
    let greedy_reach = first_reach(&median_curve(&greedy.curves), threshold);
    summary.push_str(&format!(
        "greedy_trials_to_threshold: {}\n",
        cell(greedy_reach.map_or(f64::INFINITY, |t| t as f64))
    ));

    // Policy-gradient learning on externalized memory, tuned over the
    // step-size grid; the best schedule's runs are the ones reported.
    let initial_external = FscPolicy::uniform(external.n_obs, external.n_actions, 1);
    let mut tuning_rows = Vec::new();
    let mut best: Option<(usize, f64, ReinforceOptions, Vec<Vec<f64>>)> = None;
    for (li, &learning_rate) in cfg.learning_rates.iter().enumerate() {
        for (di, &decay) in cfg.decays.iter().enumerate() {
            let options = ReinforceOptions {
                n_trials: cfg.reinforce_trials,
                learning_rate,
                decay,
                baseline: BaselineMode::RunningMean,
            };
            let arm = TUNING_ARM_BASE + (li * cfg.decays.len() + di) as u64;
            let smoothed: Vec<Vec<f64>> = (0..spec.runs)
                .into_par_iter()
                .map(|run| -> Result<Vec<f64>> {
                    let log = reinforce_learn(
                        &external,
                        &initial_external,
                        &options,
                        spec.arm_seed(arm, run),
                    )?;
                    Ok(smooth_trailing(&log.returns(), cfg.smoothing_window))
                })
                .collect::<Result<_>>()?;
            let med = median_curve(&smoothed);
            let reach = first_reach(&med, threshold);
            let final_median = *med.last().expect("at least one trial");
            tuning_rows.push(vec![
                learning_rate,
                if decay == StepDecay::InverseTrial {
                    1.0
                } else {
                    0.0
                },
                reach.map_or(f64::INFINITY, |t| t as f64),
                final_median,
            ]);
            let score = (reach.unwrap_or(usize::MAX), final_median);
            let better = match &best {
                None => true,
                Some((best_reach, best_final, _, _)) => {
                    score.0 < *best_reach || (score.0 == *best_reach && score.1 > *best_final)
                }
            };
            if better {
                best = Some((score.0, score.1, options, smoothed));
            }
        }
    }
    let (_, _, best_options, best_smoothed) = best.expect("non-empty tuning grid");
    let tuning_meta = FileMeta::new(spec.master_seed, &external, "none")
        .with_extra("learner", "policy-gradient")
        .with_extra("memory", "external, 2 states")
        .with_extra("runs", spec.runs)
        .with_extra("trials", cfg.reinforce_trials)
        .with_extra("smoothing_window", cfg.smoothing_window)
        .with_extra("threshold", cell(threshold));
    let path = spec.out_dir.join("tuning_reinforce.csv");
    write_csv(
        &path,
        &tuning_meta,
        &[
            "learning_rate",
            "inverse_trial_decay",
            "trials_to_threshold",
            "final_median",
        ],
        &tuning_rows,
    )?;
    output.push(path);

    let best_arm = {
        let li = cfg
            .learning_rates
            .iter()
            .position(|&lr| lr == best_options.learning_rate)
            .expect("winner came from the grid");
        let di = cfg
            .decays
            .iter()
            .position(|&d| d == best_options.decay)
            .expect("winner came from the grid");
        TUNING_ARM_BASE + (li * cfg.decays.len() + di) as u64
    };
    let reinforce_meta = FileMeta::new(spec.master_seed, &external, "none")
        .with_reinforce(&best_options)
        .with_extra("learner", "policy-gradient")
        .with_extra("memory", "external, 2 states")
        .with_extra("runs", spec.runs)
        .with_extra("smoothing_window", cfg.smoothing_window);
    // The tuning pass kept only smoothed curves; replay the winning runs
    // for the raw per-trial returns (same seeds, so identical episodes).
    for (run, smoothed) in best_smoothed.iter().enumerate() {
        let log = reinforce_learn(
            &external,
            &initial_external,
            &best_options,
            spec.arm_seed(best_arm, run),
        )?;
        let returns = log.returns();
        let rows: Vec<Vec<f64>> = returns
            .iter()
            .zip(smoothed)
            .enumerate()
            .map(|(t, (&ret, &smoothed))| vec![(t + 1) as f64, ret, smoothed])
            .collect();
        let run_meta = reinforce_meta
            .clone()
            .with_extra("run", run)
            .with_extra("run_seed", spec.arm_seed(best_arm, run));
        let path = spec
            .out_dir
            .join(format!("returns_reinforce_run{run:02}.csv"));
        write_csv(&path, &run_meta, &["trial", "return", "smoothed"], &rows)?;
        output.push(path);
    }
    let path = spec.out_dir.join("bands_reinforce.csv");
    write_csv(
        &path,
        &reinforce_meta,
        &BAND_COLUMNS,
        &quantile_rows(&best_smoothed),
    )?;
    output.push(path);
    let reinforce_reach = first_reach(&median_curve(&best_smoothed), threshold);
    summary.push_str(&format!(
        "reinforce_best: learning_rate={} decay={}\n",
        cell(best_options.learning_rate),
        decay_name(best_options.decay)
    ));
    summary.push_str(&format!(
        "reinforce_trials_to_threshold: {}\n",
        cell(reinforce_reach.map_or(f64::INFINITY, |t| t as f64))
    ));
    if let Some(g) = greedy_reach {
        summary.push_str(&format!(
            "reinforce_to_greedy_trial_ratio: {}\n",
            cell(reinforce_reach.map_or(f64::INFINITY, |r| r as f64 / g as f64))
        ));
    }

    // Greedy stripped of its memory model: same learner, external memory.
    if cfg.ablation {
        let ablation_climb = climb_options(EXTERNAL_CLIMB_ITERATIONS);
        let ablation = run_greedy_arm(
            spec,
            &external,
            1,
            kind,
            cfg.ablation_trials,
            ablation_climb.clone(),
            ABLATION_ARM,
        )?;
        let ablation_meta = FileMeta::new(spec.master_seed, &external, kind.to_string())
            .with_climb(&ablation_climb)
            .with_extra("learner", "greedy")
            .with_extra("memory", "external, 2 states")
            .with_extra("runs", spec.runs)
            .with_extra("trials", cfg.ablation_trials);
        write_greedy_files(
            spec,
            &ablation_meta,
            "greedy_external",
            ABLATION_ARM,
            &ablation,
            &mut output,
        )?;
        let ablation_reach = first_reach(&median_curve(&ablation.curves), threshold);
        summary.push_str(&format!(
            "greedy_external_trials_to_threshold: {}\n",
            cell(ablation_reach.map_or(f64::INFINITY, |t| t as f64))
        ));
        if let (Some(g), Some(e)) = (greedy_reach, ablation_reach) {
            summary.push_str(&format!(
                "external_to_explicit_trial_ratio: {}\n",
                cell(e as f64 / g as f64)
            ));
        }
    }

    let summary_meta = FileMeta::new(spec.master_seed, &world, kind.to_string())
        .with_climb(&climb)
        .with_reinforce(&best_options)
        .with_extra("runs", spec.runs)
        .with_extra("smoothing_window", cfg.smoothing_window);
    let path = spec.out_dir.join("loadunload_summary.txt");
    write_text(&path, &summary_meta, &summary)?;
    output.push(path);
    Ok(output)
}
