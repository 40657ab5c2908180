//! Corridor comparison: greedy policy improvement against uniform-random
//! policy choice, for each estimator kind, with estimator surfaces over
//! the two-parameter policy square.
//!
//! Greedy data depends on the estimator steering it, so each kind is its
//! own arm.  Random policy choice does not, so one shared random pool is
//! collected per run and every kind's surface is evaluated on it, which is
//! also how the estimators are meant to be compared: same data, different
//! reading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use pomis_core::oracle::exact_return;
use pomis_core::search::TrialStats;
use pomis_core::{
    episode_return, greedy_learn, sample_episode, ClimbOptions, Dataset, Error, EstimateKind,
    FscActor, FscPolicy, GreedyOptions, LearnLog, Pomdp, Result, TrialRecord,
};

use crate::experiments::{prepare_out_dir, ExperimentOutput, ExperimentSpec};
use crate::report::{cell, write_csv, write_text, FileMeta};
use crate::stats::{chi_square_uniform, median, pearson};
use crate::worlds::{reactive_coords, reactive_point, resolve_world};

#[derive(Debug, Clone)]
pub struct LeftrightConfig {
    pub trials: usize,
    /// Pool sizes at which estimator surfaces are written.
    pub surface_trials: Vec<usize>,
    /// Which run's pool the surfaces are evaluated on.
    pub surface_run: usize,
    /// Points per axis of the policy-square grid.  51 keeps surface files
    /// plottable without smoothing; the choice is recorded in each header.
    pub grid_points: usize,
    /// Bins per axis of the uniformity check on random search paths.
    pub chi_square_bins: usize,
}

impl Default for LeftrightConfig {
    fn default() -> Self {
        LeftrightConfig {
            trials: 50,
            surface_trials: vec![5, 10, 50],
            surface_run: 0,
            grid_points: 51,
            chi_square_bins: 5,
        }
    }
}

impl LeftrightConfig {
    /// Default configuration rescaled to a different trial budget.  Surface
    /// checkpoints keep the defaults that still fit and always include the
    /// final pool.
    pub fn for_trials(trials: usize) -> Self {
        let mut surface_trials: Vec<usize> = Self::default()
            .surface_trials
            .into_iter()
            .filter(|&t| t < trials)
            .collect();
        surface_trials.push(trials);
        LeftrightConfig {
            trials,
            surface_trials,
            ..Self::default()
        }
    }
}

/// Fixed arm identifiers; random choice ignores the estimator kind because
/// its data collection never consults an estimate.
fn greedy_arm(kind: EstimateKind) -> u64 {
    match kind {
        EstimateKind::Naive => 0,
        EstimateKind::Unnormalized => 1,
        EstimateKind::Normalized => 2,
    }
}
const RANDOM_ARM: u64 = 8;

/// One episode per trial, each acted by a fresh uniform draw from the
/// policy square.
fn random_choice_learn(world: &Pomdp, n_trials: usize, seed: u64) -> Result<LearnLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_trials);
    let mut stats = Vec::with_capacity(n_trials);
    for trial in 1..=n_trials {
        let p: f64 = rng.random();
        let q: f64 = rng.random();
        let policy = reactive_point(p, q)?;
        let mut actor = FscActor::new(&policy);
        let history = sample_episode(world, &mut actor, &mut rng, false);
        let ret = episode_return(&history);
        records.push(TrialRecord { policy, history });
        stats.push(TrialStats {
            trial,
            ret,
            estimate: None,
            grad_max_norm: 0.0,
            climb_iterations: 0,
        });
    }
    let final_policy = records.last().expect("at least one trial").policy.clone();
    Ok(LearnLog {
        records,
        stats,
        final_policy,
    })
}

fn path_rows(log: &LearnLog) -> Vec<Vec<f64>> {
    log.records
        .iter()
        .enumerate()
        .map(|(t, record)| {
            let (p, q) = reactive_coords(&record.policy);
            vec![(t + 1) as f64, p, q]
        })
        .collect()
}

fn merged_return_rows(logs: &[LearnLog], trials: usize) -> Vec<Vec<f64>> {
    (0..trials)
        .map(|t| {
            let mut row = vec![(t + 1) as f64];
            let at_t: Vec<f64> = logs.iter().map(|log| log.stats[t].ret).collect();
            row.extend_from_slice(&at_t);
            row.push(median(&at_t));
            row
        })
        .collect()
}

fn merged_return_columns(runs: usize) -> Vec<String> {
    let mut columns = vec!["trial".to_string()];
    columns.extend((0..runs).map(|r| format!("run{r:02}")));
    columns.push("median".to_string());
    columns
}

fn grid_coords(grid_points: usize, index: usize) -> f64 {
    index as f64 / (grid_points - 1) as f64
}

fn surface_rows(pool: &Dataset, kind: EstimateKind, grid_points: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(grid_points * grid_points);
    for i in 0..grid_points {
        let p = grid_coords(grid_points, i);
        for j in 0..grid_points {
            let q = grid_coords(grid_points, j);
            let target = reactive_point(p, q)?;
            let value = pool.estimate(kind, &target).unwrap_or(f64::NAN);
            rows.push(vec![p, q, value]);
        }
    }
    Ok(rows)
}

/// Exact return over the whole reactive policy square, row per grid point.
pub fn exact_rows(world: &Pomdp, grid_points: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(grid_points * grid_points);
    for i in 0..grid_points {
        let p = grid_coords(grid_points, i);
        for j in 0..grid_points {
            let q = grid_coords(grid_points, j);
            let value = exact_return(world, &reactive_point(p, q)?)?;
            rows.push(vec![p, q, value]);
        }
    }
    Ok(rows)
}

const PATH_COLUMNS: [&str; 3] = ["trial", "p_left_in_left_half", "p_left_in_right_half"];
const SURFACE_COLUMNS: [&str; 3] = ["p_left_in_left_half", "p_left_in_right_half", "estimate"];

pub fn run(spec: &ExperimentSpec, cfg: &LeftrightConfig) -> Result<ExperimentOutput> {
    prepare_out_dir(spec)?;
    if cfg.trials == 0 {
        return Err(Error::Invalid("need at least one trial".into()));
    }
    if cfg.grid_points < 2 {
        return Err(Error::Invalid(
            "surface grid needs at least 2 points".into(),
        ));
    }
    if cfg.surface_run >= spec.runs {
        return Err(Error::Invalid(format!(
            "surface run {} is out of range for {} runs",
            cfg.surface_run, spec.runs
        )));
    }
    if let Some(&t) = cfg
        .surface_trials
        .iter()
        .find(|&&t| t == 0 || t > cfg.trials)
    {
        return Err(Error::Invalid(format!(
            "surface checkpoint {t} is outside 1..={}",
            cfg.trials
        )));
    }
    let world = resolve_world(&spec.world)?;
    if world.n_obs != 2 || world.n_actions != 2 {
        return Err(Error::DimensionMismatch(format!(
            "the policy square needs a 2-observation 2-action world, got {}x{}",
            world.n_obs, world.n_actions
        )));
    }
    let kinds = spec.estimators_or(&[EstimateKind::Normalized, EstimateKind::Unnormalized]);
    let climb = ClimbOptions::default();
    let initial = FscPolicy::uniform(2, 2, 1);
    let grid_label = format!("{}x{}", cfg.grid_points, cfg.grid_points);
    let mut output = ExperimentOutput::default();
    let mut summary = String::new();

    // Oracle surface, for plotting next to the estimated ones.
    let exact = exact_rows(&world, cfg.grid_points)?;
    let exact_values: Vec<f64> = exact.iter().map(|row| row[2]).collect();
    {
        let meta = FileMeta::new(spec.master_seed, &world, "exact").with_extra("grid", &grid_label);
        let path = spec.out_dir.join("exact_grid.csv");
        write_csv(
            &path,
            &meta,
            &["p_left_in_left_half", "p_left_in_right_half", "return"],
            &exact,
        )?;
        output.push(path);
    }
    let best = exact
        .iter()
        .max_by(|a, b| a[2].partial_cmp(&b[2]).expect("finite returns"))
        .expect("grid is never empty");
    summary.push_str(&format!(
        "grid_optimum: {} at ({},{})\n",
        cell(best[2]),
        cell(best[0]),
        cell(best[1])
    ));

    let merged_columns = merged_return_columns(spec.runs);
    let merged_refs: Vec<&str> = merged_columns.iter().map(String::as_str).collect();

    // Greedy arms, one per estimator kind.
    for &kind in &kinds {
        let options = GreedyOptions {
            n_trials: cfg.trials,
            kind,
            climb: climb.clone(),
        };
        let arm = format!("greedy_{kind}");
        let meta = FileMeta::new(spec.master_seed, &world, kind.to_string())
            .with_climb(&climb)
            .with_extra("policy_choice", "greedy")
            .with_extra("runs", spec.runs)
            .with_extra("trials", cfg.trials);
        let logs: Vec<LearnLog> = (0..spec.runs)
            .into_par_iter()
            .map(|run| -> Result<LearnLog> {
                let seed = spec.arm_seed(greedy_arm(kind), run);
                let log = greedy_learn(&world, &initial, &options, seed)?;
                let run_meta = meta
                    .clone()
                    .with_extra("run", run)
                    .with_extra("run_seed", seed);
                let rows: Vec<Vec<f64>> = log
                    .stats
                    .iter()
                    .map(|s| {
                        vec![
                            s.trial as f64,
                            s.ret,
                            s.estimate.unwrap_or(f64::NAN),
                            s.climb_iterations as f64,
                        ]
                    })
                    .collect();
                write_csv(
                    &spec.out_dir.join(format!("returns_{arm}_run{run:02}.csv")),
                    &run_meta,
                    &["trial", "return", "estimate", "climb_iterations"],
                    &rows,
                )?;
                write_csv(
                    &spec.out_dir.join(format!("path_{arm}_run{run:02}.csv")),
                    &run_meta,
                    &PATH_COLUMNS,
                    &path_rows(&log),
                )?;
                Ok(log)
            })
            .collect::<Result<_>>()?;
        for run in 0..spec.runs {
            output.push(spec.out_dir.join(format!("returns_{arm}_run{run:02}.csv")));
            output.push(spec.out_dir.join(format!("path_{arm}_run{run:02}.csv")));
        }

        let path = spec.out_dir.join(format!("returns_{arm}.csv"));
        write_csv(
            &path,
            &meta,
            &merged_refs,
            &merged_return_rows(&logs, cfg.trials),
        )?;
        output.push(path);

        // Surfaces from one run's growing pool.
        let records = &logs[cfg.surface_run].records;
        for &t in &cfg.surface_trials {
            let pool = Dataset::from_records(records[..t].to_vec());
            let rows = surface_rows(&pool, kind, cfg.grid_points)?;
            let r = pearson(
                &rows.iter().map(|row| row[2]).collect::<Vec<f64>>(),
                &exact_values,
            );
            summary.push_str(&format!("surface_pearson_{arm}_trial{t}: {}\n", cell(r)));
            let surface_meta = meta
                .clone()
                .with_extra("grid", &grid_label)
                .with_extra("surface_run", cfg.surface_run)
                .with_extra("pool_trials", t);
            let path = spec.out_dir.join(format!("surface_{arm}_trial{t:02}.csv"));
            write_csv(&path, &surface_meta, &SURFACE_COLUMNS, &rows)?;
            output.push(path);
        }

        let finals: Vec<f64> = logs
            .iter()
            .map(|log| exact_return(&world, &log.final_policy).unwrap_or(f64::NAN))
            .collect();
        summary.push_str(&format!(
            "final_exact_return_{arm}_median: {}\n",
            cell(median(&finals))
        ));
    }

    // Shared random-choice arm.
    let random_meta = FileMeta::new(spec.master_seed, &world, "none")
        .with_extra("policy_choice", "uniform-random")
        .with_extra("runs", spec.runs)
        .with_extra("trials", cfg.trials);
    let random_logs: Vec<LearnLog> = (0..spec.runs)
        .into_par_iter()
        .map(|run| -> Result<LearnLog> {
            let seed = spec.arm_seed(RANDOM_ARM, run);
            let log = random_choice_learn(&world, cfg.trials, seed)?;
            let run_meta = random_meta
                .clone()
                .with_extra("run", run)
                .with_extra("run_seed", seed);
            let rows: Vec<Vec<f64>> = log
                .stats
                .iter()
                .map(|s| vec![s.trial as f64, s.ret])
                .collect();
            write_csv(
                &spec.out_dir.join(format!("returns_random_run{run:02}.csv")),
                &run_meta,
                &["trial", "return"],
                &rows,
            )?;
            write_csv(
                &spec.out_dir.join(format!("path_random_run{run:02}.csv")),
                &run_meta,
                &PATH_COLUMNS,
                &path_rows(&log),
            )?;
            Ok(log)
        })
        .collect::<Result<_>>()?;
    for run in 0..spec.runs {
        output.push(spec.out_dir.join(format!("returns_random_run{run:02}.csv")));
        output.push(spec.out_dir.join(format!("path_random_run{run:02}.csv")));
    }
    let path = spec.out_dir.join("returns_random.csv");
    write_csv(
        &path,
        &random_meta,
        &merged_refs,
        &merged_return_rows(&random_logs, cfg.trials),
    )?;
    output.push(path);

    let points: Vec<(f64, f64)> = random_logs
        .iter()
        .flat_map(|log| log.records.iter().map(|r| reactive_coords(&r.policy)))
        .collect();
    let (chi, df) = chi_square_uniform(&points, cfg.chi_square_bins);
    summary.push_str(&format!(
        "random_path_chi_square: {} (df {df}, {} points)\n",
        cell(chi),
        points.len()
    ));

    let random_records = &random_logs[cfg.surface_run].records;
    for &kind in &kinds {
        for &t in &cfg.surface_trials {
            let pool = Dataset::from_records(random_records[..t].to_vec());
            let rows = surface_rows(&pool, kind, cfg.grid_points)?;
            let r = pearson(
                &rows.iter().map(|row| row[2]).collect::<Vec<f64>>(),
                &exact_values,
            );
            summary.push_str(&format!(
                "surface_pearson_random_{kind}_trial{t}: {}\n",
                cell(r)
            ));
            let surface_meta = random_meta
                .clone()
                .with_extra("surface_estimator", kind.to_string())
                .with_extra("grid", &grid_label)
                .with_extra("surface_run", cfg.surface_run)
                .with_extra("pool_trials", t);
            let path = spec
                .out_dir
                .join(format!("surface_random_{kind}_trial{t:02}.csv"));
            write_csv(&path, &surface_meta, &SURFACE_COLUMNS, &rows)?;
            output.push(path);
        }
    }

    let kind_list = kinds
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let summary_meta = FileMeta::new(spec.master_seed, &world, kind_list)
        .with_climb(&climb)
        .with_extra("runs", spec.runs)
        .with_extra("trials", cfg.trials)
        .with_extra("grid", &grid_label);
    let path = spec.out_dir.join("leftright_summary.txt");
    write_text(&path, &summary_meta, &summary)?;
    output.push(path);
    Ok(output)
}
