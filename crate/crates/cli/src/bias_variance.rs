//! Bias/variance replication: grow a trial pool under one fixed sampler
//! and track the spread of the two difference statistics across many
//! replications, with exact moment curves alongside whenever the world is
//! small enough to enumerate.

use pomis_core::oracle::{empirical_sweep, enumerate_atoms, exact_return, moments};
use pomis_core::{Error, EstimateKind, Result};

use crate::experiments::{prepare_out_dir, ExperimentOutput, ExperimentSpec};
use crate::report::{cell, write_csv, FileMeta};
use crate::worlds::{reactive_point, resolve_world};

#[derive(Debug, Clone)]
pub struct BiasVarianceConfig {
    /// Largest pool size; statistics are recorded every `step_n` trials.
    pub max_n: usize,
    pub step_n: usize,
    /// Policy-square coordinates of the sampler and the two targets the
    /// difference statistics compare.
    pub sampler: (f64, f64),
    pub target_a: (f64, f64),
    pub target_b: (f64, f64),
    /// History-tree budget for the optional exact moment report.
    pub enumeration_cap: u128,
}

impl Default for BiasVarianceConfig {
    fn default() -> Self {
        BiasVarianceConfig {
            max_n: 100,
            step_n: 5,
            sampler: (0.4, 0.6),
            target_a: (0.3, 0.9),
            target_b: (0.4, 0.5),
            enumeration_cap: 200_000,
        }
    }
}

impl BiasVarianceConfig {
    pub fn checkpoints(&self) -> Vec<usize> {
        (1..=self.max_n / self.step_n)
            .map(|k| k * self.step_n)
            .collect()
    }
}

fn point(coords: (f64, f64)) -> String {
    format!("({},{})", cell(coords.0), cell(coords.1))
}

/// Writes `difference_unnormalized.csv` and `difference_normalized.csv`
/// (n, replication mean, replication standard deviation, identical n
/// columns), plus `moments_exact.csv` when the world enumerates within
/// the configured budget.  `spec.runs` is the replication count and all
/// replication streams derive from the master seed, so the spec must not
/// carry an explicit seed list.
pub fn run(spec: &ExperimentSpec, cfg: &BiasVarianceConfig) -> Result<ExperimentOutput> {
    prepare_out_dir(spec)?;
    if spec.seeds.is_some() {
        return Err(Error::Invalid(
            "bias-variance derives replication seeds from the master seed; drop the seed list"
                .into(),
        ));
    }
    if cfg.step_n == 0 || cfg.max_n < cfg.step_n {
        return Err(Error::Invalid(
            "need max_n >= step_n >= 1 for the checkpoint grid".into(),
        ));
    }
    let world = resolve_world(&spec.world)?;
    let sampler = reactive_point(cfg.sampler.0, cfg.sampler.1)?;
    let target_a = reactive_point(cfg.target_a.0, cfg.target_a.1)?;
    let target_b = reactive_point(cfg.target_b.0, cfg.target_b.1)?;
    let exact_diff = exact_return(&world, &target_a)? - exact_return(&world, &target_b)?;
    let ns = cfg.checkpoints();

    // Each kind reads the same pool; the plotted statistic is the plain
    // difference of the kind's two return estimates.  (The cross statistic
    // in `Dataset::difference` is the analysis tool, not the practitioner's
    // curve: its denominator products inflate the spread.)
    let kinds = [EstimateKind::Unnormalized, EstimateKind::Normalized];
    let sweep = empirical_sweep(
        &world,
        std::slice::from_ref(&sampler),
        &ns,
        spec.runs,
        spec.master_seed,
        kinds.len(),
        |pool| {
            kinds
                .iter()
                .map(|&kind| {
                    let a = pool.estimate(kind, &target_a).unwrap_or(f64::NAN);
                    let b = pool.estimate(kind, &target_b).unwrap_or(f64::NAN);
                    a - b
                })
                .collect()
        },
    )?;

    let mut output = ExperimentOutput::default();
    for (stat, &kind) in kinds.iter().enumerate() {
        let rows: Vec<Vec<f64>> = ns
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                vec![
                    n as f64,
                    sweep.mean(k, stat),
                    sweep.std(k, stat).unwrap_or(f64::NAN),
                ]
            })
            .collect();
        let meta = FileMeta::new(spec.master_seed, &world, kind.to_string())
            .with_extra("replications", spec.runs)
            .with_extra("sampler", point(cfg.sampler))
            .with_extra("target_a", point(cfg.target_a))
            .with_extra("target_b", point(cfg.target_b))
            .with_extra("exact_difference", cell(exact_diff));
        let path = spec.out_dir.join(format!("difference_{kind}.csv"));
        write_csv(&path, &meta, &["n", "mean", "std"], &rows)?;
        output.push(path);
    }

    // Exact counterpart of the empirical curves, available only when the
    // history space fits the enumeration budget (the default corridor
    // world, at horizon 100, does not).
    match enumerate_atoms(&world, cfg.enumeration_cap) {
        Ok(atoms) => {
            let rows: Vec<Vec<f64>> = ns
                .iter()
                .map(|&n| {
                    moments(
                        &atoms,
                        std::slice::from_ref(&sampler),
                        n,
                        &target_a,
                        &target_b,
                    )
                    .map(|m| {
                        vec![
                            n as f64,
                            m.expected_unnorm_diff,
                            m.expected_norm_diff,
                            m.var_unnorm_diff,
                            m.var_norm_diff,
                        ]
                    })
                })
                .collect::<Result<_>>()?;
            let meta = FileMeta::new(spec.master_seed, &world, "exact")
                .with_extra("sampler", point(cfg.sampler))
                .with_extra("target_a", point(cfg.target_a))
                .with_extra("target_b", point(cfg.target_b))
                .with_extra("exact_difference", cell(exact_diff));
            let path = spec.out_dir.join("moments_exact.csv");
            write_csv(
                &path,
                &meta,
                &[
                    "n",
                    "expected_unnormalized",
                    "expected_normalized",
                    "var_unnormalized",
                    "var_normalized",
                ],
                &rows,
            )?;
            output.push(path);
        }
        Err(Error::TooLarge { .. }) => {}
        Err(e) => return Err(e),
    }
    Ok(output)
}
