//! Experiment orchestration: run a parsed config end to end and emit the
//! artifact set (constants.json, bounds.csv, stability.csv, gapsweep.csv,
//! plotdata/*.csv, manifest.json), all derived deterministically from the
//! master seed. `report` merges artifact directories into comparison
//! tables.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::adversary::AdversaryConfig;
use crate::bounds::{self, BoundInputs, BoundReport};
use crate::config::{ExperimentConfig, StabilityRun};
use crate::constants::{self, ConstantsReport, EstimationPlan, OptBudget};
use crate::data::FinitePopulation;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::poison;
use crate::stability::{self, StabilityMode};
use crate::synth;
use crate::trainer::{self, TrainConfig};
use crate::vecmath;

/// Written alongside every run; `status` is "ok" or "error" and partial
/// artifact lists stay meaningful either way.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub status: String,
    pub config_hash: String,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

/// Result of a completed run.
#[derive(Debug)]
pub struct ArtifactSet {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// Atomic file write: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|s| s.to_string_lossy())
            .unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Per-budget sweep outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SweepPoint {
    eps: f64,
    trials: usize,
    gap_mean: f64,
    gap_stderr: f64,
    risk_at_output: f64,
    max_loss: f64,
}

struct SweepOutcome {
    point: SweepPoint,
    constants: ConstantsReport,
    bounds: BoundReport,
}

/// Which slice of the pipeline to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunScope {
    /// Everything the config asks for.
    Full,
    /// Dataset synthesis only.
    GenData,
    /// One reference training run with its record and snapshot files.
    Train,
    /// Stability measurement only.
    Stability,
    /// Constants, gap trials, and bound evaluation on the clean population.
    Bounds,
    /// Poisoned dataset generation only.
    Poison,
}

/// Run one experiment from an already-parsed config into `dir`.
pub fn run_experiment_config(cfg: &ExperimentConfig, dir: &Path) -> Result<ArtifactSet> {
    run_scoped(cfg, dir, RunScope::Full)
}

/// Run the selected pipeline slice into `dir`, always writing a manifest.
pub fn run_scoped(cfg: &ExperimentConfig, dir: &Path, scope: RunScope) -> Result<ArtifactSet> {
    let mut artifacts: Vec<String> = Vec::new();
    let run = run_inner(cfg, dir, scope, &mut artifacts);
    let manifest = Manifest {
        schema_version: 1,
        status: if run.is_ok() {
            "ok".into()
        } else {
            "error".into()
        },
        config_hash: format!("{:016x}", cfg.config_hash()),
        artifacts: artifacts.clone(),
        error: run.as_ref().err().map(|e| e.to_string()),
    };
    write_atomic(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    run.map(|()| ArtifactSet {
        dir: dir.to_path_buf(),
        manifest,
    })
}

/// Parse a config file and run it; `out` and `seed` override the config.
pub fn run_experiment(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<ArtifactSet> {
    run_experiment_scoped(config_path, out, seed, RunScope::Full)
}

/// `run_experiment` restricted to one pipeline slice.
pub fn run_experiment_scoped(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    scope: RunScope,
) -> Result<ArtifactSet> {
    let text = fs::read_to_string(config_path)?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    let dir = out
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    run_scoped(&cfg, &dir, scope)
}

fn run_inner(
    cfg: &ExperimentConfig,
    dir: &Path,
    scope: RunScope,
    artifacts: &mut Vec<String>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fn record(name: &str, artifacts: &mut Vec<String>) {
        artifacts.push(name.to_string());
    }

    // Echo the exact config for reproduction.
    write_atomic(&dir.join("config.txt"), cfg.to_flat_text().as_bytes())?;
    record("config.txt", artifacts);

    let population = synth::make_dataset(&cfg.dataset)?;
    let (model, theta1) = cfg.model.build()?;
    write_atomic(
        &dir.join("dataset.json"),
        serde_json::to_string(&DatasetArtifact {
            schema_version: 1,
            provenance: format!("synth:{:016x}", cfg.config_hash()),
            population: &population,
        })?
        .as_bytes(),
    )?;
    record("dataset.json", artifacts);
    if scope == RunScope::GenData {
        return Ok(());
    }

    if scope == RunScope::Train {
        let adv = adv_at(cfg, cfg.adversary.eps);
        let traj = reference_trajectory(cfg, &model, &theta1, &population, &adv)?;
        let mut rec = Vec::new();
        traj.write_record(&mut rec)?;
        write_atomic(&dir.join("trajectory_record.csv"), &rec)?;
        record("trajectory_record.csv", artifacts);
        let mut snap = Vec::new();
        let stride = (traj.num_steps() / 20).max(1);
        traj.write_snapshots(&mut snap, stride)?;
        write_atomic(&dir.join("trajectory_snapshots.bin"), &snap)?;
        record("trajectory_snapshots.bin", artifacts);
        return Ok(());
    }

    if scope == RunScope::Poison {
        let Some(section) = &cfg.poison else {
            return Err(Error::InvalidConfig(
                "poison scope requires a poison section in the config".into(),
            ));
        };
        let craft = cfg
            .craft_model(population.dim(), population.num_classes())?
            .expect("poison section implies a craft model");
        let poisoned = poison_with_cache(&population, &section.config, &craft, cfg)?;
        write_atomic(
            &dir.join("poisoned_dataset.json"),
            serde_json::to_string(&DatasetArtifact {
                schema_version: 1,
                provenance: format!(
                    "poison:{:?}:budget={}:seed={}",
                    section.config.attack, section.config.budget, section.config.seed
                ),
                population: &poisoned,
            })?
            .as_bytes(),
        )?;
        record("poisoned_dataset.json", artifacts);
        return Ok(());
    }

    let sweep_eps: Vec<f64> = if cfg.eps_sweep.is_empty() {
        vec![cfg.adversary.eps]
    } else {
        cfg.eps_sweep.clone()
    };

    if scope == RunScope::Full || scope == RunScope::Bounds {
        // Clean sweep.
        let mut outcomes = Vec::new();
        for &eps in &sweep_eps {
            outcomes.push(sweep_point(
                cfg,
                &model,
                &theta1,
                &population,
                eps,
                "clean",
            )?);
        }
        emit_sweep_artifacts(cfg, dir, artifacts, &outcomes, "")?;

        // Gap-vs-epoch plot data from a reference run at the primary budget.
        let gap_vs_epoch =
            reference_gap_curve(cfg, &model, &theta1, &population, cfg.adversary.eps)?;
        let mut text = String::from("schema_version,step,gap\n");
        for (step, gap) in &gap_vs_epoch {
            text.push_str(&format!("1,{step},{gap}\n"));
        }
        write_atomic(&dir.join("plotdata/gap_vs_epoch.csv"), text.as_bytes())?;
        record("plotdata/gap_vs_epoch.csv", artifacts);

        if scope == RunScope::Full {
            if let Some(section) = &cfg.poison {
                let craft = cfg
                    .craft_model(population.dim(), population.num_classes())?
                    .expect("poison section implies a craft model");
                let poisoned = poison_with_cache(&population, &section.config, &craft, cfg)?;
                write_atomic(
                    &dir.join("poisoned_dataset.json"),
                    serde_json::to_string(&DatasetArtifact {
                        schema_version: 1,
                        provenance: format!(
                            "poison:{:?}:budget={}:seed={}:craft={:016x}",
                            section.config.attack,
                            section.config.budget,
                            section.config.seed,
                            crate::rng::content_hash(
                                serde_json::to_string(&section.craft_widths)?.as_bytes()
                            )
                        ),
                        population: &poisoned,
                    })?
                    .as_bytes(),
                )?;
                record("poisoned_dataset.json", artifacts);

                let mut poutcomes = Vec::new();
                for &eps in &sweep_eps {
                    poutcomes.push(sweep_point(
                        cfg, &model, &theta1, &poisoned, eps, "poisoned",
                    )?);
                }
                emit_sweep_artifacts(cfg, dir, artifacts, &poutcomes, "poisoned_")?;

                let mut text = String::from(
                    "schema_version,population,eps,trials,gap_mean,gap_stderr,risk_at_output,max_loss\n",
                );
                for (pop_name, set) in [("clean", &outcomes), ("poisoned", &poutcomes)] {
                    for o in set.iter() {
                        let p = &o.point;
                        text.push_str(&format!(
                            "1,{pop_name},{},{},{},{},{},{}\n",
                            p.eps, p.trials, p.gap_mean, p.gap_stderr, p.risk_at_output, p.max_loss
                        ));
                    }
                }
                write_atomic(&dir.join("gapsweep.csv"), text.as_bytes())?;
            }
        }
    }

    // Stability at the primary budget.
    if (scope == RunScope::Full || scope == RunScope::Stability)
        && cfg.stability != StabilityRun::Off
    {
        let mode = match cfg.stability {
            StabilityRun::Exact => StabilityMode::Exact {
                cap: cfg.stability_cap,
            },
            StabilityRun::MonteCarlo => StabilityMode::MonteCarlo {
                trials: cfg.stability_trials,
                seed: derive(cfg.seed, "stability"),
            },
            StabilityRun::Off => unreachable!(),
        };
        let steps = cfg.train_steps.min(cfg.stability_n * cfg.train_passes);
        let train = train_config(cfg, &theta1, steps);
        let report = stability::thm1_check(
            &model,
            &population,
            cfg.stability_n,
            &train,
            &cfg.adversary,
            mode,
        )?;
        let mut text = String::from("schema_version,config_hash,i,eps_hat,stderr,mode\n");
        let mode_name = match mode {
            StabilityMode::Exact { .. } => "exact",
            StabilityMode::MonteCarlo { .. } => "monte-carlo",
        };
        for (i, (e, se)) in report
            .stability
            .per_index
            .iter()
            .zip(&report.stability.stderr)
            .enumerate()
        {
            text.push_str(&format!(
                "1,{:016x},{i},{e},{se},{mode_name}\n",
                cfg.config_hash()
            ));
        }
        write_atomic(&dir.join("stability.csv"), text.as_bytes())?;
        record("stability.csv", artifacts);
        write_atomic(
            &dir.join("stability_summary.json"),
            serde_json::to_string_pretty(&report)?.as_bytes(),
        )?;
        record("stability_summary.json", artifacts);
    }

    Ok(())
}

#[derive(Serialize)]
struct DatasetArtifact<'a> {
    schema_version: u32,
    provenance: String,
    population: &'a FinitePopulation,
}

fn derive(seed: u64, name: &str) -> u64 {
    use rand::Rng;
    crate::rng::substream(seed, name).random()
}

fn train_config(cfg: &ExperimentConfig, theta1: &[f64], steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        passes: cfg.train_passes,
        schedule: cfg.schedule,
        init: theta1.to_vec(),
        perm_seed: derive(cfg.seed, "perm"),
        reshuffle_each_pass: false,
    }
}

fn adv_at(cfg: &ExperimentConfig, eps: f64) -> AdversaryConfig {
    let mut adv = cfg.adversary;
    adv.eps = eps;
    if let crate::adversary::AttackMethod::Pgd { steps, step_size } = adv.method {
        // Keep the step proportional to the budget unless explicitly pinned.
        let default_step = cfg.adversary.eps / 4.0;
        if (step_size - default_step).abs() <= f64::EPSILON * default_step.abs() || step_size == 0.0
        {
            adv.method = crate::adversary::AttackMethod::Pgd {
                steps,
                step_size: eps / 4.0,
            };
        }
    }
    adv
}

fn sweep_point(
    cfg: &ExperimentConfig,
    model: &Model,
    theta1: &[f64],
    population: &FinitePopulation,
    eps: f64,
    tag: &str,
) -> Result<SweepOutcome> {
    let adv = adv_at(cfg, eps);

    // Reference trajectory: its parameter snapshots are the sigma probes.
    let reference = reference_trajectory(cfg, model, theta1, population, &adv)?;
    let theta_probes: Vec<Vec<f64>> = if reference.params.len() <= 1001 {
        reference.params.clone()
    } else {
        let stride = reference.params.len().div_ceil(1000);
        reference.params.iter().step_by(stride).cloned().collect()
    };

    let ball_radius = if cfg.const_ball_radius > 0.0 {
        cfg.const_ball_radius
    } else {
        vecmath::norm2(theta1) + 5.0
    };
    let plan = EstimationPlan {
        ball_radius,
        probes: cfg.const_probes,
        seed: derive(cfg.seed, "lipschitz"),
        power_iters: cfg.const_power_iters,
        opt: OptBudget {
            restarts: cfg.const_opt_restarts,
            steps: cfg.const_opt_steps,
            init_step: cfg.const_opt_step,
            seed: derive(cfg.seed, "opt"),
        },
        c_for_gamma: cfg.bounds_c,
        steps_for_gamma: cfg.train_steps.max(1),
    };
    let mut consts =
        constants::estimate_constants(model, population, &adv, theta1, &theta_probes, &plan)?;
    if tag == "poisoned" {
        if let Some(p) = &cfg.poison {
            consts.poison_tag = Some(format!("{:016x}", p.config.config_hash()));
        }
    }

    // Measured gap over the trial set, plus the risk and loss ceilings the
    // bound formulas need.
    let trials = trial_details(cfg, model, theta1, population, &adv)?;
    let gaps: Vec<f64> = trials.iter().map(|t| t.gap).collect();
    let (gap_mean, gap_stderr) = mean_stderr(&gaps);
    let risk_at_output = trials.iter().map(|t| t.pop_risk).sum::<f64>() / trials.len() as f64;
    let max_loss = trials.iter().fold(0.0_f64, |m, t| m.max(t.max_loss));

    let loss_bound = if cfg.bounds_b > 0.0 {
        cfg.bounds_b
    } else {
        max_loss
    };
    // The convex bound formulas require a nonnegative initial-risk gap;
    // estimation noise on non-convex models is clamped and flagged.
    if consts.r < 0.0 {
        consts.warnings.push(format!(
            "r = {} clamped to 0 for bound evaluation",
            consts.r
        ));
        consts.r = 0.0;
    }
    let bounds = BoundReport::evaluate(BoundInputs {
        constants: consts.clone(),
        n: cfg.train_n,
        steps: cfg.train_steps,
        schedule: cfg.schedule,
        c: cfg.bounds_c,
        risk_at_output,
        loss_bound,
        max_observed_loss: max_loss,
    })?;

    Ok(SweepOutcome {
        point: SweepPoint {
            eps,
            trials: trials.len(),
            gap_mean,
            gap_stderr,
            risk_at_output,
            max_loss,
        },
        constants: consts,
        bounds,
    })
}

struct TrialDetail {
    gap: f64,
    pop_risk: f64,
    max_loss: f64,
}

fn trial_details(
    cfg: &ExperimentConfig,
    model: &Model,
    theta1: &[f64],
    population: &FinitePopulation,
    adv: &AdversaryConfig,
) -> Result<Vec<TrialDetail>> {
    use rand::Rng;
    use rayon::prelude::*;
    let seed = derive(cfg.seed, "gap");
    (0..cfg.gap_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = crate::rng::substream_indexed(seed, "gen-gap-trial", t as u64);
            let sample: Vec<crate::data::LabeledExample> = (0..cfg.train_n)
                .map(|_| population.point(population.sample_index(&mut rng)).clone())
                .collect();
            let mut train = train_config(cfg, theta1, cfg.train_steps);
            train.perm_seed = rng.random();
            let traj = trainer::sgd_adv_train(model, &sample, &train, adv)?;
            let theta = traj.output();
            let losses = constants::population_adv_losses(model, theta, population, adv)?;
            let pop_risk: f64 = losses
                .iter()
                .zip(population.weights())
                .map(|(l, w)| l * w)
                .sum();
            let max_loss = losses.iter().cloned().fold(0.0_f64, f64::max);
            let emp_risk = constants::empirical_risk(model, theta, &sample, adv)?;
            Ok(TrialDetail {
                gap: pop_risk - emp_risk,
                pop_risk,
                max_loss,
            })
        })
        .collect()
}

fn reference_trajectory(
    cfg: &ExperimentConfig,
    model: &Model,
    theta1: &[f64],
    population: &FinitePopulation,
    adv: &AdversaryConfig,
) -> Result<trainer::Trajectory> {
    use rand::Rng;
    let mut rng = crate::rng::substream(cfg.seed, "reference-sample");
    let sample: Vec<crate::data::LabeledExample> = (0..cfg.train_n)
        .map(|_| population.point(population.sample_index(&mut rng)).clone())
        .collect();
    let mut train = train_config(cfg, theta1, cfg.train_steps);
    train.perm_seed = rng.random();
    trainer::sgd_adv_train(model, &sample, &train, adv)
}

fn reference_gap_curve(
    cfg: &ExperimentConfig,
    model: &Model,
    theta1: &[f64],
    population: &FinitePopulation,
    eps: f64,
) -> Result<Vec<(usize, f64)>> {
    use rand::Rng;
    let adv = adv_at(cfg, eps);
    let mut rng = crate::rng::substream(cfg.seed, "reference-sample");
    let sample: Vec<crate::data::LabeledExample> = (0..cfg.train_n)
        .map(|_| population.point(population.sample_index(&mut rng)).clone())
        .collect();
    let mut train = train_config(cfg, theta1, cfg.train_steps);
    train.perm_seed = rng.random();
    let traj = trainer::sgd_adv_train(model, &sample, &train, &adv)?;
    let stride = (traj.params.len() / 40).max(1);
    let mut curve = Vec::new();
    for (t, theta) in traj.params.iter().enumerate() {
        if t % stride == 0 || t + 1 == traj.params.len() {
            let pop_risk = constants::population_risk(model, theta, population, &adv)?;
            let emp_risk = constants::empirical_risk(model, theta, &sample, &adv)?;
            curve.push((t, pop_risk - emp_risk));
        }
    }
    Ok(curve)
}

fn emit_sweep_artifacts(
    _cfg: &ExperimentConfig,
    dir: &Path,
    artifacts: &mut Vec<String>,
    outcomes: &[SweepOutcome],
    prefix: &str,
) -> Result<()> {
    // constants.json: one report per sweep budget.
    #[derive(Serialize)]
    struct ConstantsArtifact<'a> {
        schema_version: u32,
        sweep: Vec<&'a ConstantsReport>,
    }
    write_atomic(
        &dir.join(format!("{prefix}constants.json")),
        serde_json::to_string_pretty(&ConstantsArtifact {
            schema_version: 1,
            sweep: outcomes.iter().map(|o| &o.constants).collect(),
        })?
        .as_bytes(),
    )?;
    artifacts.push(format!("{prefix}constants.json"));

    let reports: Vec<BoundReport> = outcomes.iter().map(|o| o.bounds.clone()).collect();
    let mut buf = Vec::new();
    bounds::write_sweep_csv(&reports, &mut buf)?;
    write_atomic(&dir.join(format!("{prefix}bounds.csv")), &buf)?;
    artifacts.push(format!("{prefix}bounds.csv"));

    let mut text = String::from(
        "schema_version,population,eps,trials,gap_mean,gap_stderr,risk_at_output,max_loss\n",
    );
    let pop_name = if prefix.is_empty() {
        "clean"
    } else {
        "poisoned"
    };
    for o in outcomes {
        let p = &o.point;
        text.push_str(&format!(
            "1,{pop_name},{},{},{},{},{},{}\n",
            p.eps, p.trials, p.gap_mean, p.gap_stderr, p.risk_at_output, p.max_loss
        ));
    }
    write_atomic(&dir.join(format!("{prefix}gapsweep.csv")), text.as_bytes())?;
    artifacts.push(format!("{prefix}gapsweep.csv"));

    // Plot data: gap vs eps, and measured gap vs bounds.
    let mut gap_eps = String::from("schema_version,eps,gap_mean,gap_stderr\n");
    let mut bvm = String::from(
        "schema_version,eps,gap_mean,gap_plus_3stderr,convex_general,convex_constant,non_convex,multi_pass,xing_convex,xiao_convex,xiao_non_convex\n",
    );
    for o in outcomes {
        let p = &o.point;
        gap_eps.push_str(&format!("1,{},{},{}\n", p.eps, p.gap_mean, p.gap_stderr));
        bvm.push_str(&format!(
            "1,{},{},{},{},{},{},{},{},{},{}\n",
            p.eps,
            p.gap_mean,
            p.gap_mean + 3.0 * p.gap_stderr,
            o.bounds.convex_general,
            o.bounds.convex_constant,
            o.bounds.non_convex,
            o.bounds.multi_pass,
            o.bounds.xing_convex,
            o.bounds.xiao_convex,
            o.bounds.xiao_non_convex
        ));
    }
    write_atomic(
        &dir.join(format!("plotdata/{prefix}gap_vs_eps.csv")),
        gap_eps.as_bytes(),
    )?;
    artifacts.push(format!("plotdata/{prefix}gap_vs_eps.csv"));
    write_atomic(
        &dir.join(format!("plotdata/{prefix}bound_vs_measured.csv")),
        bvm.as_bytes(),
    )?;
    artifacts.push(format!("plotdata/{prefix}bound_vs_measured.csv"));
    Ok(())
}

/// Poison with an optional on-disk cache keyed by the crafting inputs; the
/// STABLAB_CACHE environment variable names the cache directory.
fn poison_with_cache(
    population: &FinitePopulation,
    cfg: &poison::PoisonConfig,
    craft: &Model,
    experiment: &ExperimentConfig,
) -> Result<FinitePopulation> {
    let cache_dir = std::env::var_os("STABLAB_CACHE");
    let key = format!(
        "poison-{:016x}-{:016x}.json",
        cfg.config_hash(),
        crate::rng::content_hash(
            serde_json::to_string(&(&experiment.dataset, craft.widths(), craft.activation(),))?
                .as_bytes()
        )
    );
    if let Some(dir) = &cache_dir {
        let path = Path::new(dir).join(&key);
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let pop: FinitePopulation = serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("bad cache entry {key}: {e}")))?;
            return Ok(pop.after_deserialize());
        }
    }
    let poisoned = poison::poison(population, cfg, craft)?;
    if let Some(dir) = &cache_dir {
        let path = Path::new(dir).join(&key);
        write_atomic(&path, serde_json::to_string(&poisoned)?.as_bytes())?;
    }
    Ok(poisoned)
}

fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var: f64 =
        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() as f64 - 1.0);
    (mean, (var / vals.len() as f64).sqrt())
}

/// Merge artifact directories into one comparison table plus a plain-text
/// summary ordering bounds against measured gaps per configuration.
pub fn report(dirs: &[PathBuf], out_dir: &Path) -> Result<()> {
    #[derive(Debug)]
    struct Row {
        dir: String,
        population: String,
        eps: f64,
        gap_mean: f64,
        gap_stderr: f64,
        bounds: Vec<(String, f64, String)>,
    }
    let mut rows: Vec<Row> = Vec::new();
    for dir in dirs {
        for (gap_file, bound_file, population) in [
            ("gapsweep.csv", "bounds.csv", "clean"),
            ("poisoned_gapsweep.csv", "poisoned_bounds.csv", "poisoned"),
        ] {
            let gap_path = dir.join(gap_file);
            if !gap_path.exists() {
                continue;
            }
            let gaps = read_csv(&gap_path)?;
            let bound_rows = read_csv(&dir.join(bound_file))?;
            for g in &gaps {
                // The merged sweep carries both populations; keep only the
                // rows belonging to this (gap file, bound file) pairing.
                if g.get("population").map(String::as_str) != Some(population) {
                    continue;
                }
                let eps: f64 = field(g, "eps")?;
                let mut row = Row {
                    dir: dir.display().to_string(),
                    population: population.into(),
                    eps,
                    gap_mean: field(g, "gap_mean")?,
                    gap_stderr: field(g, "gap_stderr")?,
                    bounds: Vec::new(),
                };
                for b in &bound_rows {
                    let beps: f64 = field(b, "eps")?;
                    if beps == eps {
                        row.bounds.push((
                            b.get("bound_name").cloned().unwrap_or_default(),
                            field(b, "value")?,
                            b.get("validity_flags").cloned().unwrap_or_default(),
                        ));
                    }
                }
                rows.push(row);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse("no gapsweep.csv rows found in inputs".into()));
    }

    let mut merged =
        String::from("schema_version,dir,population,eps,metric,value,validity_flags\n");
    for row in &rows {
        merged.push_str(&format!(
            "1,{},{},{},gap_mean,{},\n",
            row.dir, row.population, row.eps, row.gap_mean
        ));
        merged.push_str(&format!(
            "1,{},{},{},gap_stderr,{},\n",
            row.dir, row.population, row.eps, row.gap_stderr
        ));
        for (name, value, flags) in &row.bounds {
            merged.push_str(&format!(
                "1,{},{},{},{},{},{}\n",
                row.dir,
                row.population,
                row.eps,
                name,
                value,
                if flags.contains(',') {
                    format!("\"{}\"", flags.replace('"', "\"\""))
                } else {
                    flags.clone()
                }
            ));
        }
    }
    write_atomic(&out_dir.join("report.csv"), merged.as_bytes())?;

    let mut summary = String::new();
    for row in &rows {
        summary.push_str(&format!(
            "{} [{}] eps={}: measured gap {:.6} (+- {:.6})\n",
            row.dir, row.population, row.eps, row.gap_mean, row.gap_stderr
        ));
        let mut ordered = row.bounds.clone();
        ordered.sort_by(|a, b| a.1.total_cmp(&b.1));
        for (name, value, flags) in ordered {
            let status = if row.gap_mean <= value {
                "holds"
            } else {
                "below measured gap"
            };
            let flag_text = if flags.is_empty() {
                String::new()
            } else {
                format!("  [{flags}]")
            };
            summary.push_str(&format!(
                "    {name:>16} = {value:.6}  ({status}){flag_text}\n"
            ));
        }
    }
    // Baseline blindness: identical uniform-stability baselines across
    // populations with shared (L, eta, alpha, T, n).
    let clean_xiao: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.population == "clean")
        .flat_map(|r| {
            r.bounds
                .iter()
                .filter(|(n, _, _)| n == "xiao_convex")
                .map(move |(_, v, _)| (r.eps, *v))
        })
        .collect();
    for row in rows.iter().filter(|r| r.population == "poisoned") {
        for (name, value, _) in &row.bounds {
            if name == "xiao_convex" {
                if let Some((_, cv)) = clean_xiao.iter().find(|(e, _)| *e == row.eps) {
                    let verdict = if cv == value { "identical" } else { "differs" };
                    summary.push_str(&format!(
                        "baseline check eps={}: clean xiao_convex {cv:.9} vs poisoned {value:.9} -> {verdict}\n",
                        row.eps
                    ));
                }
            }
        }
    }
    write_atomic(&out_dir.join("summary.txt"), summary.as_bytes())?;
    Ok(())
}

type CsvRow = std::collections::HashMap<String, String>;

fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        rows.push(
            headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect(),
        );
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(row: &CsvRow, name: &str) -> Result<T> {
    row.get(name)
        .ok_or_else(|| Error::Parse(format!("missing column {name}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad {name} value")))
}
