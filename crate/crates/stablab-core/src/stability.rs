//! Empirical measurement of on-average stability and robust generalization
//! gaps, with an exact-enumeration mode for micro instances and a paired
//! Monte Carlo mode for desk-scale ones.
//!
//! The stability quantity per replacement index i is
//! `E[h(A(S), z) - h(A(S^{i,z}), z)]` over the sample S, the replacement
//! draw z (which is also the evaluation point), and the permutation; the
//! two runs always share (S, z, pi), which is what makes the Monte Carlo
//! estimator low-variance.

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{self, AdversaryConfig};
use crate::constants;
use crate::data::{FinitePopulation, LabeledExample};
use crate::error::{Error, Result};
use crate::model::LossModel;
use crate::trainer::{self, TrainConfig};

/// Default cap on exact-enumeration loss evaluations.
pub const DEFAULT_EXACT_CAP: u128 = 10_000_000;

/// How the expectations are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StabilityMode {
    /// Full enumeration of (S, z, pi); only valid when
    /// `|D|^n * n! * |D| * n` is below the cap.
    Exact { cap: u128 },
    /// Paired sampling with shared (S, z, pi) across the two runs.
    MonteCarlo { trials: usize, seed: u64 },
}

impl StabilityMode {
    pub fn exact() -> Self {
        StabilityMode::Exact {
            cap: DEFAULT_EXACT_CAP,
        }
    }
}

/// Per-index stability estimates and their supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityEstimate {
    /// Estimate of the expected loss difference for each replacement index.
    pub per_index: Vec<f64>,
    /// Monte Carlo standard error per index (zero in exact mode).
    pub stderr: Vec<f64>,
    /// `max_i per_index[i]`.
    pub sup_index: f64,
    pub mode: StabilityMode,
}

impl StabilityEstimate {
    /// Standard error attached to the index attaining the supremum.
    pub fn sup_stderr(&self) -> f64 {
        let (i, _) =
            self.per_index
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| {
                    if v > acc.1 {
                        (i, v)
                    } else {
                        acc
                    }
                });
        self.stderr[i]
    }
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// Number of loss evaluations exact mode needs: `|D|^n * n! * |D| * n`.
pub fn exact_enumeration_count(pop_size: usize, n: usize) -> u128 {
    (pop_size as u128)
        .pow(n as u32)
        .saturating_mul(factorial(n))
        .saturating_mul(pop_size as u128)
        .saturating_mul(n as u128)
}

/// Iterate all ordered index tuples of length n over a population,
/// yielding the tuple and its product weight.
fn for_each_sample_tuple<F: FnMut(&[usize], f64) -> Result<()>>(
    pop: &FinitePopulation,
    n: usize,
    mut f: F,
) -> Result<()> {
    let k = pop.len();
    let mut idx = vec![0usize; n];
    loop {
        let prob: f64 = idx.iter().map(|&i| pop.weight(i)).product();
        if prob > 0.0 {
            f(&idx, prob)?;
        }
        let mut j = 0;
        loop {
            if j == n {
                return Ok(());
            }
            idx[j] += 1;
            if idx[j] < k {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// On-average stability of the trainer on samples of size n from `pop`.
pub fn on_average_stability<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    train: &TrainConfig,
    adv: &AdversaryConfig,
    mode: StabilityMode,
) -> Result<StabilityEstimate> {
    if n == 0 {
        return Err(Error::EmptyDataset("stability needs n >= 1".into()));
    }
    match mode {
        StabilityMode::Exact { cap } => exact_stability(model, pop, n, train, adv, cap, mode),
        StabilityMode::MonteCarlo { trials, seed } => {
            mc_stability(model, pop, n, train, adv, trials, seed, mode)
        }
    }
}

fn exact_stability<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    train: &TrainConfig,
    adv: &AdversaryConfig,
    cap: u128,
    mode: StabilityMode,
) -> Result<StabilityEstimate> {
    let needed = exact_enumeration_count(pop.len(), n);
    if needed > cap {
        return Err(Error::EnumerationCapExceeded { needed, cap });
    }
    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let perm_weight = 1.0 / perms.len() as f64;
    let mut per_index = vec![0.0; n];

    for_each_sample_tuple(pop, n, |tuple, prob| {
        let sample: Vec<LabeledExample> = tuple.iter().map(|&i| pop.point(i).clone()).collect();
        for perm in &perms {
            let base =
                trainer::sgd_adv_train_with_permutation(model, &sample, train, adv, perm.clone())?;
            // Losses of the base run at every candidate evaluation point.
            let base_losses: Vec<f64> = pop
                .points()
                .iter()
                .map(|z| adversary::adv_loss(model, base.output(), z, adv))
                .collect::<Result<_>>()?;
            for i in 0..n {
                for (zi, z) in pop.points().iter().enumerate() {
                    let wz = pop.weight(zi);
                    if wz == 0.0 {
                        continue;
                    }
                    let mut replaced = sample.clone();
                    replaced[i] = z.clone();
                    let twin = trainer::sgd_adv_train_with_permutation(
                        model,
                        &replaced,
                        train,
                        adv,
                        perm.clone(),
                    )?;
                    let h_twin = adversary::adv_loss(model, twin.output(), z, adv)?;
                    per_index[i] += prob * perm_weight * wz * (base_losses[zi] - h_twin);
                }
            }
        }
        Ok(())
    })?;

    let sup_index = per_index.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityEstimate {
        stderr: vec![0.0; n],
        per_index,
        sup_index,
        mode,
    })
}

#[allow(clippy::too_many_arguments)]
fn mc_stability<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    train: &TrainConfig,
    adv: &AdversaryConfig,
    trials: usize,
    seed: u64,
    mode: StabilityMode,
) -> Result<StabilityEstimate> {
    if trials == 0 {
        return Err(Error::InvalidConfig("monte carlo needs trials >= 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..trials).map(move |t| (i, t)))
        .collect();
    let diffs: Vec<((usize, usize), f64)> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let diff = paired_trial(model, pop, n, train, adv, seed, i, t)?;
            Ok(((i, t), diff))
        })
        .collect::<Result<_>>()?;

    let mut per_index = vec![0.0; n];
    let mut stderr = vec![0.0; n];
    for i in 0..n {
        let vals: Vec<f64> = diffs
            .iter()
            .filter(|((j, _), _)| *j == i)
            .map(|&(_, d)| d)
            .collect();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        per_index[i] = mean;
        if vals.len() > 1 {
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (vals.len() as f64 - 1.0);
            stderr[i] = (var / vals.len() as f64).sqrt();
        }
    }
    let sup_index = per_index.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityEstimate {
        per_index,
        stderr,
        sup_index,
        mode,
    })
}

/// One paired draw: shared (S, z, pi) between the two runs.
#[allow(clippy::too_many_arguments)]
fn paired_trial<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    train: &TrainConfig,
    adv: &AdversaryConfig,
    seed: u64,
    index: usize,
    trial: usize,
) -> Result<f64> {
    let mut rng =
        crate::rng::substream_indexed(seed, "stability-trial", (index as u64) << 32 | trial as u64);
    let sample: Vec<LabeledExample> = (0..n)
        .map(|_| pop.point(pop.sample_index(&mut rng)).clone())
        .collect();
    let z = pop.point(pop.sample_index(&mut rng)).clone();
    let mut cfg = train.clone();
    cfg.perm_seed = rng.random();
    let (base, twin, _) = trainer::paired_trajectories(model, &sample, index, &z, &cfg, adv)?;
    let h_base = adversary::adv_loss(model, base.output(), &z, adv)?;
    let h_twin = adversary::adv_loss(model, twin.output(), &z, adv)?;
    Ok(h_base - h_twin)
}

/// Measured robust generalization gap over Monte Carlo draws of (S, pi):
/// mean and standard error of `R_D(A(S)) - R_S(A(S))`.
pub fn gen_gap<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    train: &TrainConfig,
    adv: &AdversaryConfig,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidConfig("gen gap needs trials >= 1".into()));
    }
    let gaps = gen_gap_samples(model, pop, n, train, adv, trials, seed)?;
    Ok(mean_stderr(&gaps))
}

/// The per-trial gap samples behind `gen_gap`; exposed for paired
/// clean-vs-poisoned experiments that share trial seeds.
pub fn gen_gap_samples<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    train: &TrainConfig,
    adv: &AdversaryConfig,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = crate::rng::substream_indexed(seed, "gen-gap-trial", t as u64);
            let sample: Vec<LabeledExample> = (0..n)
                .map(|_| pop.point(pop.sample_index(&mut rng)).clone())
                .collect();
            let mut cfg = train.clone();
            cfg.perm_seed = rng.random();
            let traj = trainer::sgd_adv_train(model, &sample, &cfg, adv)?;
            let theta = traj.output();
            let pop_risk = constants::population_risk(model, theta, pop, adv)?;
            let emp_risk = constants::empirical_risk(model, theta, &sample, adv)?;
            Ok(pop_risk - emp_risk)
        })
        .collect()
}

/// Exact expected gap by full enumeration of (S, pi).
pub fn gen_gap_exact<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    train: &TrainConfig,
    adv: &AdversaryConfig,
    cap: u128,
) -> Result<f64> {
    let needed = exact_enumeration_count(pop.len(), n);
    if needed > cap {
        return Err(Error::EnumerationCapExceeded { needed, cap });
    }
    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let perm_weight = 1.0 / perms.len() as f64;
    let mut gap = 0.0;
    for_each_sample_tuple(pop, n, |tuple, prob| {
        let sample: Vec<LabeledExample> = tuple.iter().map(|&i| pop.point(i).clone()).collect();
        for perm in &perms {
            let traj =
                trainer::sgd_adv_train_with_permutation(model, &sample, train, adv, perm.clone())?;
            let theta = traj.output();
            let pop_risk = constants::population_risk(model, theta, pop, adv)?;
            let emp_risk = constants::empirical_risk(model, theta, &sample, adv)?;
            gap += prob * perm_weight * (pop_risk - emp_risk);
        }
        Ok(())
    })?;
    Ok(gap)
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

/// Outcome of checking that the measured gap is below the stability bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm1Report {
    pub gap_mean: f64,
    pub gap_stderr: f64,
    pub stability: StabilityEstimate,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compare the measured generalization gap against the supremum stability
/// estimate; exact mode uses tolerance 1e-10, Monte Carlo three combined
/// standard errors.
pub fn thm1_check<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    train: &TrainConfig,
    adv: &AdversaryConfig,
    mode: StabilityMode,
) -> Result<Thm1Report> {
    let stability = on_average_stability(model, pop, n, train, adv, mode)?;
    let (gap_mean, gap_stderr, tolerance) = match mode {
        StabilityMode::Exact { cap } => {
            let gap = gen_gap_exact(model, pop, n, train, adv, cap)?;
            (gap, 0.0, 1e-10)
        }
        StabilityMode::MonteCarlo { trials, seed } => {
            let (mean, se) = gen_gap(model, pop, n, train, adv, trials, seed ^ 0x9e37)?;
            let combined = (se * se + stability.sup_stderr().powi(2)).sqrt();
            (mean, se, 3.0 * combined)
        }
    };
    let pass = gap_mean <= stability.sup_index + tolerance;
    Ok(Thm1Report {
        gap_mean,
        gap_stderr,
        stability,
        tolerance,
        pass,
    })
}
