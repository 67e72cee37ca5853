//! Shared victim-training helpers for the poisoning experiments and the
//! acceptance suite.

use rand::Rng;
use stablab_core::adversary::AdversaryConfig;
use stablab_core::constants::{self, population_risk};
use stablab_core::rng::substream_indexed;
use stablab_core::trainer::{self, Schedule, TrainConfig};
use stablab_core::{
    Activation, DatasetSpec, FinitePopulation, LabeledExample, LossKind, LossModel, Model,
};

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0);
    (m, (var / v.len() as f64).sqrt())
}

pub fn separable_task() -> FinitePopulation {
    synth_task(0.4)
}

fn synth_task(separation: f64) -> FinitePopulation {
    stablab_core::synth::make_dataset(&DatasetSpec::GaussianMixture {
        dim: 2,
        classes: 2,
        separation,
        size: 300,
        seed: 3,
    })
    .unwrap()
}

pub fn crafter() -> Model {
    Model::mlp(vec![2, 8, 2], Activation::Sigmoid, LossKind::CrossEntropy).unwrap()
}

/// Train the victim on a seeded sample from `pop`; returns (theta, sample).
#[allow(clippy::too_many_arguments)]
pub fn train_victim<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    steps: usize,
    alpha: f64,
    adv: &AdversaryConfig,
    seed: u64,
    theta1: &[f64],
) -> (Vec<f64>, Vec<LabeledExample>) {
    let mut rng = substream_indexed(seed, "victim", 0);
    let sample: Vec<LabeledExample> = (0..n)
        .map(|_| pop.point(pop.sample_index(&mut rng)).clone())
        .collect();
    let cfg = TrainConfig {
        steps,
        passes: steps.div_ceil(n).max(1),
        schedule: Schedule::Constant(alpha),
        init: theta1.to_vec(),
        perm_seed: rng.random(),
        reshuffle_each_pass: false,
    };
    let traj = trainer::sgd_adv_train(model, &sample, &cfg, adv).unwrap();
    (traj.output().to_vec(), sample)
}

/// Robust generalization gap of one seeded victim run over `pop`.
#[allow(clippy::too_many_arguments)]
pub fn one_gap<M: LossModel>(
    model: &M,
    pop: &FinitePopulation,
    n: usize,
    steps: usize,
    alpha: f64,
    adv: &AdversaryConfig,
    seed: u64,
    theta1: &[f64],
) -> f64 {
    let (theta, sample) = train_victim(model, pop, n, steps, alpha, adv, seed, theta1);
    let pop_risk = population_risk(model, &theta, pop, adv).unwrap();
    let emp_risk = constants::empirical_risk(model, &theta, &sample, adv).unwrap();
    pop_risk - emp_risk
}
