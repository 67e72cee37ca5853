//! Shared fixtures for the benchmarks.

use stablab_core::trainer::{Schedule, TrainConfig};
use stablab_core::{
    Activation, AdversaryConfig, DatasetSpec, FinitePopulation, LabeledExample, LossKind, Model,
    NormP,
};

pub fn mixture(size: usize) -> FinitePopulation {
    stablab_core::synth::make_dataset(&DatasetSpec::GaussianMixture {
        dim: 10,
        classes: 2,
        separation: 0.3,
        size,
        seed: 3,
    })
    .unwrap()
}

pub fn linear_model() -> (Model, Vec<f64>) {
    let model = Model::linear_softmax(10, 2, LossKind::CrossEntropy).unwrap();
    let theta = model.init_theta(7);
    (model, theta)
}

pub fn mlp_model() -> (Model, Vec<f64>) {
    let model = Model::mlp(vec![10, 16, 2], Activation::Sigmoid, LossKind::CrossEntropy).unwrap();
    let theta = model.init_theta(7);
    (model, theta)
}

pub fn pgd10(eps: f64) -> AdversaryConfig {
    AdversaryConfig::pgd(eps, NormP::LInf, 10)
}

pub fn train_config(steps: usize, theta1: Vec<f64>) -> TrainConfig {
    TrainConfig {
        steps,
        passes: 1,
        schedule: Schedule::Constant(0.01),
        init: theta1,
        perm_seed: 11,
        reshuffle_each_pass: false,
    }
}

pub fn sample(pop: &FinitePopulation, n: usize) -> Vec<LabeledExample> {
    (0..n).map(|i| pop.point(i % pop.len()).clone()).collect()
}
