//! Plain-SGD reference used to certify the zero-budget reduction.

use stablab_core::trainer::{self, Schedule, TrainConfig};
use stablab_core::{AdversaryConfig, LabeledExample, LossModel, NormP};

pub fn plain_sgd_reference<M: LossModel>(
    model: &M,
    sample: &[LabeledExample],
    order: &[usize],
    alphas: &[f64],
    theta1: &[f64],
) -> Vec<Vec<f64>> {
    let mut theta = theta1.to_vec();
    let mut params = vec![theta.clone()];
    for (t, &idx) in order.iter().enumerate() {
        let g = model.grad_theta(&theta, &sample[idx]);
        for (tj, gj) in theta.iter_mut().zip(&g) {
            *tj -= alphas[t] * gj;
        }
        params.push(theta.clone());
    }
    params
}

fn sample(n: usize, d: usize, m: usize, seed: u64) -> Vec<LabeledExample> {
    use rand::Rng;
    let mut rng = stablab_core::rng::substream(seed, "reduction-sample");
    (0..n)
        .map(|_| {
            LabeledExample::new(
                (0..d).map(|_| rng.random::<f64>()).collect(),
                rng.random_range(0..m),
            )
        })
        .collect()
}

/// Returns the number of parameter entries that differ bitwise between the
/// adversarial trainer at eps = 0 and the plain-SGD reference.
pub fn reduction_bit_mismatches<M: LossModel>(model: &M, steps: usize) -> usize {
    let n = 100;
    let passes = steps.div_ceil(n).max(1);
    let s = sample(n, model.input_dim(), model.num_classes(), 77);
    let theta1: Vec<f64> = (0..model.param_dim())
        .map(|i| 0.01 * (i as f64 % 7.0) - 0.02)
        .collect();
    let cfg = TrainConfig {
        steps,
        passes,
        schedule: Schedule::Inverse(0.8),
        init: theta1.clone(),
        perm_seed: 404,
        reshuffle_each_pass: false,
    };
    let adv = AdversaryConfig::pgd(0.0, NormP::LInf, 10);
    let traj = trainer::sgd_adv_train(model, &s, &cfg, &adv).unwrap();
    let order = trainer::permute(404, n, passes).unwrap();
    let alphas = cfg.schedule.series(steps);
    let reference = plain_sgd_reference(model, &s, &order[..steps], &alphas, &theta1);
    traj.params
        .iter()
        .flatten()
        .zip(reference.iter().flatten())
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count()
}
