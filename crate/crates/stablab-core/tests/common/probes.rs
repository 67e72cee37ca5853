//! Expansiveness probes: how much one shared-example SGD update can grow
//! the distance between two parameter vectors.

use rand::Rng;
use stablab_core::adversary::{adv_grad, AdversaryConfig};
use stablab_core::rng::substream;
use stablab_core::vecmath;
use stablab_core::{LabeledExample, LossModel};

pub struct ExpansivenessOutcome {
    /// Worst excess over `||a-b|| + alpha * eta_hat` (the non-expansive form
    /// valid for convex losses at step sizes up to 1/beta).
    pub worst_nonexpansive_excess: f64,
    /// Worst excess over `(1 + alpha beta_hat) ||a-b|| + alpha * eta_hat`.
    pub worst_smooth_excess: f64,
    pub pairs: usize,
}

fn ball_point<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = vecmath::norm2(&v);
    let u: f64 = rng.random();
    let s = if n == 0.0 {
        0.0
    } else {
        radius * u.powf(1.0 / dim as f64) / n
    };
    vecmath::scale(s, &mut v);
    v
}

/// Sample `pairs` parameter pairs in the ball and apply one shared-example
/// update `G(theta) = theta - alpha * grad h(theta, z)` to both.
#[allow(clippy::too_many_arguments)]
pub fn expansiveness_probe<M: LossModel>(
    model: &M,
    adv: &AdversaryConfig,
    eta_hat: f64,
    beta_hat: f64,
    radius: f64,
    alpha: f64,
    pairs: usize,
    seed: u64,
) -> ExpansivenessOutcome {
    let mut rng = substream(seed, "expansiveness");
    let k = model.param_dim();
    let d = model.input_dim();
    let m = model.num_classes();
    let mut worst_nonexpansive = f64::NEG_INFINITY;
    let mut worst_smooth = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let theta_a = ball_point(&mut rng, k, radius);
        let theta_b = ball_point(&mut rng, k, radius);
        let z = LabeledExample::new(
            (0..d).map(|_| rng.random::<f64>()).collect(),
            rng.random_range(0..m),
        );
        let ga = adv_grad(model, &theta_a, &z, adv).unwrap();
        let gb = adv_grad(model, &theta_b, &z, adv).unwrap();
        let mut ua = theta_a.clone();
        let mut ub = theta_b.clone();
        vecmath::axpy(-alpha, &ga, &mut ua);
        vecmath::axpy(-alpha, &gb, &mut ub);
        let before = vecmath::dist2(&theta_a, &theta_b);
        let after = vecmath::dist2(&ua, &ub);
        worst_nonexpansive = worst_nonexpansive.max(after - (before + alpha * eta_hat));
        worst_smooth =
            worst_smooth.max(after - ((1.0 + alpha * beta_hat) * before + alpha * eta_hat));
    }
    ExpansivenessOutcome {
        worst_nonexpansive_excess: worst_nonexpansive,
        worst_smooth_excess: worst_smooth,
        pairs,
    }
}
