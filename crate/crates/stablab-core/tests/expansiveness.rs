//! One shared-example update is non-expansive plus an `alpha * eta` slack
//! for convex quadratic losses at step sizes up to the inverse curvature,
//! and `(1 + alpha beta)`-expansive plus the same slack for smooth models.

mod common;

use common::probes::expansiveness_probe;
use stablab_core::constants::estimate_lipschitz;
use stablab_core::{Activation, AdversaryConfig, LossKind, Model, NormP};

#[test]
fn convex_quadratic_updates_are_nonexpansive_plus_budget_slack() {
    let model = Model::linear_softmax(3, 2, LossKind::SquaredError).unwrap();
    let radius = 3.0;
    let adv = AdversaryConfig::pgd(0.08, NormP::LInf, 10);
    let est = estimate_lipschitz(&model, &adv, radius, 300, 41).unwrap();
    // Constant Hessian: the sampled beta is exact up to solver tolerance.
    let alpha = 0.9 / est.l_theta;
    let outcome = expansiveness_probe(&model, &adv, est.eta, est.l_theta, radius, alpha, 1000, 43);
    assert!(
        outcome.worst_nonexpansive_excess <= 1e-8,
        "excess {}",
        outcome.worst_nonexpansive_excess
    );
}

#[test]
fn smooth_mlp_updates_are_one_plus_alpha_beta_expansive() {
    let model = Model::mlp(vec![3, 5, 2], Activation::Sigmoid, LossKind::CrossEntropy).unwrap();
    let radius = 2.0;
    let adv = AdversaryConfig::pgd(0.1, NormP::LInf, 10);
    let est = estimate_lipschitz(&model, &adv, radius, 400, 45).unwrap();
    for alpha in [0.05, 0.2, 0.9 / est.l_theta] {
        let outcome =
            expansiveness_probe(&model, &adv, est.eta, est.l_theta, radius, alpha, 1000, 47);
        // Estimated-constant tolerance: the sampled beta is a lower
        // estimate, so allow five percent of the beta term plus float slack.
        let tolerance = 0.05 * alpha * est.l_theta * 2.0 * radius + 1e-8;
        assert!(
            outcome.worst_smooth_excess <= tolerance,
            "alpha {alpha}: excess {} > {tolerance}",
            outcome.worst_smooth_excess
        );
    }
}
