//! Empirical estimation of every constant consumed by the bound formulas:
//! Lipschitz constants of the loss in parameters and inputs, the stochastic
//! gradient variance, initial-risk gap, initial Hessian norm, and the
//! curvature quantities gamma and Delta*.
//!
//! Lipschitz constants are sampled maxima of difference quotients inside a
//! stated probe ball, reported with the ball: global constants of smooth
//! networks are unbounded, so every report carries its locality.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::adversary::{self, AdversaryConfig, NormP};
use crate::data::{FinitePopulation, LabeledExample};
use crate::error::{Error, Result};
use crate::model::LossModel;
use crate::vecmath;

/// How a report field was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Provenance {
    Estimated { probes: usize, ball_radius: f64 },
    Supplied,
}

/// Every symbol the bound formulas consume, with per-field provenance.
///
/// `eta = 2 * eps * l_z` and `nu = 2 * eps * h_z` hold exactly as stored;
/// `beta` and `rho` are aliases for `l_theta` and `h_theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    /// Adversarial budget the derived quantities refer to.
    pub eps: f64,
    /// Loss Lipschitz constant in theta.
    #[serde(rename = "L")]
    pub l: f64,
    /// Gradient Lipschitz constant in theta (beta).
    #[serde(rename = "L_theta")]
    pub l_theta: f64,
    /// Lipschitz constant of the theta-gradient under input changes.
    #[serde(rename = "L_z")]
    pub l_z: f64,
    /// Hessian Lipschitz constant in theta (rho).
    #[serde(rename = "H_theta")]
    pub h_theta: f64,
    /// Lipschitz constant of the theta-Hessian under input changes.
    #[serde(rename = "H_z")]
    pub h_z: f64,
    /// Gradient-Lipschitz slack of the adversarial loss: `2 * eps * L_z`.
    pub eta: f64,
    /// Hessian-Lipschitz slack of the adversarial loss: `2 * eps * H_z`.
    pub nu: f64,
    /// Stochastic gradient deviation bound over the population.
    pub sigma: f64,
    /// Initial-risk gap `R_D(theta_1) - R_D(theta*)`.
    pub r: f64,
    /// Expected spectral norm of the adversarial-loss Hessian at theta_1.
    pub hess_norm_init: f64,
    /// Curvature constant `min(beta, G)`.
    pub gamma: f64,
    /// The explicit expression G before the min with beta.
    pub gamma_raw: f64,
    /// `rho * (sqrt(r c) + c sigma + c sqrt(eta L))`.
    pub delta_star: f64,
    pub provenance: BTreeMap<String, Provenance>,
    pub warnings: Vec<String>,
    /// Hash of the poison config when the report was computed on a shifted
    /// population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison_tag: Option<String>,
}

impl ConstantsReport {
    /// Gradient-Lipschitz constant, the `beta` of the formulas.
    pub fn beta(&self) -> f64 {
        self.l_theta
    }

    /// Hessian-Lipschitz constant, the `rho` of the formulas.
    pub fn rho(&self) -> f64 {
        self.h_theta
    }

    /// Check the stored identities and sign constraints.
    pub fn validate(&self) -> Result<()> {
        if self.eta != 2.0 * self.eps * self.l_z {
            return Err(Error::Contract("eta != 2 * eps * L_z".into()));
        }
        if self.nu != 2.0 * self.eps * self.h_z {
            return Err(Error::Contract("nu != 2 * eps * H_z".into()));
        }
        for (name, v) in [
            ("L", self.l),
            ("L_theta", self.l_theta),
            ("L_z", self.l_z),
            ("H_theta", self.h_theta),
            ("H_z", self.h_z),
            ("eta", self.eta),
            ("nu", self.nu),
            ("sigma", self.sigma),
            ("hess_norm_init", self.hess_norm_init),
            ("gamma", self.gamma),
            ("delta_star", self.delta_star),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Contract(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.r < -1e-9 {
            return Err(Error::Contract(format!(
                "r = {} below -1e-9; theta* estimate is inconsistent",
                self.r
            )));
        }
        if self.gamma > self.beta() {
            return Err(Error::Contract("gamma exceeds beta".into()));
        }
        Ok(())
    }
}

/// Sampled Lipschitz constants of the base loss inside a probe ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    pub l: f64,
    pub l_theta: f64,
    pub l_z: f64,
    pub h_theta: f64,
    pub h_z: f64,
    pub eta: f64,
    pub nu: f64,
    pub probes: usize,
    pub ball_radius: f64,
}

const POWER_ITERS_LIPSCHITZ: usize = 80;

/// Max-of-difference-quotients estimates of (L, L_theta, L_z, H_theta, H_z)
/// over `probes` sampled pairs: parameter pairs inside the L2 ball of
/// `ball_radius` around the origin, inputs uniform in the unit box with a
/// shared label. Probe draws form a prefix stream, so growing `probes` with
/// the same seed never decreases an estimate.
pub fn estimate_lipschitz<M: LossModel>(
    model: &M,
    adv: &AdversaryConfig,
    ball_radius: f64,
    probes: usize,
    seed: u64,
) -> Result<LipschitzEstimates> {
    if probes < 100 {
        return Err(Error::InvalidConfig(format!(
            "lipschitz estimation needs >= 100 probes, got {probes}"
        )));
    }
    if ball_radius <= 0.0 {
        return Err(Error::InvalidConfig("probe ball radius must be > 0".into()));
    }
    let k = model.param_dim();
    let d = model.input_dim();
    let m = model.num_classes();
    let mut rng = crate::rng::substream(seed, "lipschitz-probes");
    let mut est = LipschitzEstimates {
        l: 0.0,
        l_theta: 0.0,
        l_z: 0.0,
        h_theta: 0.0,
        h_z: 0.0,
        eta: 0.0,
        nu: 0.0,
        probes,
        ball_radius,
    };
    for _ in 0..probes {
        let theta_a = ball_point(&mut rng, k, ball_radius);
        let theta_b = ball_point(&mut rng, k, ball_radius);
        let z = random_example(&mut rng, d, m);
        let label2 = rng.random_range(0..m);
        let za = LabeledExample::new((0..d).map(|_| rng.random()).collect(), label2);
        let zb = LabeledExample::new((0..d).map(|_| rng.random()).collect(), label2);
        let v_theta = ball_point(&mut rng, k, 1.0);
        let v_input = ball_point(&mut rng, k, 1.0);

        let d_theta = vecmath::dist2(&theta_a, &theta_b);
        if d_theta > 1e-12 {
            let dl = (model.loss(&theta_a, &z) - model.loss(&theta_b, &z)).abs();
            est.l = est.l.max(dl / d_theta);

            let ga = model.grad_theta(&theta_a, &z);
            let gb = model.grad_theta(&theta_b, &z);
            est.l_theta = est.l_theta.max(vecmath::dist2(&ga, &gb) / d_theta);

            let (hn, _) = vecmath::power_iteration(
                k,
                |v| {
                    vecmath::sub(
                        &model.hvp_theta(&theta_a, &z, v),
                        &model.hvp_theta(&theta_b, &z, v),
                    )
                },
                POWER_ITERS_LIPSCHITZ,
                1e-10,
                &v_theta,
            );
            est.h_theta = est.h_theta.max(hn / d_theta);
        }

        let d_input = input_dist(&za.features, &zb.features, adv.norm);
        if d_input > 1e-12 {
            let ga = model.grad_theta(&theta_a, &za);
            let gb = model.grad_theta(&theta_a, &zb);
            est.l_z = est.l_z.max(vecmath::dist2(&ga, &gb) / d_input);

            let (hn, _) = vecmath::power_iteration(
                k,
                |v| {
                    vecmath::sub(
                        &model.hvp_theta(&theta_a, &za, v),
                        &model.hvp_theta(&theta_a, &zb, v),
                    )
                },
                POWER_ITERS_LIPSCHITZ,
                1e-10,
                &v_input,
            );
            est.h_z = est.h_z.max(hn / d_input);
        }
    }
    est.eta = 2.0 * adv.eps * est.l_z;
    est.nu = 2.0 * adv.eps * est.h_z;
    Ok(est)
}

fn input_dist(a: &[f64], b: &[f64], norm: NormP) -> f64 {
    match norm {
        NormP::L2 => vecmath::dist2(a, b),
        NormP::LInf => vecmath::dist_inf(a, b),
    }
}

/// Uniform point in the L2 ball of the given radius.
fn ball_point<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = vecmath::norm2(&v);
    let u: f64 = rng.random();
    let scale = if n == 0.0 {
        0.0
    } else {
        radius * u.powf(1.0 / dim as f64) / n
    };
    vecmath::scale(scale, &mut v);
    v
}

fn random_example<R: Rng>(rng: &mut R, d: usize, m: usize) -> LabeledExample {
    LabeledExample::new(
        (0..d).map(|_| rng.random()).collect(),
        rng.random_range(0..m),
    )
}

/// Max over the probe parameters of the exact population standard deviation
/// of the adversarial-loss gradient.
pub fn estimate_sigma<M: LossModel>(
    model: &M,
    theta_probes: &[Vec<f64>],
    population: &FinitePopulation,
    adv: &AdversaryConfig,
) -> Result<f64> {
    if theta_probes.is_empty() {
        return Err(Error::InvalidConfig(
            "sigma needs at least one theta probe".into(),
        ));
    }
    let mut worst = 0.0_f64;
    for theta in theta_probes {
        let grads: Vec<Vec<f64>> = population
            .points()
            .iter()
            .map(|z| adversary::adv_grad(model, theta, z, adv))
            .collect::<Result<_>>()?;
        let mut mean = vec![0.0; model.param_dim()];
        for (g, &w) in grads.iter().zip(population.weights()) {
            vecmath::axpy(w, g, &mut mean);
        }
        let var: f64 = grads
            .iter()
            .zip(population.weights())
            .map(|(g, &w)| {
                let d = vecmath::dist2(g, &mean);
                w * d * d
            })
            .sum();
        worst = worst.max(var.sqrt());
    }
    Ok(worst)
}

/// Adversarial loss at every population point.
pub fn population_adv_losses<M: LossModel>(
    model: &M,
    theta: &[f64],
    population: &FinitePopulation,
    adv: &AdversaryConfig,
) -> Result<Vec<f64>> {
    population
        .points()
        .iter()
        .map(|z| adversary::adv_loss(model, theta, z, adv))
        .collect()
}

/// Exact adversarial population risk `R_D(theta)`.
pub fn population_risk<M: LossModel>(
    model: &M,
    theta: &[f64],
    population: &FinitePopulation,
    adv: &AdversaryConfig,
) -> Result<f64> {
    let losses = population_adv_losses(model, theta, population, adv)?;
    Ok(losses
        .iter()
        .zip(population.weights())
        .map(|(l, w)| l * w)
        .sum())
}

/// Adversarial empirical risk over a sample (uniform weights).
pub fn empirical_risk<M: LossModel>(
    model: &M,
    theta: &[f64],
    sample: &[LabeledExample],
    adv: &AdversaryConfig,
) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptyDataset(
            "empirical risk over empty sample".into(),
        ));
    }
    let mut acc = 0.0;
    for z in sample {
        acc += adversary::adv_loss(model, theta, z, adv)?;
    }
    Ok(acc / sample.len() as f64)
}

/// Gradient of the adversarial population risk (Danskin surrogate).
pub fn population_risk_grad<M: LossModel>(
    model: &M,
    theta: &[f64],
    population: &FinitePopulation,
    adv: &AdversaryConfig,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; model.param_dim()];
    for (z, &w) in population.points().iter().zip(population.weights()) {
        let g = adversary::adv_grad(model, theta, z, adv)?;
        vecmath::axpy(w, &g, &mut acc);
    }
    Ok(acc)
}

/// Budget for the full-population risk minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptBudget {
    pub restarts: usize,
    pub steps: usize,
    pub init_step: f64,
    pub seed: u64,
}

impl Default for OptBudget {
    fn default() -> Self {
        Self {
            restarts: 3,
            steps: 400,
            init_step: 0.5,
            seed: 0,
        }
    }
}

/// Best parameter found by full-population adversarial gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRiskEstimate {
    pub theta: Vec<f64>,
    pub risk: f64,
    /// True when the model is non-convex in theta, in which case the risk is
    /// only an upper bound on `R_D(theta*)`.
    pub upper_bound_only: bool,
}

/// Minimize `R_D` by gradient descent with backtracking and restarts.
///
/// A warm start (typically `theta_1`) joins the random restarts, which
/// keeps `R_D(theta*) <= R_D(theta_1)` even on non-convex models.
pub fn estimate_opt_risk<M: LossModel>(
    model: &M,
    population: &FinitePopulation,
    adv: &AdversaryConfig,
    budget: &OptBudget,
    warm_start: Option<&[f64]>,
) -> Result<OptRiskEstimate> {
    if budget.restarts == 0 || budget.steps == 0 || budget.init_step <= 0.0 {
        return Err(Error::InvalidConfig("opt budget must be positive".into()));
    }
    let k = model.param_dim();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm_start {
        starts.push(w.to_vec());
    }
    for restart in 0..budget.restarts {
        let mut rng = crate::rng::substream_indexed(budget.seed, "opt-restart", restart as u64);
        let scale = 0.5;
        starts.push(
            (0..k)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    scale * g
                })
                .collect(),
        );
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mut theta in starts {
        let mut risk = population_risk(model, &theta, population, adv)?;
        let initial = risk;
        let mut alpha = budget.init_step;
        for _ in 0..budget.steps {
            let g = population_risk_grad(model, &theta, population, adv)?;
            let mut cand = theta.clone();
            vecmath::axpy(-alpha, &g, &mut cand);
            let cand_risk = population_risk(model, &cand, population, adv)?;
            if cand_risk > initial * 10.0 + 1e-9 {
                return Err(Error::OptimizationFailure(format!(
                    "risk grew from {initial} to {cand_risk}"
                )));
            }
            if cand_risk <= risk {
                theta = cand;
                risk = cand_risk;
                alpha = (alpha * 1.5).min(budget.init_step * 16.0);
            } else {
                alpha *= 0.5;
                if alpha < 1e-12 {
                    break;
                }
            }
        }
        match &best {
            Some((_, r)) if *r <= risk => {}
            _ => best = Some((theta, risk)),
        }
    }
    let (theta, risk) = best.expect("restarts >= 1");
    Ok(OptRiskEstimate {
        theta,
        risk,
        upper_bound_only: !model.is_convex_in_theta(),
    })
}

/// Estimate of the expected initial Hessian spectral norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessNormEstimate {
    pub value: f64,
    /// False when some per-point power iteration hit the iteration cap
    /// before the Rayleigh quotient settled below 1e-8.
    pub converged: bool,
}

/// `E_z ||H(theta_1, z')||` with `z'` the attack maximizer per point and the
/// spectral norm taken by power iteration on Hessian-vector products.
pub fn hessian_norm_init<M: LossModel>(
    model: &M,
    theta1: &[f64],
    population: &FinitePopulation,
    adv: &AdversaryConfig,
    power_iters: usize,
) -> Result<HessNormEstimate> {
    if power_iters < 20 {
        return Err(Error::InvalidConfig(format!(
            "hessian norm estimation needs >= 20 power iterations, got {power_iters}"
        )));
    }
    let k = model.param_dim();
    let mut value = 0.0;
    let mut converged = true;
    for (i, (z, &w)) in population
        .points()
        .iter()
        .zip(population.weights())
        .enumerate()
    {
        if w == 0.0 {
            continue;
        }
        let zp = adversary::attack(model, theta1, z, adv)?;
        let mut rng = crate::rng::substream_indexed(0x48455353, "hess-norm-start", i as u64);
        let start: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (norm, ok) = vecmath::power_iteration(
            k,
            |v| model.hvp_theta(theta1, &zp, v),
            power_iters,
            1e-8,
            &start,
        );
        value += w * norm;
        converged &= ok;
    }
    Ok(HessNormEstimate { value, converged })
}

/// gamma and Delta* outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaDelta {
    /// `min(beta, G)`.
    pub gamma: f64,
    /// The explicit expression G evaluated at t = T, before the min.
    pub gamma_raw: f64,
    pub delta_star: f64,
    pub warnings: Vec<String>,
}

/// Evaluate Delta* and the explicit curvature expression
/// `G = hess_norm_init + nu + 2 rho sqrt(r c (1 + ln T))
///    + 2 rho sigma c sqrt(beta c (1 + ln T))
///    + rho c (sigma + 2 sqrt(eta L)) (1 + ln T)`,
/// returning `gamma = min(beta, G)` alongside the raw G.
pub fn gamma_delta(consts: &ConstantsReport, c: f64, steps: usize) -> Result<GammaDelta> {
    if c <= 0.0 || !c.is_finite() {
        return Err(Error::Contract(format!("c = {c} must be positive")));
    }
    if steps < 1 {
        return Err(Error::Contract("T must be >= 1".into()));
    }
    let mut warnings = Vec::new();
    let mut r = consts.r;
    if r < 0.0 {
        warnings.push(format!("r = {r} clamped to 0 (estimation noise)"));
        r = 0.0;
    }
    let rho = consts.rho();
    let beta = consts.beta();
    let sigma = consts.sigma;
    let eta_l = consts.eta * consts.l;
    let delta_star = rho * ((r * c).sqrt() + c * sigma + c * eta_l.sqrt());
    let one_ln = 1.0 + (steps as f64).ln();
    let g = consts.hess_norm_init
        + consts.nu
        + 2.0 * rho * (r * c * one_ln).sqrt()
        + 2.0 * rho * sigma * c * (beta * c * one_ln).sqrt()
        + rho * c * (sigma + 2.0 * eta_l.sqrt()) * one_ln;
    Ok(GammaDelta {
        gamma: beta.min(g),
        gamma_raw: g,
        delta_star,
        warnings,
    })
}

/// Inputs for the full constants pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationPlan {
    pub ball_radius: f64,
    pub probes: usize,
    pub seed: u64,
    pub power_iters: usize,
    pub opt: OptBudget,
    /// Inverse-schedule coefficient at which gamma and Delta* are reported.
    pub c_for_gamma: f64,
    /// Step count T at which gamma is reported.
    pub steps_for_gamma: usize,
}

/// Run every estimator and assemble a complete report.
pub fn estimate_constants<M: LossModel>(
    model: &M,
    population: &FinitePopulation,
    adv: &AdversaryConfig,
    theta1: &[f64],
    theta_probes: &[Vec<f64>],
    plan: &EstimationPlan,
) -> Result<ConstantsReport> {
    let lip = estimate_lipschitz(model, adv, plan.ball_radius, plan.probes, plan.seed)?;
    let sigma = estimate_sigma(model, theta_probes, population, adv)?;
    let risk_init = population_risk(model, theta1, population, adv)?;
    let opt = estimate_opt_risk(model, population, adv, &plan.opt, Some(theta1))?;
    let hess = hessian_norm_init(model, theta1, population, adv, plan.power_iters)?;

    let mut warnings = Vec::new();
    if !hess.converged {
        warnings.push("hessian norm power iteration hit the iteration cap".into());
    }
    if opt.upper_bound_only {
        warnings.push(
            "theta* from a non-convex search: r is computed from an upper bound on R_D(theta*)"
                .into(),
        );
    }
    let estimated = Provenance::Estimated {
        probes: plan.probes,
        ball_radius: plan.ball_radius,
    };
    let mut provenance = BTreeMap::new();
    for name in ["L", "L_theta", "L_z", "H_theta", "H_z", "eta", "nu"] {
        provenance.insert(name.to_string(), estimated.clone());
    }
    provenance.insert(
        "sigma".into(),
        Provenance::Estimated {
            probes: theta_probes.len(),
            ball_radius: plan.ball_radius,
        },
    );
    for name in ["r", "hess_norm_init", "gamma", "delta_star"] {
        provenance.insert(name.to_string(), estimated.clone());
    }

    let mut report = ConstantsReport {
        eps: adv.eps,
        l: lip.l,
        l_theta: lip.l_theta,
        l_z: lip.l_z,
        h_theta: lip.h_theta,
        h_z: lip.h_z,
        eta: lip.eta,
        nu: lip.nu,
        sigma,
        r: risk_init - opt.risk,
        hess_norm_init: hess.value,
        gamma: 0.0,
        gamma_raw: 0.0,
        delta_star: 0.0,
        provenance,
        warnings,
        poison_tag: None,
    };
    let gd = gamma_delta(&report, plan.c_for_gamma, plan.steps_for_gamma)?;
    report.gamma = gd.gamma;
    report.gamma_raw = gd.gamma_raw;
    report.delta_star = gd.delta_star;
    report.warnings.extend(gd.warnings);
    report.validate()?;
    Ok(report)
}
