//! Desk-scale stability attacks: feature perturbations within a poisoning
//! budget that shift the whole population (train and test alike, so both
//! come from the same shifted distribution), plus the poisoned
//! generalization gap and the constants pipeline on the shifted population.

use serde::{Deserialize, Serialize};

use crate::adversary::{self, AdversaryConfig, NormP};
use crate::constants::{self, ConstantsReport, EstimationPlan};
use crate::data::{FinitePopulation, LabeledExample};
use crate::error::{Error, Result};
use crate::model::{LossModel, Model};
use crate::stability;
use crate::trainer::{self, Schedule, TrainConfig};
use crate::vecmath;

/// The five attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PoisonAttack {
    /// Error-minimizing noise: min-min alternation between a crafting model
    /// and per-point loss-minimizing perturbations.
    Em,
    /// Robust error-minimizing noise: the crafting model trains
    /// adversarially at `rem_rho` and the noise minimizes the adversarial
    /// loss at that protection level.
    Rem,
    /// Class-targeted adversarial perturbation toward `(y + 1) mod K` under
    /// a naturally trained crafting model.
    Adv,
    /// Hypocritical perturbation: loss-minimizing noise at the true label
    /// under an adversarially trained crafting model.
    Hyp,
    /// One uniform perturbation per class, applied identically within the
    /// class.
    Ran,
}

/// Poisoning configuration. Defaults follow the desk-scale analogs: five
/// alternation rounds of (victim epochs, noise PGD-10) for EM/REM, PGD-100
/// for ADV/HYP, crafting and protection budgets a quarter of the poisoning
/// budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonConfig {
    pub attack: PoisonAttack,
    /// Poisoning budget in feature units.
    pub budget: f64,
    pub norm: NormP,
    pub seed: u64,
    /// EM/REM alternation rounds.
    pub rounds: usize,
    /// Full passes the crafting model trains per alternation round.
    pub victim_epochs: usize,
    /// PGD steps of the per-point noise optimization.
    pub inner_pgd_steps: usize,
    /// REM protection budget rho_a.
    pub rem_rho: f64,
    /// HYP crafting budget (adversarial training budget of the crafter).
    pub hyp_craft_budget: f64,
    /// HYP crafting passes over the population.
    pub hyp_craft_epochs: usize,
    /// Crafting-model SGD step size.
    pub craft_lr: f64,
}

impl PoisonConfig {
    pub fn new(attack: PoisonAttack, budget: f64, norm: NormP, seed: u64) -> Self {
        let inner_pgd_steps = match attack {
            PoisonAttack::Adv | PoisonAttack::Hyp => 100,
            _ => 10,
        };
        Self {
            attack,
            budget,
            norm,
            seed,
            rounds: 5,
            victim_epochs: 2,
            inner_pgd_steps,
            rem_rho: budget / 4.0,
            hyp_craft_budget: budget / 4.0,
            hyp_craft_epochs: 10,
            craft_lr: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget < 0.0 || !self.budget.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "poison budget {} must be >= 0",
                self.budget
            )));
        }
        if self.rem_rho < 0.0 || self.hyp_craft_budget < 0.0 {
            return Err(Error::InvalidConfig(
                "per-attack budgets must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Stable hash of the configuration, used to tag derived artifacts.
    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("poison config serializes");
        crate::rng::content_hash(json.as_bytes())
    }
}

/// One PGD descent on the input against `label`: minimizes the crafting
/// loss inside the budget ball around `center`, tracking the best iterate.
#[allow(clippy::too_many_arguments)]
fn perturb_minimize<M: LossModel>(
    model: &M,
    theta: &[f64],
    center: &[f64],
    start: &[f64],
    label: usize,
    budget: f64,
    norm: NormP,
    steps: usize,
    inner_adv: Option<&AdversaryConfig>,
) -> Result<Vec<f64>> {
    let step_size = budget / 4.0;
    let mut x = start.to_vec();
    let mut probe = LabeledExample::new(x.clone(), label);
    let eval = |model: &M, theta: &[f64], probe: &LabeledExample| -> Result<f64> {
        match inner_adv {
            Some(adv) => adversary::adv_loss(model, theta, probe, adv),
            None => Ok(model.loss(theta, probe)),
        }
    };
    let mut best = x.clone();
    let mut best_loss = eval(model, theta, &probe)?;
    for _ in 0..steps {
        probe.features.clone_from(&x);
        let g = match inner_adv {
            Some(adv) => {
                // Danskin step: gradient at the inner maximizer.
                let worst = adversary::attack(model, theta, &probe, adv)?;
                model.grad_input(theta, &worst)
            }
            None => model.grad_input(theta, &probe),
        };
        match norm {
            NormP::LInf => {
                for (xi, gi) in x.iter_mut().zip(&g) {
                    *xi -= step_size * vecmath::sign(*gi);
                }
            }
            NormP::L2 => {
                let n = vecmath::norm2(&g);
                if n == 0.0 {
                    break;
                }
                vecmath::axpy(-step_size / n, &g, &mut x);
            }
        }
        project_ball(&mut x, center, budget, norm);
        vecmath::clamp_box(&mut x, 0.0, 1.0);
        probe.features.clone_from(&x);
        let l = eval(model, theta, &probe)?;
        if l < best_loss {
            best_loss = l;
            best.clone_from(&x);
        }
    }
    Ok(best)
}

fn project_ball(x: &mut [f64], center: &[f64], eps: f64, norm: NormP) {
    match norm {
        NormP::LInf => {
            for (xi, &ci) in x.iter_mut().zip(center) {
                *xi = xi.clamp(ci - eps, ci + eps);
            }
        }
        NormP::L2 => {
            let d = vecmath::dist2(x, center);
            if d > eps {
                let s = eps / d;
                for (xi, &ci) in x.iter_mut().zip(center) {
                    *xi = ci + (*xi - ci) * s;
                }
            }
        }
    }
}

/// Train the crafting model for `epochs` full passes over `points`.
#[allow(clippy::too_many_arguments)]
fn craft_train(
    craft: &Model,
    theta: Vec<f64>,
    points: &[LabeledExample],
    epochs: usize,
    lr: f64,
    adv_eps: f64,
    norm: NormP,
    perm_seed: u64,
) -> Result<Vec<f64>> {
    if epochs == 0 {
        return Ok(theta);
    }
    let n = points.len();
    let cfg = TrainConfig {
        steps: n * epochs,
        passes: epochs,
        schedule: Schedule::Constant(lr),
        init: theta,
        perm_seed,
        reshuffle_each_pass: false,
    };
    let adv = if adv_eps > 0.0 {
        AdversaryConfig::pgd(adv_eps, norm, 10)
    } else {
        AdversaryConfig::pgd(0.0, norm, 1)
    };
    let traj = trainer::sgd_adv_train(craft, points, &cfg, &adv)?;
    Ok(traj.output().to_vec())
}

/// Apply the attack to the whole population: same labels and weights,
/// perturbed features, every point inside the budget ball and the unit box.
pub fn poison(
    population: &FinitePopulation,
    cfg: &PoisonConfig,
    craft_model: &Model,
) -> Result<FinitePopulation> {
    cfg.validate()?;
    if cfg.budget == 0.0 {
        return Ok(population.clone());
    }
    if craft_model.input_dim() != population.dim() {
        return Err(Error::InvalidConfig(
            "crafting model input dimension does not match the population".into(),
        ));
    }
    if craft_model.num_classes() < population.num_classes() {
        return Err(Error::InvalidConfig(
            "crafting model has fewer classes than the population".into(),
        ));
    }
    let poisoned = match cfg.attack {
        PoisonAttack::Ran => poison_ran(population, cfg)?,
        PoisonAttack::Adv => poison_adv(population, cfg, craft_model)?,
        PoisonAttack::Hyp => poison_hyp(population, cfg, craft_model)?,
        PoisonAttack::Em => poison_em_rem(population, cfg, craft_model, false)?,
        PoisonAttack::Rem => poison_em_rem(population, cfg, craft_model, true)?,
    };
    debug_assert!(check_budget(population, &poisoned, cfg).is_ok());
    Ok(poisoned)
}

/// Verify labels, weights, the budget, and the box on a poisoned population.
pub fn check_budget(
    original: &FinitePopulation,
    poisoned: &FinitePopulation,
    cfg: &PoisonConfig,
) -> Result<()> {
    if original.len() != poisoned.len() {
        return Err(Error::Contract("poison changed the population size".into()));
    }
    for i in 0..original.len() {
        let a = original.point(i);
        let b = poisoned.point(i);
        if a.label != b.label {
            return Err(Error::Contract(format!(
                "poison changed label of point {i}"
            )));
        }
        if original.weight(i) != poisoned.weight(i) {
            return Err(Error::Contract(format!(
                "poison changed weight of point {i}"
            )));
        }
        let dist = match cfg.norm {
            NormP::LInf => vecmath::dist_inf(&a.features, &b.features),
            NormP::L2 => vecmath::dist2(&a.features, &b.features),
        };
        if dist > cfg.budget + 1e-12 {
            return Err(Error::Contract(format!(
                "point {i} moved {dist} > budget {}",
                cfg.budget
            )));
        }
        if b.features.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::Contract(format!("point {i} left the unit box")));
        }
    }
    Ok(())
}

fn poison_ran(population: &FinitePopulation, cfg: &PoisonConfig) -> Result<FinitePopulation> {
    use rand::Rng;
    let d = population.dim();
    let mut rng = crate::rng::substream(cfg.seed, "ran-classwise");
    let perturbations: Vec<Vec<f64>> = (0..population.num_classes())
        .map(|_| match cfg.norm {
            NormP::LInf => (0..d)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * cfg.budget)
                .collect(),
            NormP::L2 => {
                use rand_distr::{Distribution, StandardNormal};
                let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = vecmath::norm2(&v);
                let u: f64 = rng.random();
                let scale = if n == 0.0 {
                    0.0
                } else {
                    cfg.budget * u.powf(1.0 / d as f64) / n
                };
                vecmath::scale(scale, &mut v);
                v
            }
        })
        .collect();
    population.map_points(|_, z| {
        let mut features = z.features.clone();
        vecmath::axpy(1.0, &perturbations[z.label], &mut features);
        vecmath::clamp_box(&mut features, 0.0, 1.0);
        LabeledExample::new(features, z.label)
    })
}

fn poison_adv(
    population: &FinitePopulation,
    cfg: &PoisonConfig,
    craft_model: &Model,
) -> Result<FinitePopulation> {
    // Naturally trained crafter on the full population.
    let theta0 = craft_model.init_theta(cfg.seed);
    let theta = craft_train(
        craft_model,
        theta0,
        population.points(),
        cfg.hyp_craft_epochs,
        cfg.craft_lr,
        0.0,
        cfg.norm,
        cfg.seed ^ 0xadf,
    )?;
    let classes = population.num_classes();
    let points: Vec<LabeledExample> = population
        .points()
        .iter()
        .map(|z| {
            let target = (z.label + 1) % classes;
            let features = perturb_minimize(
                craft_model,
                &theta,
                &z.features,
                &z.features,
                target,
                cfg.budget,
                cfg.norm,
                cfg.inner_pgd_steps,
                None,
            )?;
            Ok(LabeledExample::new(features, z.label))
        })
        .collect::<Result<_>>()?;
    FinitePopulation::new(points, population.weights().to_vec())
}

fn poison_hyp(
    population: &FinitePopulation,
    cfg: &PoisonConfig,
    craft_model: &Model,
) -> Result<FinitePopulation> {
    // Adversarially trained crafter at the crafting budget.
    let theta0 = craft_model.init_theta(cfg.seed);
    let theta = craft_train(
        craft_model,
        theta0,
        population.points(),
        cfg.hyp_craft_epochs,
        cfg.craft_lr,
        cfg.hyp_craft_budget,
        cfg.norm,
        cfg.seed ^ 0x447,
    )?;
    let points: Vec<LabeledExample> = population
        .points()
        .iter()
        .map(|z| {
            let features = perturb_minimize(
                craft_model,
                &theta,
                &z.features,
                &z.features,
                z.label,
                cfg.budget,
                cfg.norm,
                cfg.inner_pgd_steps,
                None,
            )?;
            Ok(LabeledExample::new(features, z.label))
        })
        .collect::<Result<_>>()?;
    FinitePopulation::new(points, population.weights().to_vec())
}

fn poison_em_rem(
    population: &FinitePopulation,
    cfg: &PoisonConfig,
    craft_model: &Model,
    robust: bool,
) -> Result<FinitePopulation> {
    let mut theta = craft_model.init_theta(cfg.seed);
    let mut current: Vec<LabeledExample> = population.points().to_vec();
    let inner_adv = if robust {
        Some(AdversaryConfig::pgd(cfg.rem_rho, cfg.norm, 10))
    } else {
        None
    };
    for round in 0..cfg.rounds {
        // Crafting-model step on the current noised points (adversarial at
        // rho_a for the robust variant).
        theta = craft_train(
            craft_model,
            theta,
            &current,
            cfg.victim_epochs,
            cfg.craft_lr,
            if robust { cfg.rem_rho } else { 0.0 },
            cfg.norm,
            cfg.seed ^ (0xe0 + round as u64),
        )?;
        // Noise step: per point, continue the minimization from the current
        // perturbed position inside the ball around the clean point.
        for (i, z) in population.points().iter().enumerate() {
            let features = perturb_minimize(
                craft_model,
                &theta,
                &z.features,
                &current[i].features,
                z.label,
                cfg.budget,
                cfg.norm,
                cfg.inner_pgd_steps,
                inner_adv.as_ref(),
            )?;
            current[i] = LabeledExample::new(features, z.label);
        }
    }
    FinitePopulation::new(current, population.weights().to_vec())
}

/// Generalization gap measured entirely on the poisoned population: the
/// victim trains on samples of `poisoned` and is evaluated against it.
#[allow(clippy::too_many_arguments)]
pub fn poisoned_gen_gap<M: LossModel>(
    model: &M,
    poisoned: &FinitePopulation,
    n: usize,
    train: &TrainConfig,
    adv: &AdversaryConfig,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    stability::gen_gap(model, poisoned, n, train, adv, trials, seed)
}

/// The full constants pipeline on the poisoned population, tagged with the
/// poison config hash.
pub fn poisoned_constants<M: LossModel>(
    model: &M,
    poisoned: &FinitePopulation,
    theta1: &[f64],
    adv: &AdversaryConfig,
    theta_probes: &[Vec<f64>],
    plan: &EstimationPlan,
    poison_cfg: &PoisonConfig,
) -> Result<ConstantsReport> {
    let mut report =
        constants::estimate_constants(model, poisoned, adv, theta1, theta_probes, plan)?;
    report.poison_tag = Some(format!("{:016x}", poison_cfg.config_hash()));
    Ok(report)
}
