//! Inner maximization: worst-case perturbations inside an L_p ball
//! intersected with the unit box, the adversarial loss, and its gradient
//! at the maximizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::model::LossModel;
use crate::vecmath;

/// Norm constraining the perturbation ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormP {
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

/// Inner-maximization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMethod {
    /// Exact coordinatewise maximizer; linear binary cross-entropy only.
    ClosedFormLinear,
    /// Projected gradient ascent from the clean point.
    Pgd { steps: usize, step_size: f64 },
    /// Exhaustive search over an axis-aligned grid (low dimension only).
    GridOracle { resolution: f64 },
}

/// Adversary settings shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    /// Perturbation budget in feature units.
    pub eps: f64,
    pub norm: NormP,
    pub method: AttackMethod,
    /// When set, PGD starts from a seeded uniform draw in the ball instead
    /// of the clean point. Off by default: deterministic starts keep
    /// stability experiments replayable.
    pub random_start_seed: Option<u64>,
}

impl AdversaryConfig {
    /// PGD with the usual step size of a quarter budget.
    pub fn pgd(eps: f64, norm: NormP, steps: usize) -> Self {
        Self {
            eps,
            norm,
            method: AttackMethod::Pgd {
                steps,
                step_size: eps / 4.0,
            },
            random_start_seed: None,
        }
    }

    pub fn grid(eps: f64, norm: NormP, resolution: f64) -> Self {
        Self {
            eps,
            norm,
            method: AttackMethod::GridOracle { resolution },
            random_start_seed: None,
        }
    }

    pub fn closed_form(eps: f64) -> Self {
        Self {
            eps,
            norm: NormP::LInf,
            method: AttackMethod::ClosedFormLinear,
            random_start_seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps < 0.0 || !self.eps.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps = {} must be >= 0",
                self.eps
            )));
        }
        match self.method {
            AttackMethod::Pgd {
                steps: _,
                step_size,
            } => {
                if step_size <= 0.0 && self.eps > 0.0 {
                    return Err(Error::InvalidConfig("pgd step_size must be > 0".into()));
                }
            }
            AttackMethod::GridOracle { resolution } => {
                if resolution <= 0.0 {
                    return Err(Error::InvalidConfig("grid resolution must be > 0".into()));
                }
            }
            AttackMethod::ClosedFormLinear => {
                if self.norm != NormP::LInf {
                    return Err(Error::UnsupportedMethod(
                        "closed-form-linear requires the L-inf norm".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Exhaustive grid search outcome, with a tie diagnostic: the number of
/// grid points whose loss is within 1e-9 of the maximum. Ties flag inputs
/// where the gradient of the max-function is ambiguous.
#[derive(Debug, Clone)]
pub struct GridMaxReport {
    pub point: LabeledExample,
    pub loss: f64,
    pub ties: usize,
    pub evaluated: usize,
}

/// Worst-case point `z'` in the ball around `z`: same label, budget and box
/// feasible, and (for the search methods) loss at least the clean loss.
pub fn attack<M: LossModel>(
    model: &M,
    theta: &[f64],
    z: &LabeledExample,
    cfg: &AdversaryConfig,
) -> Result<LabeledExample> {
    attack_tagged(model, theta, z, cfg, 0)
}

/// `attack` with a caller-supplied tag that seeds the optional random start;
/// trainers pass the step index so trajectories replay exactly.
pub fn attack_tagged<M: LossModel>(
    model: &M,
    theta: &[f64],
    z: &LabeledExample,
    cfg: &AdversaryConfig,
    tag: u64,
) -> Result<LabeledExample> {
    cfg.validate()?;
    if cfg.eps == 0.0 {
        return Ok(z.clone());
    }
    match cfg.method {
        AttackMethod::ClosedFormLinear => {
            model
                .closed_form_linf_max(theta, z, cfg.eps)
                .ok_or_else(|| {
                    Error::UnsupportedMethod(
                        "closed-form-linear needs a linear binary cross-entropy model".into(),
                    )
                })
        }
        AttackMethod::Pgd { steps, step_size } => {
            Ok(pgd(model, theta, z, cfg, steps, step_size, tag))
        }
        AttackMethod::GridOracle { resolution } => {
            Ok(grid_max(model, theta, z, cfg, resolution)?.point)
        }
    }
}

/// Adversarial loss `h(theta, z)`: the loss at the attack output.
pub fn adv_loss<M: LossModel>(
    model: &M,
    theta: &[f64],
    z: &LabeledExample,
    cfg: &AdversaryConfig,
) -> Result<f64> {
    let zp = attack(model, theta, z, cfg)?;
    Ok(model.loss(theta, &zp))
}

/// Gradient of the adversarial loss in theta, taken at the attack maximizer.
///
/// This is the Danskin surrogate; when the inner maximizer is not unique it
/// is one subgradient choice, and `grid_max` reports a tie diagnostic rather
/// than pretending the gradient is well defined there.
pub fn adv_grad<M: LossModel>(
    model: &M,
    theta: &[f64],
    z: &LabeledExample,
    cfg: &AdversaryConfig,
) -> Result<Vec<f64>> {
    adv_grad_tagged(model, theta, z, cfg, 0)
}

pub fn adv_grad_tagged<M: LossModel>(
    model: &M,
    theta: &[f64],
    z: &LabeledExample,
    cfg: &AdversaryConfig,
    tag: u64,
) -> Result<Vec<f64>> {
    let zp = attack_tagged(model, theta, z, cfg, tag)?;
    Ok(model.grad_theta(theta, &zp))
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

fn pgd<M: LossModel>(
    model: &M,
    theta: &[f64],
    z: &LabeledExample,
    cfg: &AdversaryConfig,
    steps: usize,
    step_size: f64,
    tag: u64,
) -> LabeledExample {
    let mut x = z.features.clone();
    if let Some(seed) = cfg.random_start_seed {
        let mut rng = crate::rng::substream_indexed(seed, "pgd-start", tag);
        for xi in x.iter_mut() {
            *xi += (rng.random::<f64>() * 2.0 - 1.0) * cfg.eps;
        }
        project_ball(&mut x, &z.features, cfg.eps, cfg.norm);
        vecmath::clamp_box(&mut x, 0.0, 1.0);
    }

    // Track the best iterate; ascent with projection is not monotone, and
    // the clean point itself is always feasible.
    let mut best = z.features.clone();
    let mut best_loss = model.loss(theta, z);
    let mut probe = LabeledExample::new(x.clone(), z.label);
    for _ in 0..steps {
        probe.features.clone_from(&x);
        let g = model.grad_input(theta, &probe);
        match cfg.norm {
            NormP::LInf => {
                for (xi, gi) in x.iter_mut().zip(&g) {
                    *xi += step_size * vecmath::sign(*gi);
                }
            }
            NormP::L2 => {
                let n = vecmath::norm2(&g);
                if n == 0.0 {
                    break;
                }
                vecmath::axpy(step_size / n, &g, &mut x);
            }
        }
        project_ball(&mut x, &z.features, cfg.eps, cfg.norm);
        vecmath::clamp_box(&mut x, 0.0, 1.0);
        probe.features.clone_from(&x);
        let l = model.loss(theta, &probe);
        if l > best_loss {
            best_loss = l;
            best.clone_from(&x);
        }
    }
    LabeledExample::new(best, z.label)
}

/// Exhaustive maximization over the axis grid; the L2 ball filters the
/// L-inf grid so a single generator serves both norms.
pub fn grid_max<M: LossModel>(
    model: &M,
    theta: &[f64],
    z: &LabeledExample,
    cfg: &AdversaryConfig,
    resolution: f64,
) -> Result<GridMaxReport> {
    let d = z.features.len();
    let eps = cfg.eps;
    // Candidate coordinates: grid offsets inside the per-coordinate feasible
    // interval, plus the interval endpoints so box-clipped extremes are probed.
    let mut coords: Vec<Vec<f64>> = Vec::with_capacity(d);
    let k_max = (eps / resolution + 1e-9).floor() as i64;
    for j in 0..d {
        let lo = (z.features[j] - eps).max(0.0);
        let hi = (z.features[j] + eps).min(1.0);
        let mut cs = Vec::with_capacity(2 * k_max as usize + 3);
        cs.push(lo);
        for k in -k_max..=k_max {
            let x = z.features[j] + k as f64 * resolution;
            if x > lo + 1e-15 && x < hi - 1e-15 {
                cs.push(x);
            }
        }
        cs.push(hi);
        cs.dedup();
        coords.push(cs);
    }
    let count: u128 = coords.iter().map(|c| c.len() as u128).product();
    if count > 10_000_000 {
        return Err(Error::InvalidConfig(format!(
            "grid oracle would evaluate {count} points; use fewer dimensions or a coarser grid"
        )));
    }

    let mut idx = vec![0usize; d];
    let mut probe = LabeledExample::new(z.features.clone(), z.label);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut losses: Vec<f64> = Vec::new();
    let mut evaluated = 0usize;
    'outer: loop {
        for j in 0..d {
            probe.features[j] = coords[j][idx[j]];
        }
        let feasible = match cfg.norm {
            NormP::LInf => true, // by construction of the intervals
            NormP::L2 => vecmath::dist2(&probe.features, &z.features) <= eps + 1e-12,
        };
        if feasible {
            let l = model.loss(theta, &probe);
            evaluated += 1;
            losses.push(l);
            match &best {
                Some((_, bl)) if *bl >= l => {}
                _ => best = Some((probe.features.clone(), l)),
            }
        }
        // Odometer increment over the candidate grid.
        for j in 0..d {
            idx[j] += 1;
            if idx[j] < coords[j].len() {
                continue 'outer;
            }
            idx[j] = 0;
        }
        break;
    }
    let (point, loss) =
        best.ok_or_else(|| Error::InvalidConfig("grid oracle found no feasible point".into()))?;
    let ties = losses.iter().filter(|&&l| (loss - l).abs() <= 1e-9).count();
    Ok(GridMaxReport {
        point: LabeledExample::new(point, z.label),
        loss,
        ties,
        evaluated,
    })
}
