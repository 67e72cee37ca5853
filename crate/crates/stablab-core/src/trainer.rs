//! SGD without replacement on the adversarial empirical risk, with full
//! trajectory recording and paired replace-one runs.
//!
//! The update is `theta_{t+1} = theta_t - alpha_t * g_t` where `g_t` is the
//! loss gradient at the inner maximizer of the step's example. One
//! permutation of the sample is drawn per run and reused across passes;
//! per-pass reshuffling is available but non-default.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read, Write};

use crate::adversary::{self, AdversaryConfig};
use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::model::LossModel;
use crate::vecmath;

/// Step-size schedule; `Inverse(c)` gives `alpha_t = c / t` with `t` 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant(f64),
    Inverse(f64),
}

impl Schedule {
    pub fn alpha(&self, t: usize) -> f64 {
        debug_assert!(t >= 1);
        match *self {
            Schedule::Constant(a) => a,
            Schedule::Inverse(c) => c / t as f64,
        }
    }

    /// The step sizes `alpha_1 .. alpha_T`.
    pub fn series(&self, steps: usize) -> Vec<f64> {
        (1..=steps).map(|t| self.alpha(t)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Schedule::Constant(a) => a,
            Schedule::Inverse(c) => c,
        };
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "schedule parameter {v} must be positive"
            )));
        }
        Ok(())
    }
}

/// Training configuration for one SGD run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of update steps T; at most `n * passes`.
    pub steps: usize,
    pub passes: usize,
    pub schedule: Schedule,
    /// Initialization point `theta_1`.
    pub init: Vec<f64>,
    pub perm_seed: u64,
    /// Draw a fresh permutation each pass instead of reusing the first.
    /// Non-default; the fixed-order reading matches the analysis.
    #[serde(default)]
    pub reshuffle_each_pass: bool,
}

impl TrainConfig {
    pub fn single_pass(steps: usize, schedule: Schedule, init: Vec<f64>, perm_seed: u64) -> Self {
        Self {
            steps,
            passes: 1,
            schedule,
            init,
            perm_seed,
            reshuffle_each_pass: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::EmptyDataset("training sample is empty".into()));
        }
        if self.passes == 0 {
            return Err(Error::InvalidConfig("passes must be >= 1".into()));
        }
        self.schedule.validate()?;
        if self.steps > n * self.passes {
            return Err(Error::InvalidConfig(format!(
                "step budget {} exceeds n * passes = {}",
                self.steps,
                n * self.passes
            )));
        }
        Ok(())
    }
}

/// Per-step record sufficient to replay the update exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Sample index visited at this step.
    pub index: usize,
    /// Inner maximizer used for the gradient.
    pub adv_point: LabeledExample,
    pub grad_norm: f64,
    pub alpha: f64,
}

/// Full record of one SGD run: every parameter vector, the permutation(s),
/// and the per-step attack outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `theta_1 .. theta_{T+1}`.
    pub params: Vec<Vec<f64>>,
    /// One permutation per pass actually used; index 0 is the permutation
    /// reused across passes in the default fixed-order mode.
    pub permutations: Vec<Vec<usize>>,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    /// `A(S)`: the final parameter vector.
    pub fn output(&self) -> &[f64] {
        self.params.last().expect("trajectory has theta_1")
    }

    /// The permutation of the first pass.
    pub fn permutation(&self) -> &[usize] {
        &self.permutations[0]
    }

    /// Number of update steps T.
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Re-run the recorded visit order through the trainer; the result is
    /// bit-identical to the original run.
    pub fn replay<M: LossModel>(
        &self,
        model: &M,
        sample: &[LabeledExample],
        cfg: &TrainConfig,
        adv: &AdversaryConfig,
    ) -> Result<Trajectory> {
        train_with_permutations(model, sample, cfg, adv, self.permutations.clone())
    }

    /// Line-oriented step record: `step,index,alpha,grad_norm`.
    pub fn write_record<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,index,alpha,grad_norm")?;
        for (t, s) in self.steps.iter().enumerate() {
            writeln!(out, "{},{},{},{}", t + 1, s.index, s.alpha, s.grad_norm)?;
        }
        Ok(())
    }

    /// Binary parameter snapshots every `stride` steps (always including
    /// `theta_1` and the output). Layout: magic, dim, then little-endian
    /// f64 rows prefixed by their step index.
    pub fn write_snapshots<W: Write>(&self, mut out: W, stride: usize) -> Result<()> {
        if stride == 0 {
            return Err(Error::InvalidConfig("snapshot stride must be >= 1".into()));
        }
        let k = self.params[0].len() as u64;
        out.write_all(b"STBLSNAP")?;
        out.write_all(&k.to_le_bytes())?;
        let picks: Vec<usize> = (0..self.params.len())
            .filter(|&t| t % stride == 0 || t + 1 == self.params.len())
            .collect();
        out.write_all(&(picks.len() as u64).to_le_bytes())?;
        for t in picks {
            out.write_all(&(t as u64).to_le_bytes())?;
            for &x in &self.params[t] {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Read back `(step, theta)` pairs written by `write_snapshots`.
    pub fn read_snapshots<R: Read>(mut input: R) -> Result<Vec<(usize, Vec<f64>)>> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != b"STBLSNAP" {
            return Err(Error::Parse("bad snapshot magic".into()));
        }
        let mut u = [0u8; 8];
        input.read_exact(&mut u)?;
        let k = u64::from_le_bytes(u) as usize;
        input.read_exact(&mut u)?;
        let count = u64::from_le_bytes(u) as usize;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            input.read_exact(&mut u)?;
            let step = u64::from_le_bytes(u) as usize;
            let mut theta = vec![0.0; k];
            for x in theta.iter_mut() {
                input.read_exact(&mut u)?;
                *x = f64::from_le_bytes(u);
            }
            rows.push((step, theta));
        }
        Ok(rows)
    }

    /// Parse a record file written by `write_record`.
    pub fn read_record<R: Read>(input: R) -> Result<Vec<(usize, usize, f64, f64)>> {
        let reader = std::io::BufReader::new(input);
        let mut rows = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                continue; // header
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Parse(format!("bad record line: {line}")));
            }
            let parse_err = |f: &str| Error::Parse(format!("bad field {f} in: {line}"));
            rows.push((
                parts[0].parse().map_err(|_| parse_err("step"))?,
                parts[1].parse().map_err(|_| parse_err("index"))?,
                parts[2].parse().map_err(|_| parse_err("alpha"))?,
                parts[3].parse().map_err(|_| parse_err("grad_norm"))?,
            ));
        }
        Ok(rows)
    }
}

/// Visit order of length `n * passes`: one permutation drawn from the seed,
/// repeated in the same fixed order each pass.
pub fn permute(perm_seed: u64, n: usize, passes: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyDataset("cannot permute an empty sample".into()));
    }
    let perm = draw_permutation(perm_seed, n, 0);
    let mut order = Vec::with_capacity(n * passes);
    for _ in 0..passes {
        order.extend_from_slice(&perm);
    }
    Ok(order)
}

fn draw_permutation(perm_seed: u64, n: usize, pass: u64) -> Vec<usize> {
    let mut rng = crate::rng::substream_indexed(perm_seed, "permutation", pass);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Train on `sample`, deriving permutations from the config seed.
pub fn sgd_adv_train<M: LossModel>(
    model: &M,
    sample: &[LabeledExample],
    cfg: &TrainConfig,
    adv: &AdversaryConfig,
) -> Result<Trajectory> {
    cfg.validate(sample.len())?;
    adv.validate()?;
    let n = sample.len();
    let passes_needed = cfg.steps.div_ceil(n).max(1);
    let permutations: Vec<Vec<usize>> = if cfg.reshuffle_each_pass {
        (0..passes_needed)
            .map(|p| draw_permutation(cfg.perm_seed, n, p as u64))
            .collect()
    } else {
        vec![draw_permutation(cfg.perm_seed, n, 0)]
    };
    train_with_permutations(model, sample, cfg, adv, permutations)
}

/// Train with an explicitly supplied permutation instead of drawing one
/// from the seed; exact-enumeration callers iterate permutations themselves.
pub fn sgd_adv_train_with_permutation<M: LossModel>(
    model: &M,
    sample: &[LabeledExample],
    cfg: &TrainConfig,
    adv: &AdversaryConfig,
    permutation: Vec<usize>,
) -> Result<Trajectory> {
    adv.validate()?;
    train_with_permutations(model, sample, cfg, adv, vec![permutation])
}

fn train_with_permutations<M: LossModel>(
    model: &M,
    sample: &[LabeledExample],
    cfg: &TrainConfig,
    adv: &AdversaryConfig,
    permutations: Vec<Vec<usize>>,
) -> Result<Trajectory> {
    cfg.validate(sample.len())?;
    let n = sample.len();
    assert_eq!(
        cfg.init.len(),
        model.param_dim(),
        "theta_1 has length {}, model expects {}",
        cfg.init.len(),
        model.param_dim()
    );
    let mut params = Vec::with_capacity(cfg.steps + 1);
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut theta = cfg.init.clone();
    params.push(theta.clone());
    for t in 1..=cfg.steps {
        let pass = (t - 1) / n;
        let pos = (t - 1) % n;
        let perm = if cfg.reshuffle_each_pass {
            &permutations[pass]
        } else {
            &permutations[0]
        };
        let index = perm[pos];
        let adv_point = adversary::attack_tagged(model, &theta, &sample[index], adv, t as u64)?;
        let grad = model.grad_theta(&theta, &adv_point);
        let alpha = cfg.schedule.alpha(t);
        vecmath::axpy(-alpha, &grad, &mut theta);
        steps.push(StepRecord {
            index,
            adv_point,
            grad_norm: vecmath::norm2(&grad),
            alpha,
        });
        params.push(theta.clone());
    }
    Ok(Trajectory {
        params,
        permutations,
        steps,
    })
}

/// Train on `S` and on `S` with `sample[i]` replaced by `replacement`,
/// sharing the permutation and adversary; returns both trajectories and the
/// divergence series `delta_1 .. delta_{T+1}` with
/// `delta_t = ||theta_t - theta'_t||`.
pub fn paired_trajectories<M: LossModel>(
    model: &M,
    sample: &[LabeledExample],
    i: usize,
    replacement: &LabeledExample,
    cfg: &TrainConfig,
    adv: &AdversaryConfig,
) -> Result<(Trajectory, Trajectory, Vec<f64>)> {
    if i >= sample.len() {
        return Err(Error::InvalidConfig(format!(
            "replacement index {i} out of range for n = {}",
            sample.len()
        )));
    }
    let base = sgd_adv_train(model, sample, cfg, adv)?;
    let mut replaced: Vec<LabeledExample> = sample.to_vec();
    replaced[i] = replacement.clone();
    let twin = train_with_permutations(model, &replaced, cfg, adv, base.permutations.clone())?;
    let delta = base
        .params
        .iter()
        .zip(&twin.params)
        .map(|(a, b)| vecmath::dist2(a, b))
        .collect();
    Ok((base, twin, delta))
}
