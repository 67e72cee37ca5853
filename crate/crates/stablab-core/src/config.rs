//! Flat key-value experiment configuration with dotted namespaces.
//!
//! The format is one `key = value` per line, `#` comments, UTF-8; it is
//! diff-friendly and parses with no grammar beyond "split at the first
//! equals sign". A config is self-contained: re-running from the
//! serialized text reproduces every artifact byte for byte, and every
//! random draw derives from `seed` via named sub-streams.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::adversary::{AdversaryConfig, AttackMethod, NormP};
use crate::error::{Error, Result};
use crate::model::{Activation, LossKind, Model, ModelKind, ModelSpec};
use crate::poison::{PoisonAttack, PoisonConfig};
use crate::synth::DatasetSpec;
use crate::trainer::Schedule;

/// Stability measurement selector for the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityRun {
    Off,
    Exact,
    MonteCarlo,
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: String,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub adversary: AdversaryConfig,
    /// Sample size n drawn per training run.
    pub train_n: usize,
    pub train_steps: usize,
    pub train_passes: usize,
    pub schedule: Schedule,
    /// Inverse-schedule coefficient consumed by the exponent-form bounds.
    pub bounds_c: f64,
    /// Loss upper bound B; 0 means "derive from observed losses".
    pub bounds_b: f64,
    pub const_ball_radius: f64,
    pub const_probes: usize,
    pub const_power_iters: usize,
    pub const_opt_restarts: usize,
    pub const_opt_steps: usize,
    pub const_opt_step: f64,
    pub stability: StabilityRun,
    pub stability_trials: usize,
    pub stability_n: usize,
    pub stability_cap: u128,
    pub gap_trials: usize,
    /// Budgets for the gap / bound sweep; the adversary's own eps is used
    /// when empty.
    pub eps_sweep: Vec<f64>,
    pub poison: Option<PoisonSection>,
}

/// Optional poisoning section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonSection {
    pub config: PoisonConfig,
    pub craft_widths: Vec<usize>,
    pub craft_activation: Activation,
}

impl ExperimentConfig {
    /// Parse the flat key-value text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::Parse(format!(
                    "line {}: expected key = value",
                    lineno + 1
                )));
            };
            let key = line[..eq].trim().to_string();
            let value = line[eq + 1..].trim().to_string();
            if kv.insert(key.clone(), value).is_some() {
                return Err(Error::Parse(format!("duplicate key {key}")));
            }
        }
        Self::from_map(kv)
    }

    fn from_map(mut kv: BTreeMap<String, String>) -> Result<Self> {
        fn take(kv: &mut BTreeMap<String, String>, key: &str) -> Option<String> {
            kv.remove(key)
        }
        fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Parse(format!("bad value for {key}: {v}")))
        }
        fn req(kv: &mut BTreeMap<String, String>, key: &str) -> Result<String> {
            take(kv, key).ok_or_else(|| Error::Parse(format!("missing key {key}")))
        }
        fn num<T: std::str::FromStr>(kv: &mut BTreeMap<String, String>, key: &str) -> Result<T> {
            let v = req(kv, key)?;
            parse_num(key, &v)
        }
        fn num_or<T: std::str::FromStr>(
            kv: &mut BTreeMap<String, String>,
            key: &str,
            default: T,
        ) -> Result<T> {
            match take(kv, key) {
                Some(v) => parse_num(key, &v),
                None => Ok(default),
            }
        }
        fn widths(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',')
                .map(|p| parse_num::<usize>(key, p.trim()))
                .collect()
        }

        let seed: u64 = num(&mut kv, "seed")?;
        let out_dir = take(&mut kv, "out.dir").unwrap_or_else(|| "out".into());

        let dataset = match req(&mut kv, "dataset.kind")?.as_str() {
            "gaussian-mixture" => DatasetSpec::GaussianMixture {
                dim: num(&mut kv, "dataset.dim")?,
                classes: num_or(&mut kv, "dataset.classes", 2)?,
                separation: num(&mut kv, "dataset.separation")?,
                size: num(&mut kv, "dataset.size")?,
                seed,
            },
            "two-moons" => DatasetSpec::TwoMoons {
                size: num(&mut kv, "dataset.size")?,
                noise: num(&mut kv, "dataset.noise")?,
                seed,
            },
            "grid-digits" => DatasetSpec::GridDigits {
                size: num(&mut kv, "dataset.size")?,
                seed,
            },
            other => return Err(Error::Parse(format!("unknown dataset.kind {other}"))),
        };

        let model_kind = match req(&mut kv, "model.kind")?.as_str() {
            "linear-softmax" => ModelKind::LinearSoftmax,
            "mlp" => ModelKind::Mlp,
            other => return Err(Error::Parse(format!("unknown model.kind {other}"))),
        };
        let model_widths = widths("model.widths", &req(&mut kv, "model.widths")?)?;
        let activation = match take(&mut kv, "model.activation").as_deref() {
            None | Some("sigmoid") => Activation::Sigmoid,
            Some("softplus") => Activation::Softplus,
            Some("tanh") => Activation::Tanh,
            Some(other) => return Err(Error::Parse(format!("unknown model.activation {other}"))),
        };
        let loss = match take(&mut kv, "model.loss").as_deref() {
            None | Some("cross-entropy") => LossKind::CrossEntropy,
            Some("mean-squared-error") => LossKind::SquaredError,
            Some(other) => return Err(Error::Parse(format!("unknown model.loss {other}"))),
        };
        let model = ModelSpec {
            kind: model_kind,
            widths: model_widths,
            activation,
            loss,
            seed,
        };

        let eps: f64 = num(&mut kv, "adversary.eps")?;
        let norm = match req(&mut kv, "adversary.norm")?.as_str() {
            "2" => NormP::L2,
            "inf" => NormP::LInf,
            other => return Err(Error::Parse(format!("unknown adversary.norm {other}"))),
        };
        let method = match req(&mut kv, "adversary.method")?.as_str() {
            "pgd" => {
                let steps: usize = num_or(&mut kv, "adversary.pgd_steps", 10)?;
                let step_size: f64 = num_or(&mut kv, "adversary.pgd_step_size", eps / 4.0)?;
                AttackMethod::Pgd { steps, step_size }
            }
            "grid-oracle" => AttackMethod::GridOracle {
                resolution: num(&mut kv, "adversary.grid_res")?,
            },
            "closed-form-linear" => AttackMethod::ClosedFormLinear,
            other => return Err(Error::Parse(format!("unknown adversary.method {other}"))),
        };
        let adversary = AdversaryConfig {
            eps,
            norm,
            method,
            random_start_seed: None,
        };

        let train_n: usize = num(&mut kv, "train.n")?;
        let train_steps: usize = num(&mut kv, "train.T")?;
        let train_passes: usize = num_or(&mut kv, "train.passes", 1)?;
        let schedule = match req(&mut kv, "train.schedule")?.as_str() {
            "constant" => Schedule::Constant(num(&mut kv, "train.alpha")?),
            "inverse" => Schedule::Inverse(num(&mut kv, "train.c")?),
            other => return Err(Error::Parse(format!("unknown train.schedule {other}"))),
        };
        let default_c = match schedule {
            Schedule::Inverse(c) => c,
            Schedule::Constant(a) => a,
        };
        let bounds_c: f64 = num_or(&mut kv, "bounds.c", default_c)?;
        let bounds_b: f64 = num_or(&mut kv, "bounds.B", 0.0)?;

        let const_ball_radius: f64 = num_or(&mut kv, "constants.ball_radius", 0.0)?;
        let const_probes: usize = num_or(&mut kv, "constants.probes", 200)?;
        let const_power_iters: usize = num_or(&mut kv, "constants.power_iters", 60)?;
        let const_opt_restarts: usize = num_or(&mut kv, "constants.opt_restarts", 3)?;
        let const_opt_steps: usize = num_or(&mut kv, "constants.opt_steps", 300)?;
        let const_opt_step: f64 = num_or(&mut kv, "constants.opt_step", 0.5)?;

        let stability = match take(&mut kv, "stability.mode").as_deref() {
            None | Some("off") => StabilityRun::Off,
            Some("exact") => StabilityRun::Exact,
            Some("monte-carlo") => StabilityRun::MonteCarlo,
            Some(other) => return Err(Error::Parse(format!("unknown stability.mode {other}"))),
        };
        let stability_trials: usize = num_or(&mut kv, "stability.trials", 200)?;
        let stability_n: usize = num_or(&mut kv, "stability.n", train_n)?;
        let stability_cap: u128 = num_or(
            &mut kv,
            "stability.cap",
            crate::stability::DEFAULT_EXACT_CAP,
        )?;
        let gap_trials: usize = num_or(&mut kv, "gap.trials", 100)?;
        let eps_sweep: Vec<f64> = match take(&mut kv, "gap.eps_sweep") {
            Some(v) => v
                .split(',')
                .map(|p| parse_num::<f64>("gap.eps_sweep", p.trim()))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };

        let poison = if let Some(attack) = take(&mut kv, "poison.attack") {
            let attack = match attack.as_str() {
                "EM" => PoisonAttack::Em,
                "REM" => PoisonAttack::Rem,
                "ADV" => PoisonAttack::Adv,
                "HYP" => PoisonAttack::Hyp,
                "RAN" => PoisonAttack::Ran,
                other => return Err(Error::Parse(format!("unknown poison.attack {other}"))),
            };
            let budget: f64 = num(&mut kv, "poison.budget")?;
            let mut config = PoisonConfig::new(attack, budget, norm, seed ^ 0x70150);
            config.rounds = num_or(&mut kv, "poison.rounds", config.rounds)?;
            config.victim_epochs = num_or(&mut kv, "poison.victim_epochs", config.victim_epochs)?;
            config.inner_pgd_steps =
                num_or(&mut kv, "poison.inner_pgd_steps", config.inner_pgd_steps)?;
            config.rem_rho = num_or(&mut kv, "poison.rem_rho", config.rem_rho)?;
            config.hyp_craft_budget =
                num_or(&mut kv, "poison.hyp_craft_budget", config.hyp_craft_budget)?;
            config.hyp_craft_epochs =
                num_or(&mut kv, "poison.hyp_craft_epochs", config.hyp_craft_epochs)?;
            config.craft_lr = num_or(&mut kv, "poison.craft_lr", config.craft_lr)?;
            let craft_widths = match take(&mut kv, "poison.craft_widths") {
                Some(v) => widths("poison.craft_widths", &v)?,
                None => Vec::new(),
            };
            let craft_activation = match take(&mut kv, "poison.craft_activation").as_deref() {
                None | Some("sigmoid") => Activation::Sigmoid,
                Some("softplus") => Activation::Softplus,
                Some("tanh") => Activation::Tanh,
                Some(other) => {
                    return Err(Error::Parse(format!(
                        "unknown poison.craft_activation {other}"
                    )))
                }
            };
            Some(PoisonSection {
                config,
                craft_widths,
                craft_activation,
            })
        } else {
            None
        };

        if let Some(key) = kv.keys().next() {
            return Err(Error::Parse(format!("unknown key {key}")));
        }

        let cfg = Self {
            seed,
            out_dir,
            dataset,
            model,
            adversary,
            train_n,
            train_steps,
            train_passes,
            schedule,
            bounds_c,
            bounds_b,
            const_ball_radius,
            const_probes,
            const_power_iters,
            const_opt_restarts,
            const_opt_steps,
            const_opt_step,
            stability,
            stability_trials,
            stability_n,
            stability_cap,
            gap_trials,
            eps_sweep,
            poison,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.adversary.validate()?;
        self.schedule.validate()?;
        if self.train_n == 0 {
            return Err(Error::InvalidConfig("train.n must be >= 1".into()));
        }
        if self.train_steps > self.train_n * self.train_passes {
            return Err(Error::InvalidConfig(
                "train.T exceeds train.n * train.passes".into(),
            ));
        }
        if let Some(p) = &self.poison {
            p.config.validate()?;
        }
        Ok(())
    }

    /// Canonical flat serialization; `parse` of the result reproduces the
    /// config exactly.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("seed", self.seed.to_string());
        push("out.dir", self.out_dir.clone());
        match &self.dataset {
            DatasetSpec::GaussianMixture {
                dim,
                classes,
                separation,
                size,
                ..
            } => {
                push("dataset.kind", "gaussian-mixture".into());
                push("dataset.dim", dim.to_string());
                push("dataset.classes", classes.to_string());
                push("dataset.separation", separation.to_string());
                push("dataset.size", size.to_string());
            }
            DatasetSpec::TwoMoons { size, noise, .. } => {
                push("dataset.kind", "two-moons".into());
                push("dataset.size", size.to_string());
                push("dataset.noise", noise.to_string());
            }
            DatasetSpec::GridDigits { size, .. } => {
                push("dataset.kind", "grid-digits".into());
                push("dataset.size", size.to_string());
            }
        }
        push(
            "model.kind",
            match self.model.kind {
                ModelKind::LinearSoftmax => "linear-softmax".into(),
                ModelKind::Mlp => "mlp".into(),
            },
        );
        push(
            "model.widths",
            self.model
                .widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push(
            "model.activation",
            match self.model.activation {
                Activation::Sigmoid => "sigmoid".into(),
                Activation::Softplus => "softplus".into(),
                Activation::Tanh => "tanh".into(),
            },
        );
        push(
            "model.loss",
            match self.model.loss {
                LossKind::CrossEntropy => "cross-entropy".into(),
                LossKind::SquaredError => "mean-squared-error".into(),
            },
        );
        push("adversary.eps", self.adversary.eps.to_string());
        push(
            "adversary.norm",
            match self.adversary.norm {
                NormP::L2 => "2".into(),
                NormP::LInf => "inf".into(),
            },
        );
        match self.adversary.method {
            AttackMethod::Pgd { steps, step_size } => {
                push("adversary.method", "pgd".into());
                push("adversary.pgd_steps", steps.to_string());
                push("adversary.pgd_step_size", step_size.to_string());
            }
            AttackMethod::GridOracle { resolution } => {
                push("adversary.method", "grid-oracle".into());
                push("adversary.grid_res", resolution.to_string());
            }
            AttackMethod::ClosedFormLinear => {
                push("adversary.method", "closed-form-linear".into());
            }
        }
        push("train.n", self.train_n.to_string());
        push("train.T", self.train_steps.to_string());
        push("train.passes", self.train_passes.to_string());
        match self.schedule {
            Schedule::Constant(a) => {
                push("train.schedule", "constant".into());
                push("train.alpha", a.to_string());
            }
            Schedule::Inverse(c) => {
                push("train.schedule", "inverse".into());
                push("train.c", c.to_string());
            }
        }
        push("bounds.c", self.bounds_c.to_string());
        push("bounds.B", self.bounds_b.to_string());
        push("constants.ball_radius", self.const_ball_radius.to_string());
        push("constants.probes", self.const_probes.to_string());
        push("constants.power_iters", self.const_power_iters.to_string());
        push(
            "constants.opt_restarts",
            self.const_opt_restarts.to_string(),
        );
        push("constants.opt_steps", self.const_opt_steps.to_string());
        push("constants.opt_step", self.const_opt_step.to_string());
        push(
            "stability.mode",
            match self.stability {
                StabilityRun::Off => "off".into(),
                StabilityRun::Exact => "exact".into(),
                StabilityRun::MonteCarlo => "monte-carlo".into(),
            },
        );
        push("stability.trials", self.stability_trials.to_string());
        push("stability.n", self.stability_n.to_string());
        push("stability.cap", self.stability_cap.to_string());
        push("gap.trials", self.gap_trials.to_string());
        if !self.eps_sweep.is_empty() {
            push(
                "gap.eps_sweep",
                self.eps_sweep
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        if let Some(p) = &self.poison {
            push(
                "poison.attack",
                match p.config.attack {
                    PoisonAttack::Em => "EM".into(),
                    PoisonAttack::Rem => "REM".into(),
                    PoisonAttack::Adv => "ADV".into(),
                    PoisonAttack::Hyp => "HYP".into(),
                    PoisonAttack::Ran => "RAN".into(),
                },
            );
            push("poison.budget", p.config.budget.to_string());
            push("poison.rounds", p.config.rounds.to_string());
            push("poison.victim_epochs", p.config.victim_epochs.to_string());
            push(
                "poison.inner_pgd_steps",
                p.config.inner_pgd_steps.to_string(),
            );
            push("poison.rem_rho", p.config.rem_rho.to_string());
            push(
                "poison.hyp_craft_budget",
                p.config.hyp_craft_budget.to_string(),
            );
            push(
                "poison.hyp_craft_epochs",
                p.config.hyp_craft_epochs.to_string(),
            );
            push("poison.craft_lr", p.config.craft_lr.to_string());
            if !p.craft_widths.is_empty() {
                push(
                    "poison.craft_widths",
                    p.craft_widths
                        .iter()
                        .map(|w| w.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                );
            }
            push(
                "poison.craft_activation",
                match p.craft_activation {
                    Activation::Sigmoid => "sigmoid".into(),
                    Activation::Softplus => "softplus".into(),
                    Activation::Tanh => "tanh".into(),
                },
            );
        }
        out
    }

    /// Rebind every derived seed to a new master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        match &mut self.dataset {
            DatasetSpec::GaussianMixture { seed: s, .. }
            | DatasetSpec::TwoMoons { seed: s, .. }
            | DatasetSpec::GridDigits { seed: s, .. } => *s = seed,
        }
        self.model.seed = seed;
        if let Some(p) = &mut self.poison {
            p.config.seed = seed ^ 0x70150;
        }
        self
    }

    /// Hash of the canonical serialization.
    pub fn config_hash(&self) -> u64 {
        crate::rng::content_hash(self.to_flat_text().as_bytes())
    }

    /// The crafting model for the poison section (defaults to a small MLP
    /// over the dataset dimensions when widths are not given).
    pub fn craft_model(&self, input_dim: usize, classes: usize) -> Result<Option<Model>> {
        let Some(p) = &self.poison else {
            return Ok(None);
        };
        let widths = if p.craft_widths.is_empty() {
            vec![input_dim, (2 * input_dim).max(4), classes.max(2)]
        } else {
            p.craft_widths.clone()
        };
        Ok(Some(Model::mlp(
            widths,
            p.craft_activation,
            LossKind::CrossEntropy,
        )?))
    }
}
