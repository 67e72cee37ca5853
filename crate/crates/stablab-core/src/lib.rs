//! Desk-scale laboratory for the stability and robust generalization of
//! SGD-based adversarial training.
//!
//! The crate provides, end to end: differentiable loss models with exact
//! gradients and Hessian-vector products ([`model`]), inner maximization
//! over perturbation balls ([`adversary`]), SGD-without-replacement training
//! with full trajectory records ([`trainer`]), empirical estimation of every
//! constant consumed by the generalization-bound formulas ([`constants`]),
//! closed-form evaluation of those bounds and their uniform-stability
//! baselines ([`bounds`]), exact and Monte Carlo measurement of on-average
//! stability and generalization gaps ([`stability`]), desk-scale data
//! poisoning attacks ([`poison`]), synthetic dataset generators ([`synth`]),
//! and a reproducible experiment harness ([`config`], [`experiment`]).

pub mod adversary;
pub mod bounds;
pub mod config;
pub mod constants;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod poison;
pub mod rng;
pub mod stability;
pub mod synth;
pub mod trainer;
pub mod vecmath;

pub use adversary::{AdversaryConfig, AttackMethod, NormP};
pub use bounds::BoundReport;
pub use config::ExperimentConfig;
pub use constants::ConstantsReport;
pub use data::{FinitePopulation, LabeledExample};
pub use error::{Error, Result};
pub use model::{Activation, LossKind, LossModel, Model, ModelKind, ModelSpec, PointQuadratic};
pub use poison::{PoisonAttack, PoisonConfig};
pub use stability::{StabilityEstimate, StabilityMode};
pub use synth::DatasetSpec;
pub use trainer::{Schedule, TrainConfig, Trajectory};
