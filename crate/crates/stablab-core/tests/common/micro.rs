//! The shared micro-instance corpus and the library-vs-oracle comparison
//! used by the exact-stability tests and the acceptance suite.

use super::stability_oracle::{self, MicroInstance, OracleAttack};
use stablab_core::stability::{self, StabilityMode};
use stablab_core::trainer::{Schedule, TrainConfig};
use stablab_core::{
    AdversaryConfig, AttackMethod, FinitePopulation, LabeledExample, LossKind, Model, NormP,
};

/// The shared micro-instance corpus (|D| <= 4, n <= 3, T <= 3).
pub fn micro_corpus() -> Vec<MicroInstance> {
    vec![
        MicroInstance {
            points: vec![
                (vec![0.2, 0.8], 0),
                (vec![0.7, 0.3], 1),
                (vec![0.5, 0.6], 0),
            ],
            weights: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0],
            n: 2,
            steps: 2,
            alpha: 0.3,
            eps: 0.05,
            attack: OracleAttack::ClosedForm,
            theta1: vec![0.05; 6],
        },
        MicroInstance {
            points: vec![
                (vec![0.2, 0.8], 0),
                (vec![0.7, 0.3], 1),
                (vec![0.5, 0.6], 0),
            ],
            weights: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0],
            n: 2,
            steps: 2,
            alpha: 0.3,
            eps: 0.05,
            attack: OracleAttack::Pgd {
                steps: 10,
                step_size: 0.05 / 4.0,
            },
            theta1: vec![0.05; 6],
        },
        MicroInstance {
            points: vec![
                (vec![0.1, 0.9], 0),
                (vec![0.8, 0.2], 1),
                (vec![0.4, 0.5], 1),
                (vec![0.6, 0.7], 0),
            ],
            weights: vec![0.25; 4],
            n: 2,
            steps: 3,
            alpha: 0.25,
            eps: 0.1,
            attack: OracleAttack::Pgd {
                steps: 10,
                step_size: 0.1 / 4.0,
            },
            theta1: vec![-0.1, 0.2, 0.1, -0.05, 0.0, 0.1],
        },
        MicroInstance {
            points: vec![
                (vec![0.3, 0.3, 0.9], 0),
                (vec![0.7, 0.6, 0.1], 1),
                (vec![0.5, 0.2, 0.4], 1),
            ],
            weights: vec![0.5, 0.3, 0.2],
            n: 3,
            steps: 2,
            alpha: 0.4,
            eps: 0.08,
            attack: OracleAttack::ClosedForm,
            theta1: vec![0.1; 8],
        },
        MicroInstance {
            points: vec![(vec![0.2, 0.4], 0), (vec![0.9, 0.5], 1)],
            weights: vec![0.5, 0.5],
            n: 2,
            steps: 1,
            alpha: 0.5,
            eps: 0.0,
            attack: OracleAttack::ClosedForm,
            theta1: vec![0.2; 6],
        },
        MicroInstance {
            points: vec![
                (vec![0.15, 0.85], 0),
                (vec![0.75, 0.35], 1),
                (vec![0.45, 0.55], 0),
                (vec![0.95, 0.05], 1),
            ],
            weights: vec![0.4, 0.3, 0.2, 0.1],
            n: 3,
            steps: 3,
            alpha: 0.2,
            eps: 0.06,
            attack: OracleAttack::Pgd {
                steps: 10,
                step_size: 0.06 / 4.0,
            },
            theta1: vec![0.0; 6],
        },
    ]
}

/// Library-side view of a micro instance.
pub fn library_setup(
    inst: &MicroInstance,
) -> (Model, FinitePopulation, TrainConfig, AdversaryConfig) {
    let d = inst.points[0].0.len();
    let model = Model::linear_softmax(d, 2, LossKind::CrossEntropy).unwrap();
    let points: Vec<LabeledExample> = inst
        .points
        .iter()
        .map(|(x, y)| LabeledExample::new(x.clone(), *y))
        .collect();
    let pop = FinitePopulation::new(points, inst.weights.clone()).unwrap();
    let mut cfg = TrainConfig::single_pass(
        inst.steps,
        Schedule::Constant(inst.alpha),
        inst.theta1.clone(),
        0,
    );
    cfg.passes = inst.steps.div_ceil(inst.n).max(1);
    let adv = AdversaryConfig {
        eps: inst.eps,
        norm: NormP::LInf,
        method: match inst.attack {
            OracleAttack::ClosedForm => AttackMethod::ClosedFormLinear,
            OracleAttack::Pgd { steps, step_size } => AttackMethod::Pgd { steps, step_size },
        },
        random_start_seed: None,
    };
    (model, pop, cfg, adv)
}

/// Run one instance through both the library and the oracle; returns
/// (per-index worst deviation, gap deviation, thm1 slack).
pub fn compare(inst: &MicroInstance) -> (f64, f64, f64) {
    let (model, pop, cfg, adv) = library_setup(inst);
    let est =
        stability::on_average_stability(&model, &pop, inst.n, &cfg, &adv, StabilityMode::exact())
            .unwrap();
    let gap = stability::gen_gap_exact(
        &model,
        &pop,
        inst.n,
        &cfg,
        &adv,
        stability::DEFAULT_EXACT_CAP,
    )
    .unwrap();
    let (oracle_idx, oracle_gap) = stability_oracle::enumerate(inst);

    let worst_idx = est
        .per_index
        .iter()
        .zip(&oracle_idx)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let gap_dev = (gap - oracle_gap).abs();
    let slack = est.sup_index + 1e-10 - gap;
    (worst_idx, gap_dev, slack)
}
