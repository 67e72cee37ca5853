//! The seven bound formulas re-evaluated in arbitrary-precision fixed
//! point, sharing nothing with the library's f64 implementations.

use super::bigfixed::BigFixed;

fn bf(x: f64) -> BigFixed {
    BigFixed::from_f64(x)
}

pub struct OracleInputs {
    pub l: f64,
    pub beta: f64,
    pub sigma: f64,
    pub eta: f64,
    pub r: f64,
    pub gamma: f64,
    pub alphas: Vec<f64>,
    pub alpha: f64,
    pub c: f64,
    pub steps: usize,
    pub n: usize,
    pub risk_at_output: f64,
    pub loss_bound: f64,
}

pub fn convex_general(i: &OracleInputs) -> f64 {
    let n = bf(i.n as f64);
    let mut sum_a = BigFixed::zero();
    let mut sum_a2 = BigFixed::zero();
    for &a in &i.alphas {
        let a = bf(a);
        sum_a = sum_a.add(&a);
        sum_a2 = sum_a2.add(&a.mul(&a));
    }
    let l = bf(i.l);
    let two = bf(2.0);
    let four = bf(4.0);
    let first = two
        .mul(&bf(i.sigma))
        .mul(&l)
        .div(&n)
        .add(&l.mul(&bf(i.eta)))
        .mul(&sum_a);
    let inner = bf(i.r)
        .add(
            &bf(i.beta)
                .mul(&bf(i.sigma))
                .mul(&bf(i.sigma))
                .div(&two)
                .mul(&sum_a2),
        )
        .add(&bf(i.eta).mul(&l).mul(&sum_a));
    let second = four.mul(&l).div(&n).mul(&sum_a.sqrt()).mul(&inner.sqrt());
    first.add(&second).to_f64()
}

pub fn convex_constant(i: &OracleInputs) -> f64 {
    let (l, eta, sigma) = (bf(i.l), bf(i.eta), bf(i.sigma));
    let (alpha, t, n) = (bf(i.alpha), bf(i.steps as f64), bf(i.n as f64));
    let two = bf(2.0);
    let four = bf(4.0);
    let sqrt2 = two.sqrt();
    let first = eta.mul(&alpha).mul(&l).mul(&t);
    let second = two.mul(&alpha).mul(&l).mul(&t).div(&n).mul(
        &sigma
            .add(&sqrt2.mul(&sigma))
            .add(&two.mul(&eta.mul(&l).sqrt())),
    );
    let third = four
        .mul(&l)
        .mul(&alpha.mul(&bf(i.r)).mul(&t).sqrt())
        .div(&n);
    first.add(&second).add(&third).to_f64()
}

fn exponent_form(q: &BigFixed, c: f64, l: f64, eta: f64, steps: usize, n: usize, risk: f64) -> f64 {
    let one = BigFixed::one();
    let nf = bf(n as f64);
    let lb = bf(l);
    let base = bf(2.0)
        .mul(&bf(c))
        .mul(&lb)
        .mul(&lb)
        .add(&nf.mul(&bf(c)).mul(&bf(eta)).mul(&lb));
    let one_plus_q = one.add(q);
    let prefactor = one.add(&one.div(q)).div(&nf);
    let rt = bf(risk).mul(&bf(steps as f64));
    prefactor
        .mul(&base.powf(&one.div(&one_plus_q)))
        .mul(&rt.powf(&q.div(&one_plus_q)))
        .to_f64()
}

pub fn non_convex(i: &OracleInputs) -> f64 {
    let q = bf(i.c).mul(&bf(i.gamma));
    exponent_form(&q, i.c, i.l, i.eta, i.steps, i.n, i.risk_at_output)
}

pub fn multi_pass(i: &OracleInputs) -> f64 {
    let q = bf(i.c).mul(&bf(i.beta));
    exponent_form(&q, i.c, i.l, i.eta, i.steps, i.n, i.risk_at_output)
}

pub fn xing_convex(i: &OracleInputs) -> f64 {
    let (alpha, l) = (bf(i.alpha), bf(i.l));
    let t = bf(i.steps as f64);
    let n = bf(i.n as f64);
    alpha
        .mul(&l)
        .mul(&l)
        .mul(&t.sqrt())
        .add(&alpha.mul(&l).mul(&l).mul(&t).div(&n))
        .to_f64()
}

pub fn xiao_convex(i: &OracleInputs) -> f64 {
    let (alpha, l, eta) = (bf(i.alpha), bf(i.l), bf(i.eta));
    let t = bf(i.steps as f64);
    let n = bf(i.n as f64);
    eta.add(&bf(2.0).mul(&l).div(&n))
        .mul(&alpha)
        .mul(&t)
        .mul(&l)
        .to_f64()
}

pub fn xiao_non_convex(i: &OracleInputs) -> f64 {
    let q = bf(i.c).mul(&bf(i.beta));
    exponent_form(&q, i.c, i.l, i.eta, i.steps, i.n, i.loss_bound)
}

/// gamma_delta re-evaluation: `Delta* = rho (sqrt(r c) + c sigma + c sqrt(eta L))`
/// and the explicit curvature expression at t = T.
#[allow(clippy::too_many_arguments)]
pub fn gamma_and_delta(
    rho: f64,
    beta: f64,
    sigma: f64,
    eta: f64,
    nu: f64,
    l: f64,
    r: f64,
    hess_norm_init: f64,
    c: f64,
    steps: usize,
) -> (f64, f64) {
    let rho_b = bf(rho);
    let c_b = bf(c);
    let eta_l = bf(eta).mul(&bf(l));
    let delta_star = rho_b.mul(
        &bf(r)
            .mul(&c_b)
            .sqrt()
            .add(&c_b.mul(&bf(sigma)))
            .add(&c_b.mul(&eta_l.sqrt())),
    );
    let one_ln = BigFixed::one().add(&bf(steps as f64).ln());
    let two = bf(2.0);
    let g = bf(hess_norm_init)
        .add(&bf(nu))
        .add(&two.mul(&rho_b).mul(&bf(r).mul(&c_b).mul(&one_ln).sqrt()))
        .add(
            &two.mul(&rho_b)
                .mul(&bf(sigma))
                .mul(&c_b)
                .mul(&bf(beta).mul(&c_b).mul(&one_ln).sqrt()),
        )
        .add(
            &rho_b
                .mul(&c_b)
                .mul(&bf(sigma).add(&two.mul(&eta_l.sqrt())))
                .mul(&one_ln),
        );
    (g.min(bf(beta)).to_f64(), delta_star.to_f64())
}

// ---- randomized fidelity sweep over the f64 implementations ----

use rand::Rng;
use stablab_core::bounds;
use stablab_core::constants::ConstantsReport;
use stablab_core::rng::substream;
use std::collections::BTreeMap;

pub fn report_from(i: &OracleInputs) -> ConstantsReport {
    let eps = 0.1;
    ConstantsReport {
        eps,
        l: i.l,
        l_theta: i.beta,
        l_z: i.eta / (2.0 * eps),
        h_theta: 1.0,
        h_z: 0.0,
        eta: i.eta,
        nu: 0.0,
        sigma: i.sigma,
        r: i.r,
        hess_norm_init: 1.0,
        gamma: i.gamma,
        gamma_raw: i.gamma,
        delta_star: 0.0,
        provenance: BTreeMap::new(),
        warnings: Vec::new(),
        poison_tag: None,
    }
}

pub fn random_inputs<R: Rng>(rng: &mut R) -> OracleInputs {
    let beta: f64 = 0.5 + rng.random::<f64>() * 3.5;
    let steps = rng.random_range(10..1000);
    let alpha = rng.random::<f64>() * 0.9 / beta + 1e-4;
    let constant_schedule = rng.random::<bool>();
    let alphas: Vec<f64> = if constant_schedule {
        vec![alpha; steps]
    } else {
        (1..=steps).map(|t| alpha / t as f64).collect()
    };
    let risk = 0.05 + rng.random::<f64>() * 2.0;
    OracleInputs {
        l: 0.1 + rng.random::<f64>() * 3.0,
        beta,
        sigma: rng.random::<f64>(),
        eta: rng.random::<f64>() * 0.2,
        r: rng.random::<f64>() * 2.0,
        gamma: beta * (0.05 + 0.95 * rng.random::<f64>()),
        alphas,
        alpha,
        c: rng.random::<f64>() * 0.9 / beta + 1e-4,
        steps,
        n: rng.random_range(10..1000),
        risk_at_output: risk,
        loss_bound: risk + rng.random::<f64>() * 3.0,
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// One pass over the 100-point grid; returns the worst relative error seen.
pub fn formula_fidelity_worst_error(seed: u64) -> f64 {
    let mut rng = substream(seed, "bound-grid");
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let i = random_inputs(&mut rng);
        let consts = report_from(&i);
        let pairs = [
            (
                bounds::bound_convex_general(&consts, &i.alphas, i.n)
                    .unwrap()
                    .value,
                convex_general(&i),
            ),
            (
                bounds::bound_convex_constant(&consts, i.alpha, i.steps, i.n)
                    .unwrap()
                    .value,
                convex_constant(&i),
            ),
            (
                bounds::bound_nonconvex(&consts, i.c, i.steps, i.n, i.risk_at_output)
                    .unwrap()
                    .value,
                non_convex(&i),
            ),
            (
                bounds::bound_multipass(&consts, i.c, i.steps, i.n, i.risk_at_output)
                    .unwrap()
                    .value,
                multi_pass(&i),
            ),
        ];
        for (got, want) in pairs {
            worst = worst.max(rel(got, want));
        }
        let (xing, xiao_c, xiao_nc) = bounds::bound_baselines(
            &consts,
            i.alpha,
            i.c,
            i.steps,
            i.n,
            i.loss_bound,
            i.risk_at_output,
        )
        .unwrap();
        worst = worst.max(rel(xing.value, xing_convex(&i)));
        worst = worst.max(rel(xiao_c.value, xiao_convex(&i)));
        worst = worst.max(rel(xiao_nc.value, xiao_non_convex(&i)));
    }
    worst
}
