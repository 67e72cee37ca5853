//! Closed-form evaluation of the generalization bounds and the
//! uniform-stability baselines they are compared against.
//!
//! Every function returns the bound value together with validity flags:
//! when a step-size cap fails the bound is still evaluated, but the report
//! says so, because parameter sweeps routinely cross the caps.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::constants::ConstantsReport;
use crate::error::{Error, Result};
use crate::trainer::Schedule;

/// A bound value plus the validity flags attached during evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedBound {
    pub value: f64,
    pub flags: Vec<String>,
}

impl EvaluatedBound {
    fn clean(value: f64) -> Self {
        Self {
            value,
            flags: Vec::new(),
        }
    }
}

fn check_nonneg(pairs: &[(&str, f64)]) -> Result<()> {
    for &(name, v) in pairs {
        if v < 0.0 || !v.is_finite() {
            return Err(Error::Contract(format!(
                "{name} = {v} must be >= 0 and finite"
            )));
        }
    }
    Ok(())
}

/// General convex bound:
/// `(2 sigma L / n + L eta) sum(alpha) + (4L/n) sqrt(sum(alpha))
///  * sqrt(r + (beta sigma^2 / 2) sum(alpha^2) + eta L sum(alpha))`.
pub fn bound_convex_general(
    consts: &ConstantsReport,
    alphas: &[f64],
    n: usize,
) -> Result<EvaluatedBound> {
    let (l, beta, eta, sigma, r) = (consts.l, consts.beta(), consts.eta, consts.sigma, consts.r);
    check_nonneg(&[
        ("L", l),
        ("beta", beta),
        ("eta", eta),
        ("sigma", sigma),
        ("r", r),
    ])?;
    if n == 0 {
        return Err(Error::Contract("n must be >= 1".into()));
    }
    let mut flags = Vec::new();
    if beta > 0.0 && alphas.iter().any(|&a| a > 1.0 / beta) {
        flags.push(format!("step size exceeds 1/beta = {}", 1.0 / beta));
    }
    let nf = n as f64;
    // `+ 0.0` normalizes the empty sum, which is -0.0 in std, back to +0.
    let sum_a: f64 = alphas.iter().sum::<f64>() + 0.0;
    let sum_a2: f64 = alphas.iter().map(|a| a * a).sum::<f64>() + 0.0;
    let value = (2.0 * sigma * l / nf + l * eta) * sum_a
        + (4.0 * l / nf)
            * sum_a.sqrt()
            * (r + 0.5 * beta * sigma * sigma * sum_a2 + eta * l * sum_a).sqrt();
    Ok(EvaluatedBound { value, flags })
}

/// Constant-step convex bound:
/// `eta alpha L T + (2 alpha L T / n)(sigma + sqrt(2) sigma + 2 sqrt(eta L))
///  + 4 L sqrt(alpha r T) / n`.
pub fn bound_convex_constant(
    consts: &ConstantsReport,
    alpha: f64,
    steps: usize,
    n: usize,
) -> Result<EvaluatedBound> {
    let (l, beta, eta, sigma, r) = (consts.l, consts.beta(), consts.eta, consts.sigma, consts.r);
    check_nonneg(&[
        ("L", l),
        ("eta", eta),
        ("sigma", sigma),
        ("r", r),
        ("alpha", alpha),
    ])?;
    if n == 0 {
        return Err(Error::Contract("n must be >= 1".into()));
    }
    let mut flags = Vec::new();
    if beta > 0.0 && alpha > 1.0 / beta {
        flags.push(format!("step size exceeds 1/beta = {}", 1.0 / beta));
    }
    let (nf, t) = (n as f64, steps as f64);
    let value = eta * alpha * l * t
        + (2.0 * alpha * l * t / nf)
            * (sigma + std::f64::consts::SQRT_2 * sigma + 2.0 * (eta * l).sqrt())
        + 4.0 * l * (alpha * r * t).sqrt() / nf;
    Ok(EvaluatedBound { value, flags })
}

/// Shared functional form of the non-convex and multi-pass bounds:
/// `((1 + 1/q)/n) (2 c L^2 + n c eta L)^(1/(1+q)) (risk T)^(q/(1+q))`.
fn exponent_form(
    q: f64,
    c: f64,
    l: f64,
    eta: f64,
    steps: usize,
    n: usize,
    risk_at_output: f64,
) -> Result<f64> {
    if q == 0.0 {
        return Err(Error::DegenerateExponent(
            "q = 0: the bound degenerates; report the q -> 0 limit separately".into(),
        ));
    }
    let nf = n as f64;
    let base = 2.0 * c * l * l + nf * c * eta * l;
    let value = ((1.0 + 1.0 / q) / nf)
        * base.powf(1.0 / (1.0 + q))
        * (risk_at_output * steps as f64).powf(q / (1.0 + q));
    Ok(value)
}

/// Step-size cap of the non-convex bound:
/// `c <= min(1/beta, 1/(4 beta ln T), 1/(8 (beta ln T)^2))`.
pub fn nonconvex_step_cap(beta: f64, steps: usize) -> f64 {
    let ln_t = (steps as f64).ln();
    let a = 1.0 / beta;
    let b = 1.0 / (4.0 * beta * ln_t);
    let c = 1.0 / (8.0 * (beta * ln_t) * (beta * ln_t));
    a.min(b).min(c)
}

/// Non-convex bound with `q = c * gamma` (gamma as stored in the report).
pub fn bound_nonconvex(
    consts: &ConstantsReport,
    c: f64,
    steps: usize,
    n: usize,
    risk_at_output: f64,
) -> Result<EvaluatedBound> {
    check_nonneg(&[
        ("L", consts.l),
        ("eta", consts.eta),
        ("gamma", consts.gamma),
        ("c", c),
        ("risk_at_output", risk_at_output),
    ])?;
    if n == 0 {
        return Err(Error::Contract("n must be >= 1".into()));
    }
    if steps == 0 {
        // No updates: the algorithm output ignores the sample entirely.
        return Ok(EvaluatedBound::clean(0.0));
    }
    let mut flags = Vec::new();
    let cap = nonconvex_step_cap(consts.beta(), steps);
    if c > cap {
        flags.push(format!("c = {c} exceeds the step cap {cap}"));
    }
    let value = exponent_form(
        c * consts.gamma,
        c,
        consts.l,
        consts.eta,
        steps,
        n,
        risk_at_output,
    )?;
    Ok(EvaluatedBound { value, flags })
}

/// Multiple-pass bound: the same form with `q = c * beta`.
pub fn bound_multipass(
    consts: &ConstantsReport,
    c: f64,
    steps: usize,
    n: usize,
    risk_at_output: f64,
) -> Result<EvaluatedBound> {
    check_nonneg(&[
        ("L", consts.l),
        ("eta", consts.eta),
        ("beta", consts.beta()),
        ("c", c),
        ("risk_at_output", risk_at_output),
    ])?;
    if n == 0 {
        return Err(Error::Contract("n must be >= 1".into()));
    }
    if steps == 0 {
        return Ok(EvaluatedBound::clean(0.0));
    }
    let mut flags = Vec::new();
    if consts.beta() > 0.0 && c > 1.0 / consts.beta() {
        flags.push(format!("c = {c} exceeds 1/beta = {}", 1.0 / consts.beta()));
    }
    let value = exponent_form(
        c * consts.beta(),
        c,
        consts.l,
        consts.eta,
        steps,
        n,
        risk_at_output,
    )?;
    Ok(EvaluatedBound { value, flags })
}

/// The three uniform-stability baselines.
///
/// * `xiao_convex = (eta + 2L/n) alpha T L` — exact.
/// * `xiao_non_convex`: the exponent form with `q = c beta` and the loss
///   bound `B` in place of the output risk — exact.
/// * `xing_convex = alpha L^2 sqrt(T) + alpha L^2 T / n` — an O-form with
///   unit hidden constants, flagged order-only.
pub fn bound_baselines(
    consts: &ConstantsReport,
    alpha: f64,
    c: f64,
    steps: usize,
    n: usize,
    loss_bound: f64,
    max_observed_loss: f64,
) -> Result<(EvaluatedBound, EvaluatedBound, EvaluatedBound)> {
    check_nonneg(&[
        ("L", consts.l),
        ("eta", consts.eta),
        ("alpha", alpha),
        ("c", c),
        ("B", loss_bound),
    ])?;
    if loss_bound < max_observed_loss {
        return Err(Error::Contract(format!(
            "loss bound B = {loss_bound} below the observed max loss {max_observed_loss}"
        )));
    }
    if n == 0 {
        return Err(Error::Contract("n must be >= 1".into()));
    }
    if steps == 0 {
        return Ok((
            EvaluatedBound::clean(0.0),
            EvaluatedBound::clean(0.0),
            EvaluatedBound::clean(0.0),
        ));
    }
    let (l, eta) = (consts.l, consts.eta);
    let (nf, t) = (n as f64, steps as f64);
    let xing = EvaluatedBound {
        value: alpha * l * l * t.sqrt() + alpha * l * l * t / nf,
        flags: vec!["order-only: unit constants in an O(.) comparison".into()],
    };
    let xiao_convex = EvaluatedBound::clean((eta + 2.0 * l / nf) * alpha * t * l);
    let xiao_non_convex = EvaluatedBound::clean(exponent_form(
        c * consts.beta(),
        c,
        l,
        eta,
        steps,
        n,
        loss_bound,
    )?);
    Ok((xing, xiao_convex, xiao_non_convex))
}

/// Inputs echoed into a report; re-evaluation from the echo is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub constants: ConstantsReport,
    pub n: usize,
    /// Step count T.
    pub steps: usize,
    /// Schedule for the convex bounds.
    pub schedule: Schedule,
    /// Inverse-schedule coefficient for the exponent-form bounds.
    pub c: f64,
    /// Estimate of `E[R_D(A(S))]`.
    pub risk_at_output: f64,
    /// Loss upper bound B for the non-convex baseline.
    pub loss_bound: f64,
    pub max_observed_loss: f64,
}

/// All seven bound values at one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub convex_general: f64,
    pub convex_constant: f64,
    pub non_convex: f64,
    pub multi_pass: f64,
    pub xing_convex: f64,
    pub xiao_convex: f64,
    pub xiao_non_convex: f64,
    /// Validity flags keyed by bound name.
    pub flags: BTreeMap<String, Vec<String>>,
    pub inputs: BoundInputs,
}

impl BoundReport {
    pub fn evaluate(inputs: BoundInputs) -> Result<Self> {
        let alphas = inputs.schedule.series(inputs.steps);
        let alpha_const = match inputs.schedule {
            Schedule::Constant(a) => a,
            // The constant-step corollary evaluated at the first step size.
            Schedule::Inverse(c) => c,
        };
        let consts = &inputs.constants;
        let general = bound_convex_general(consts, &alphas, inputs.n)?;
        let constant = bound_convex_constant(consts, alpha_const, inputs.steps, inputs.n)?;
        let nonconvex = bound_nonconvex(
            consts,
            inputs.c,
            inputs.steps,
            inputs.n,
            inputs.risk_at_output,
        )?;
        let multipass = bound_multipass(
            consts,
            inputs.c,
            inputs.steps,
            inputs.n,
            inputs.risk_at_output,
        )?;
        let (xing, xiao_c, xiao_nc) = bound_baselines(
            consts,
            alpha_const,
            inputs.c,
            inputs.steps,
            inputs.n,
            inputs.loss_bound,
            inputs.max_observed_loss,
        )?;
        let mut flags = BTreeMap::new();
        for (name, b) in [
            ("convex_general", &general),
            ("convex_constant", &constant),
            ("non_convex", &nonconvex),
            ("multi_pass", &multipass),
            ("xing_convex", &xing),
            ("xiao_convex", &xiao_c),
            ("xiao_non_convex", &xiao_nc),
        ] {
            if !b.flags.is_empty() {
                flags.insert(name.to_string(), b.flags.clone());
            }
        }
        Ok(Self {
            convex_general: general.value,
            convex_constant: constant.value,
            non_convex: nonconvex.value,
            multi_pass: multipass.value,
            xing_convex: xing.value,
            xiao_convex: xiao_c.value,
            xiao_non_convex: xiao_nc.value,
            flags,
            inputs,
        })
    }

    /// Re-run the formulas from the echoed inputs; bit-identical by
    /// construction, which the tests pin down.
    pub fn recompute(&self) -> Result<Self> {
        Self::evaluate(self.inputs.clone())
    }

    fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("convex_general", self.convex_general),
            ("convex_constant", self.convex_constant),
            ("non_convex", self.non_convex),
            ("multi_pass", self.multi_pass),
            ("xing_convex", self.xing_convex),
            ("xiao_convex", self.xiao_convex),
            ("xiao_non_convex", self.xiao_non_convex),
        ]
    }
}

/// Emit a bound sweep as CSV with columns
/// `(schema_version, eps, n, T, schedule, bound_name, value, validity_flags)`.
pub fn write_sweep_csv<W: Write>(reports: &[BoundReport], mut out: W) -> Result<()> {
    writeln!(
        out,
        "schema_version,eps,n,T,schedule,bound_name,value,validity_flags"
    )?;
    for report in reports {
        let schedule = match report.inputs.schedule {
            Schedule::Constant(a) => format!("constant({a})"),
            Schedule::Inverse(c) => format!("inverse({c})"),
        };
        for (name, value) in report.rows() {
            let flags = report
                .flags
                .get(name)
                .map(|f| f.join("; "))
                .unwrap_or_default();
            writeln!(
                out,
                "1,{},{},{},{},{},{},{}",
                report.inputs.constants.eps,
                report.inputs.n,
                report.inputs.steps,
                schedule,
                name,
                value,
                csv_escape(&flags)
            )?;
        }
    }
    Ok(())
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
