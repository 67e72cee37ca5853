//! Shared oracles for integration tests.
//!
//! Everything in here is written independently of the library's computation
//! paths: finite differences for gradients, a straight-line scalar forward
//! pass for one fixed architecture, and a Jacobi eigensolver for dense
//! symmetric matrices. Keep it that way — these are the referees.

#![allow(dead_code)]

pub mod bigfixed;
pub mod bound_oracles;
pub mod micro;
pub mod probes;
pub mod reduction;
pub mod stability_oracle;
pub mod victim;

use stablab_core::{LabeledExample, LossModel};

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + step;
        let fp = f(&xp);
        xp[j] = orig - step;
        let fm = f(&xp);
        xp[j] = orig;
        g[j] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Central finite difference of the parameter gradient along direction `v`.
pub fn fd_hvp<M: LossModel>(
    model: &M,
    theta: &[f64],
    z: &LabeledExample,
    v: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut tp = theta.to_vec();
    let mut tm = theta.to_vec();
    for j in 0..theta.len() {
        tp[j] = theta[j] + step * v[j];
        tm[j] = theta[j] - step * v[j];
    }
    let gp = model.grad_theta(&tp, z);
    let gm = model.grad_theta(&tm, z);
    gp.iter()
        .zip(&gm)
        .map(|(p, m)| (p - m) / (2.0 * step))
        .collect()
}

/// `||a - b|| / max(||b||, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

/// Straight-line re-implementation of the 2-3-2 sigmoid MLP forward pass
/// with cross-entropy loss. No loops over layers, no shared code with the
/// library evaluator.
///
/// Parameter layout (matches the library convention): W1 (3x2) row-major,
/// b1 (3), W2 (2x3) row-major, b2 (2).
pub fn reference_loss_mlp_232_sigmoid_ce(theta: &[f64], x: &[f64], label: usize) -> f64 {
    assert_eq!(theta.len(), 3 * 2 + 3 + 2 * 3 + 2);
    assert_eq!(x.len(), 2);
    let sg = |t: f64| {
        if t >= 0.0 {
            1.0 / (1.0 + (-t).exp())
        } else {
            let e = t.exp();
            e / (1.0 + e)
        }
    };
    let s1_0 = theta[0] * x[0] + theta[1] * x[1] + theta[6];
    let s1_1 = theta[2] * x[0] + theta[3] * x[1] + theta[7];
    let s1_2 = theta[4] * x[0] + theta[5] * x[1] + theta[8];
    let a0 = sg(s1_0);
    let a1 = sg(s1_1);
    let a2 = sg(s1_2);
    let s2_0 = theta[9] * a0 + theta[10] * a1 + theta[11] * a2 + theta[15];
    let s2_1 = theta[12] * a0 + theta[13] * a1 + theta[14] * a2 + theta[16];
    let m = s2_0.max(s2_1);
    let lse = m + ((s2_0 - m).exp() + (s2_1 - m).exp()).ln();
    lse - if label == 0 { s2_0 } else { s2_1 }
}

/// Eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in no particular order.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for sweep in 0..200 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-28 {
            break;
        }
        assert!(sweep < 199, "jacobi failed to converge, off = {off}");
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let apq = a[p][q];
                let app = a[p][p];
                let aqq = a[q][q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Spectral norm (max |eigenvalue|) via the Jacobi oracle.
pub fn spectral_norm_dense(a: Vec<Vec<f64>>) -> f64 {
    jacobi_eigenvalues(a)
        .into_iter()
        .fold(0.0, |m, l| m.max(l.abs()))
}
