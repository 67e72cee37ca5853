//! Brute-force on-average-stability oracle for micro instances with a
//! linear binary cross-entropy model.
//!
//! Everything is hand-derived and self-contained: the loss and gradient use
//! the sigmoid-of-margin form, the attack is the sign rule (or a from-
//! scratch PGD loop), permutations come from Heap's algorithm, and the
//! expectations are explicit nested sums. No library code is called.

/// Inner-maximization recipe the oracle mirrors.
#[derive(Debug, Clone, Copy)]
pub enum OracleAttack {
    ClosedForm,
    Pgd { steps: usize, step_size: f64 },
}

/// One micro instance: a weighted population, sample size, steps, constant
/// step size, budget, and the initialization point. Parameter layout is
/// W (2 x d) row-major then b (2).
pub struct MicroInstance {
    pub points: Vec<(Vec<f64>, usize)>,
    pub weights: Vec<f64>,
    pub n: usize,
    pub steps: usize,
    pub alpha: f64,
    pub eps: f64,
    pub attack: OracleAttack,
    pub theta1: Vec<f64>,
}

fn dim(theta: &[f64]) -> usize {
    (theta.len() - 2) / 2
}

/// Margin u = (w_y - w_other) . x + (b_y - b_other).
fn margin(theta: &[f64], x: &[f64], y: usize) -> f64 {
    let d = dim(theta);
    let other = 1 - y;
    let mut u = theta[2 * d + y] - theta[2 * d + other];
    for j in 0..d {
        u += (theta[y * d + j] - theta[other * d + j]) * x[j];
    }
    u
}

/// Binary cross-entropy: softplus(-u).
fn ce_loss(theta: &[f64], x: &[f64], y: usize) -> f64 {
    let u = margin(theta, x, y);
    (-u).max(0.0) + (-(-u).abs()).exp().ln_1p()
}

/// Hand-derived gradient: with s = sigmoid(-u) = 1 - p_y,
/// dl/dW_y = -s x, dl/dW_other = s x, dl/db_y = -s, dl/db_other = s.
fn ce_grad(theta: &[f64], x: &[f64], y: usize) -> Vec<f64> {
    let d = dim(theta);
    let u = margin(theta, x, y);
    let s = if u >= 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    };
    let other = 1 - y;
    let mut g = vec![0.0; theta.len()];
    for j in 0..d {
        g[y * d + j] = -s * x[j];
        g[other * d + j] = s * x[j];
    }
    g[2 * d + y] = -s;
    g[2 * d + other] = s;
    g
}

/// Worst-case point in the L-inf ball intersected with the unit box.
fn attack(theta: &[f64], x: &[f64], y: usize, eps: f64, method: OracleAttack) -> Vec<f64> {
    if eps == 0.0 {
        return x.to_vec();
    }
    let d = dim(theta);
    let other = 1 - y;
    match method {
        OracleAttack::ClosedForm => {
            // Loss decreases in the margin: push each coordinate against
            // the sign of the margin weight.
            (0..d)
                .map(|j| {
                    let w = theta[y * d + j] - theta[other * d + j];
                    let lo = (x[j] - eps).max(0.0);
                    let hi = (x[j] + eps).min(1.0);
                    if w > 0.0 {
                        lo
                    } else if w < 0.0 {
                        hi
                    } else {
                        x[j]
                    }
                })
                .collect()
        }
        OracleAttack::Pgd { steps, step_size } => {
            let mut cur = x.to_vec();
            let mut best = x.to_vec();
            let mut best_loss = ce_loss(theta, x, y);
            for _ in 0..steps {
                let g = input_grad(theta, &cur, y);
                for j in 0..d {
                    let s = if g[j] > 0.0 {
                        1.0
                    } else if g[j] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    cur[j] = (cur[j] + step_size * s).clamp(x[j] - eps, x[j] + eps);
                    cur[j] = cur[j].clamp(0.0, 1.0);
                }
                let l = ce_loss(theta, &cur, y);
                if l > best_loss {
                    best_loss = l;
                    best.clone_from(&cur);
                }
            }
            best
        }
    }
}

/// dl/dx = -sigmoid(-u) * (w_y - w_other).
fn input_grad(theta: &[f64], x: &[f64], y: usize) -> Vec<f64> {
    let d = dim(theta);
    let u = margin(theta, x, y);
    let s = if u >= 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    };
    let other = 1 - y;
    (0..d)
        .map(|j| -s * (theta[y * d + j] - theta[other * d + j]))
        .collect()
}

/// Adversarial loss at the attack maximizer.
fn adv_loss(theta: &[f64], x: &[f64], y: usize, eps: f64, method: OracleAttack) -> f64 {
    let xp = attack(theta, x, y, eps, method);
    ce_loss(theta, &xp, y)
}

/// SGD without replacement in the given visit order.
fn train(inst: &MicroInstance, sample: &[(Vec<f64>, usize)], perm: &[usize]) -> Vec<f64> {
    let mut theta = inst.theta1.clone();
    for t in 0..inst.steps {
        let (x, y) = &sample[perm[t % perm.len()]];
        let xp = attack(&theta, x, *y, inst.eps, inst.attack);
        let g = ce_grad(&theta, &xp, *y);
        for j in 0..theta.len() {
            theta[j] -= inst.alpha * g[j];
        }
    }
    theta
}

/// Heap's algorithm; deliberately a different generator than the library's.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    fn heap(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, items, out);
            if k.is_multiple_of(2) {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut items, &mut out);
    out
}

/// Full enumeration of Def.-style on-average stability and the expected
/// generalization gap. Returns (per-index estimates, gap).
pub fn enumerate(inst: &MicroInstance) -> (Vec<f64>, f64) {
    let pop = inst.points.len();
    let n = inst.n;
    let perms = permutations(n);
    let pw = 1.0 / perms.len() as f64;
    let mut per_index = vec![0.0; n];
    let mut gap = 0.0;

    let mut tuple = vec![0usize; n];
    loop {
        let prob: f64 = tuple.iter().map(|&i| inst.weights[i]).product();
        if prob > 0.0 {
            let sample: Vec<(Vec<f64>, usize)> =
                tuple.iter().map(|&i| inst.points[i].clone()).collect();
            for perm in &perms {
                let theta = train(inst, &sample, perm);

                // Expected gap contribution: R_D - R_S at the output.
                let mut pop_risk = 0.0;
                for (zi, (x, y)) in inst.points.iter().enumerate() {
                    pop_risk += inst.weights[zi] * adv_loss(&theta, x, *y, inst.eps, inst.attack);
                }
                let mut emp_risk = 0.0;
                for (x, y) in &sample {
                    emp_risk += adv_loss(&theta, x, *y, inst.eps, inst.attack);
                }
                emp_risk /= n as f64;
                gap += prob * pw * (pop_risk - emp_risk);

                // Stability contribution per replacement index.
                for i in 0..n {
                    for (zi, (zx, zy)) in inst.points.iter().enumerate() {
                        let wz = inst.weights[zi];
                        if wz == 0.0 {
                            continue;
                        }
                        let mut replaced = sample.clone();
                        replaced[i] = (zx.clone(), *zy);
                        let theta_twin = train(inst, &replaced, perm);
                        let h_base = adv_loss(&theta, zx, *zy, inst.eps, inst.attack);
                        let h_twin = adv_loss(&theta_twin, zx, *zy, inst.eps, inst.attack);
                        per_index[i] += prob * pw * wz * (h_base - h_twin);
                    }
                }
            }
        }
        let mut j = 0;
        loop {
            if j == n {
                return (per_index, gap);
            }
            tuple[j] += 1;
            if tuple[j] < pop {
                break;
            }
            tuple[j] = 0;
            j += 1;
        }
    }
}
