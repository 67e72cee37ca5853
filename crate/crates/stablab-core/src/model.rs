//! Differentiable loss models.
//!
//! Two network kinds are supported: a linear softmax classifier and small
//! fully-connected networks with smooth activations (sigmoid, softplus,
//! tanh), each under cross-entropy or squared-error loss. Gradients with
//! respect to parameters and inputs, and Hessian-vector products in the
//! parameters, are hand-coded reverse mode (the HVP uses the
//! forward-over-reverse tangent recursion), so every evaluation is exact
//! and bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::data::LabeledExample;
use crate::error::{Error, Result};

/// Smooth activation functions; all are twice continuously differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Softplus,
    Tanh,
}

impl Activation {
    fn value(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Tanh => x.tanh(),
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    fn deriv2(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss applied to the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Softmax cross-entropy against the class label.
    CrossEntropy,
    /// Half squared distance between the raw output and the one-hot target.
    SquaredError,
}

/// Network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearSoftmax,
    Mlp,
}

/// Value, gradients, and Hessian-vector products of a nonnegative loss.
///
/// Implementations must be pure: repeated evaluation at the same arguments
/// is bit-identical, and values may be shared freely across threads.
pub trait LossModel: Sync {
    fn param_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;

    /// Loss value `l(theta, z) >= 0`.
    fn loss(&self, theta: &[f64], z: &LabeledExample) -> f64;

    /// Gradient of the loss in the parameters.
    fn grad_theta(&self, theta: &[f64], z: &LabeledExample) -> Vec<f64>;

    /// Gradient of the loss in the input features.
    fn grad_input(&self, theta: &[f64], z: &LabeledExample) -> Vec<f64>;

    /// Parameter-Hessian-vector product, linear in `v`.
    fn hvp_theta(&self, theta: &[f64], z: &LabeledExample, v: &[f64]) -> Vec<f64>;

    /// Exact maximizer of the loss over the L-inf ball intersected with the
    /// unit box, when a closed form exists for this model; `None` otherwise.
    fn closed_form_linf_max(
        &self,
        _theta: &[f64],
        _z: &LabeledExample,
        _eps: f64,
    ) -> Option<LabeledExample> {
        None
    }

    /// Whether the loss is convex in theta for every fixed input, in which
    /// case the adversarial loss (a pointwise max) is convex too.
    fn is_convex_in_theta(&self) -> bool {
        false
    }
}

/// A feed-forward classifier with smooth activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    kind: ModelKind,
    /// Layer widths `[input, hidden.., output]`.
    widths: Vec<usize>,
    activation: Activation,
    loss: LossKind,
}

/// Serializable model description: `{kind, widths, activation, loss, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    /// Seed for the initialization point `theta_1`.
    pub seed: u64,
}

impl ModelSpec {
    pub fn build(&self) -> Result<(Model, Vec<f64>)> {
        let model = match self.kind {
            ModelKind::LinearSoftmax => {
                if self.widths.len() != 2 {
                    return Err(Error::InvalidConfig(
                        "linear-softmax takes widths [d, m]".into(),
                    ));
                }
                Model::linear_softmax(self.widths[0], self.widths[1], self.loss)?
            }
            ModelKind::Mlp => Model::mlp(self.widths.clone(), self.activation, self.loss)?,
        };
        let theta = model.init_theta(self.seed);
        Ok((model, theta))
    }
}

impl Model {
    /// Linear softmax classifier: one affine layer `d -> m`.
    pub fn linear_softmax(input_dim: usize, num_classes: usize, loss: LossKind) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::InvalidConfig(
                "linear-softmax needs input_dim >= 1 and num_classes >= 2".into(),
            ));
        }
        Ok(Self {
            kind: ModelKind::LinearSoftmax,
            widths: vec![input_dim, num_classes],
            activation: Activation::Sigmoid, // unused: no hidden layers
            loss,
        })
    }

    /// Fully-connected network with the given layer widths.
    pub fn mlp(widths: Vec<usize>, activation: Activation, loss: LossKind) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "mlp needs at least [input, output] widths, all positive".into(),
            ));
        }
        if *widths.last().unwrap() < 2 {
            return Err(Error::InvalidConfig("mlp needs >= 2 output classes".into()));
        }
        Ok(Self {
            kind: ModelKind::Mlp,
            widths,
            activation,
            loss,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(weight_offset, rows, cols, bias_offset)` of each layer inside theta.
    pub fn layer_layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut layout = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for i in 1..self.widths.len() {
            let rows = self.widths[i];
            let cols = self.widths[i - 1];
            layout.push((off, rows, cols, off + rows * cols));
            off += rows * cols + rows;
        }
        layout
    }

    /// Initialization point: weights and biases uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, drawn from the model-init
    /// sub-stream of `seed`.
    pub fn init_theta(&self, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = crate::rng::substream(seed, "model-init");
        let mut theta = vec![0.0; self.param_dim()];
        for (w_off, rows, cols, b_off) in self.layer_layout() {
            let scale = 1.0 / (cols as f64).sqrt();
            for w in theta[w_off..w_off + rows * cols].iter_mut() {
                *w = scale * (rng.random::<f64>() * 2.0 - 1.0);
            }
            for b in theta[b_off..b_off + rows].iter_mut() {
                *b = scale * (rng.random::<f64>() * 2.0 - 1.0);
            }
        }
        theta
    }

    fn check_dims(&self, theta: &[f64], z: &LabeledExample) {
        assert_eq!(
            theta.len(),
            self.param_dim(),
            "theta has length {}, model expects {}",
            theta.len(),
            self.param_dim()
        );
        assert_eq!(
            z.features.len(),
            self.input_dim(),
            "input has length {}, model expects {}",
            z.features.len(),
            self.input_dim()
        );
        assert!(
            z.label < self.num_classes(),
            "label {} out of range for {} classes",
            z.label,
            self.num_classes()
        );
    }

    /// Forward pass; returns pre-activations `s[i]` and activations `a[i]`
    /// per layer (`a[0]` is the input).
    fn forward(&self, theta: &[f64], x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let layers = self.num_layers();
        let layout = self.layer_layout();
        let mut pre = Vec::with_capacity(layers);
        let mut act = Vec::with_capacity(layers + 1);
        act.push(x.to_vec());
        for (i, &(w_off, rows, cols, b_off)) in layout.iter().enumerate() {
            let input = &act[i];
            let mut s = vec![0.0; rows];
            for r in 0..rows {
                let row = &theta[w_off + r * cols..w_off + (r + 1) * cols];
                s[r] = crate::vecmath::dot(row, input) + theta[b_off + r];
            }
            let a = if i + 1 < layers {
                s.iter().map(|&v| self.activation.value(v)).collect()
            } else {
                s.clone()
            };
            pre.push(s);
            act.push(a);
        }
        (pre, act)
    }

    fn output_loss(&self, out: &[f64], label: usize) -> f64 {
        match self.loss {
            LossKind::CrossEntropy => {
                let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + out.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                // logsumexp(s) >= s_y, so the value is nonnegative.
                (lse - out[label]).max(0.0)
            }
            LossKind::SquaredError => {
                let mut acc = 0.0;
                for (j, &v) in out.iter().enumerate() {
                    let t = if j == label { 1.0 } else { 0.0 };
                    acc += (v - t) * (v - t);
                }
                0.5 * acc
            }
        }
    }

    /// Loss gradient in the network output.
    fn output_grad(&self, out: &[f64], label: usize) -> Vec<f64> {
        match self.loss {
            LossKind::CrossEntropy => {
                let mut g = softmax(out);
                g[label] -= 1.0;
                g
            }
            LossKind::SquaredError => out
                .iter()
                .enumerate()
                .map(|(j, &v)| v - if j == label { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Hessian of the loss in the output applied to a tangent `r`.
    fn output_grad_tangent(&self, out: &[f64], r: &[f64]) -> Vec<f64> {
        match self.loss {
            LossKind::CrossEntropy => {
                let p = softmax(out);
                let pr = crate::vecmath::dot(&p, r);
                p.iter().zip(r).map(|(&pi, &ri)| pi * (ri - pr)).collect()
            }
            LossKind::SquaredError => r.to_vec(),
        }
    }

    /// Reverse pass: per-layer deltas (pre-activation gradients) and the
    /// gradient with respect to the network input.
    fn backward(
        &self,
        theta: &[f64],
        pre: &[Vec<f64>],
        out_grad: Vec<f64>,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let layers = self.num_layers();
        let layout = self.layer_layout();
        let mut deltas = vec![Vec::new(); layers];
        deltas[layers - 1] = out_grad;
        let mut input_grad = Vec::new();
        for i in (0..layers).rev() {
            let (w_off, rows, cols, _) = layout[i];
            // g = W^T delta, the gradient wrt this layer's input activation.
            let mut g = vec![0.0; cols];
            for r in 0..rows {
                let row = &theta[w_off + r * cols..w_off + (r + 1) * cols];
                crate::vecmath::axpy(deltas[i][r], row, &mut g);
            }
            if i > 0 {
                deltas[i - 1] = g
                    .iter()
                    .zip(&pre[i - 1])
                    .map(|(&gi, &si)| gi * self.activation.deriv(si))
                    .collect();
            } else {
                input_grad = g;
            }
        }
        (deltas, input_grad)
    }
}

fn softmax(out: &[f64]) -> Vec<f64> {
    let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = out.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl LossModel for Model {
    fn param_dim(&self) -> usize {
        self.layer_layout()
            .iter()
            .map(|&(_, r, c, _)| r * c + r)
            .sum()
    }

    fn input_dim(&self) -> usize {
        self.widths[0]
    }

    fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn loss(&self, theta: &[f64], z: &LabeledExample) -> f64 {
        self.check_dims(theta, z);
        let (_, act) = self.forward(theta, &z.features);
        self.output_loss(act.last().unwrap(), z.label)
    }

    fn grad_theta(&self, theta: &[f64], z: &LabeledExample) -> Vec<f64> {
        self.check_dims(theta, z);
        let (pre, act) = self.forward(theta, &z.features);
        let out_grad = self.output_grad(act.last().unwrap(), z.label);
        let (deltas, _) = self.backward(theta, &pre, out_grad);
        let layout = self.layer_layout();
        let mut grad = vec![0.0; self.param_dim()];
        for (i, &(w_off, rows, cols, b_off)) in layout.iter().enumerate() {
            let input = &act[i];
            for r in 0..rows {
                let d = deltas[i][r];
                crate::vecmath::axpy(
                    d,
                    input,
                    &mut grad[w_off + r * cols..w_off + (r + 1) * cols],
                );
                grad[b_off + r] = d;
            }
        }
        grad
    }

    fn grad_input(&self, theta: &[f64], z: &LabeledExample) -> Vec<f64> {
        self.check_dims(theta, z);
        let (pre, act) = self.forward(theta, &z.features);
        let out_grad = self.output_grad(act.last().unwrap(), z.label);
        let (_, input_grad) = self.backward(theta, &pre, out_grad);
        input_grad
    }

    fn hvp_theta(&self, theta: &[f64], z: &LabeledExample, v: &[f64]) -> Vec<f64> {
        self.check_dims(theta, z);
        assert_eq!(v.len(), self.param_dim(), "hvp direction has wrong length");
        let layers = self.num_layers();
        let layout = self.layer_layout();

        // Primal forward and backward.
        let (pre, act) = self.forward(theta, &z.features);
        let out_grad = self.output_grad(act.last().unwrap(), z.label);
        let (deltas, _) = self.backward(theta, &pre, out_grad);

        // Tangent forward: directional derivative of every activation
        // along the parameter direction v.
        let mut r_act: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        let mut r_pre: Vec<Vec<f64>> = Vec::with_capacity(layers);
        r_act.push(vec![0.0; self.widths[0]]);
        for (i, &(w_off, rows, cols, b_off)) in layout.iter().enumerate() {
            let mut rs = vec![0.0; rows];
            for r in 0..rows {
                let w_row = &theta[w_off + r * cols..w_off + (r + 1) * cols];
                let v_row = &v[w_off + r * cols..w_off + (r + 1) * cols];
                rs[r] = crate::vecmath::dot(w_row, &r_act[i])
                    + crate::vecmath::dot(v_row, &act[i])
                    + v[b_off + r];
            }
            let ra = if i + 1 < layers {
                rs.iter()
                    .zip(&pre[i])
                    .map(|(&r, &s)| self.activation.deriv(s) * r)
                    .collect()
            } else {
                rs.clone()
            };
            r_pre.push(rs);
            r_act.push(ra);
        }

        // Tangent backward.
        let mut r_deltas: Vec<Vec<f64>> = vec![Vec::new(); layers];
        r_deltas[layers - 1] = self.output_grad_tangent(act.last().unwrap(), r_act.last().unwrap());
        let mut hvp = vec![0.0; self.param_dim()];
        for i in (0..layers).rev() {
            let (w_off, rows, cols, b_off) = layout[i];
            let delta = &deltas[i];
            let r_delta = r_deltas[i].clone();
            for r in 0..rows {
                let slot = &mut hvp[w_off + r * cols..w_off + (r + 1) * cols];
                crate::vecmath::axpy(r_delta[r], &act[i], slot);
                crate::vecmath::axpy(delta[r], &r_act[i], slot);
                hvp[b_off + r] = r_delta[r];
            }
            if i > 0 {
                // Rg = W^T Rdelta + V^T delta; g = W^T delta from the primal pass.
                let mut rg = vec![0.0; cols];
                let mut g = vec![0.0; cols];
                for r in 0..rows {
                    let w_row = &theta[w_off + r * cols..w_off + (r + 1) * cols];
                    let v_row = &v[w_off + r * cols..w_off + (r + 1) * cols];
                    crate::vecmath::axpy(r_delta[r], w_row, &mut rg);
                    crate::vecmath::axpy(delta[r], v_row, &mut rg);
                    crate::vecmath::axpy(delta[r], w_row, &mut g);
                }
                r_deltas[i - 1] = (0..cols)
                    .map(|j| {
                        let s = pre[i - 1][j];
                        rg[j] * self.activation.deriv(s)
                            + g[j] * self.activation.deriv2(s) * r_pre[i - 1][j]
                    })
                    .collect();
            }
        }
        hvp
    }

    fn is_convex_in_theta(&self) -> bool {
        // Affine logits with cross-entropy or squared error are convex;
        // any hidden layer breaks that.
        self.widths.len() == 2
    }

    fn closed_form_linf_max(
        &self,
        theta: &[f64],
        z: &LabeledExample,
        eps: f64,
    ) -> Option<LabeledExample> {
        // Binary cross-entropy under a linear model is strictly decreasing in
        // the margin (w_y - w_other) . x + (b_y - b_other); maximizing the
        // loss therefore minimizes the margin coordinatewise.
        if self.kind != ModelKind::LinearSoftmax
            || self.num_classes() != 2
            || self.loss != LossKind::CrossEntropy
        {
            return None;
        }
        self.check_dims(theta, z);
        let d = self.input_dim();
        let y = z.label;
        let other = 1 - y;
        let mut features = z.features.clone();
        for j in 0..d {
            let w_diff = theta[y * d + j] - theta[other * d + j];
            let lo = (z.features[j] - eps).max(0.0);
            let hi = (z.features[j] + eps).min(1.0);
            features[j] = if w_diff > 0.0 {
                lo
            } else if w_diff < 0.0 {
                hi
            } else {
                z.features[j]
            };
        }
        Some(LabeledExample::new(features, y))
    }
}

/// Quadratic calibration objective `l(theta, z) = 0.5 ||theta - x||^2`.
///
/// Its Lipschitz and curvature constants are known in closed form (identity
/// Hessian, unit gradient-Lipschitz constant), which makes it the reference
/// instance for estimator tests and bound sanity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointQuadratic {
    pub dim: usize,
}

impl PointQuadratic {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl LossModel for PointQuadratic {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        1
    }

    fn loss(&self, theta: &[f64], z: &LabeledExample) -> f64 {
        assert_eq!(theta.len(), self.dim);
        assert_eq!(z.features.len(), self.dim);
        0.5 * theta
            .iter()
            .zip(&z.features)
            .map(|(&t, &x)| (t - x) * (t - x))
            .sum::<f64>()
    }

    fn grad_theta(&self, theta: &[f64], z: &LabeledExample) -> Vec<f64> {
        assert_eq!(theta.len(), self.dim);
        theta
            .iter()
            .zip(&z.features)
            .map(|(&t, &x)| t - x)
            .collect()
    }

    fn grad_input(&self, theta: &[f64], z: &LabeledExample) -> Vec<f64> {
        assert_eq!(theta.len(), self.dim);
        theta
            .iter()
            .zip(&z.features)
            .map(|(&t, &x)| x - t)
            .collect()
    }

    fn hvp_theta(&self, theta: &[f64], _z: &LabeledExample, v: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.dim);
        assert_eq!(v.len(), self.dim);
        v.to_vec()
    }

    fn is_convex_in_theta(&self) -> bool {
        true
    }
}
