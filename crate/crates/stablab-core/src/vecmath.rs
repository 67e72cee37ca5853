//! Small dense-vector helpers over `&[f64]`.
//!
//! Everything at desk scale fits in flat slices; no linear-algebra crate is
//! needed for dot products and norms.

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Max-abs norm.
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Euclidean distance between two slices.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Max-abs distance between two slices.
pub fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `y += s * x`.
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Elementwise difference `a - b`.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Scale in place.
pub fn scale(s: f64, a: &mut [f64]) {
    for x in a.iter_mut() {
        *x *= s;
    }
}

/// Sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamp every coordinate to `[lo, hi]`.
pub fn clamp_box(a: &mut [f64], lo: f64, hi: f64) {
    for x in a.iter_mut() {
        *x = x.clamp(lo, hi);
    }
}

/// Spectral norm of a symmetric operator given only matrix-vector
/// products.
///
/// Iterates on the squared operator so mirrored eigenvalue pairs (common in
/// indefinite Hessians) cannot stall the iteration, with a Rayleigh-quotient
/// stopping rule whose geometric tail is extrapolated from the observed
/// contraction ratio. Returns `(norm, converged)`; a zero operator reports
/// `(0, true)`.
pub fn power_iteration<F>(
    dim: usize,
    mut matvec: F,
    max_iters: usize,
    tol: f64,
    start: &[f64],
) -> (f64, bool)
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    debug_assert_eq!(start.len(), dim);
    let mut v = start.to_vec();
    let n = norm2(&v);
    if n == 0.0 {
        return (0.0, true);
    }
    scale(1.0 / n, &mut v);

    let mut rayleigh = 0.0_f64; // of the squared operator
    let mut prev_delta = f64::INFINITY;
    for _ in 0..max_iters {
        let hv = matvec(&v);
        let w = matvec(&hv);
        let wn = norm2(&w);
        if wn < 1e-300 {
            // Operator annihilates the iterate: spectral norm is 0 up to
            // the deflated component.
            return (0.0, true);
        }
        let new_rayleigh = dot(&v, &w);
        v = w;
        scale(1.0 / wn, &mut v);
        let delta = (new_rayleigh - rayleigh).abs();
        let scale_ref = new_rayleigh.abs().max(1.0);
        if delta < tol * scale_ref {
            let ratio = if prev_delta > 0.0 && prev_delta.is_finite() {
                (delta / prev_delta).min(0.9999)
            } else {
                0.0
            };
            let tail = delta * ratio / (1.0 - ratio);
            if tail < tol * scale_ref {
                return (new_rayleigh.abs().sqrt(), true);
            }
        }
        prev_delta = delta;
        rayleigh = new_rayleigh;
    }
    (rayleigh.abs().sqrt(), false)
}
