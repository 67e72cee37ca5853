//! Synthetic dataset generators: weighted finite populations in the unit
//! box, deterministic per seed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FinitePopulation, LabeledExample};
use crate::error::{Error, Result};

/// Class-conditional noise scale of the Gaussian mixture.
const MIXTURE_STD: f64 = 0.08;
/// Pixel noise of the glyph digits.
const DIGIT_NOISE: f64 = 0.08;

/// Available generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DatasetSpec {
    /// Isotropic Gaussian blobs with centers `separation` apart, clipped to
    /// the unit box. With separation 0 the class conditionals coincide.
    GaussianMixture {
        dim: usize,
        classes: usize,
        separation: f64,
        size: usize,
        seed: u64,
    },
    /// The interleaved half-moons in two dimensions.
    TwoMoons { size: usize, noise: f64, seed: u64 },
    /// Ten 4x4 glyph prototypes with pixel noise.
    GridDigits { size: usize, seed: u64 },
}

/// Build the population described by `spec`.
pub fn make_dataset(spec: &DatasetSpec) -> Result<FinitePopulation> {
    match *spec {
        DatasetSpec::GaussianMixture {
            dim,
            classes,
            separation,
            size,
            seed,
        } => gaussian_mixture(dim, classes, separation, size, seed),
        DatasetSpec::TwoMoons { size, noise, seed } => two_moons(size, noise, seed),
        DatasetSpec::GridDigits { size, seed } => grid_digits(size, seed),
    }
}

fn gaussian_mixture(
    dim: usize,
    classes: usize,
    separation: f64,
    size: usize,
    seed: u64,
) -> Result<FinitePopulation> {
    if size == 0 || dim == 0 || classes < 2 {
        return Err(Error::InvalidConfig(
            "gaussian mixture needs size >= 1, dim >= 1, classes >= 2".into(),
        ));
    }
    let mut rng = crate::rng::substream(seed, "gaussian-mixture");
    // Centers on a circle in the first two coordinates (a diagonal segment
    // when dim == 1), all at distance separation/2 from the box center.
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            let mut center = vec![0.5; dim];
            center[0] += 0.5 * separation * angle.cos();
            if dim > 1 {
                center[1] += 0.5 * separation * angle.sin();
            }
            center
        })
        .collect();
    let points = (0..size)
        .map(|i| {
            let label = i % classes;
            let features = centers[label]
                .iter()
                .map(|&c| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    (c + MIXTURE_STD * g).clamp(0.0, 1.0)
                })
                .collect();
            LabeledExample::new(features, label)
        })
        .collect();
    FinitePopulation::uniform(points)
}

fn two_moons(size: usize, noise: f64, seed: u64) -> Result<FinitePopulation> {
    if size == 0 {
        return Err(Error::InvalidConfig("two-moons needs size >= 1".into()));
    }
    let mut rng = crate::rng::substream(seed, "two-moons");
    let points = (0..size)
        .map(|i| {
            let label = i % 2;
            let t = std::f64::consts::PI * rng.random::<f64>();
            let (mut x, mut y) = if label == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let gx: f64 = StandardNormal.sample(&mut rng);
            let gy: f64 = StandardNormal.sample(&mut rng);
            x += noise * gx;
            y += noise * gy;
            // Affine map of the raw range onto most of the unit box.
            let fx = ((x + 1.2) / 3.4).clamp(0.0, 1.0);
            let fy = ((y + 0.7) / 2.0).clamp(0.0, 1.0);
            LabeledExample::new(vec![fx, fy], label)
        })
        .collect();
    FinitePopulation::uniform(points)
}

/// 4x4 prototypes for the ten digits, row-major.
const DIGIT_GLYPHS: [[u8; 16]; 10] = [
    [1, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 1], // 0
    [0, 0, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 1, 1, 1], // 1
    [1, 1, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 1, 1, 1], // 2
    [1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0], // 3
    [1, 0, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0, 0, 0, 1, 0], // 4
    [1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1, 0], // 5
    [0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 0], // 6
    [1, 1, 1, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0], // 7
    [0, 1, 1, 0, 1, 1, 1, 1, 1, 0, 0, 1, 0, 1, 1, 0], // 8
    [0, 1, 1, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 0, 1], // 9
];

fn grid_digits(size: usize, seed: u64) -> Result<FinitePopulation> {
    if size == 0 {
        return Err(Error::InvalidConfig("grid-digits needs size >= 1".into()));
    }
    let mut rng = crate::rng::substream(seed, "grid-digits");
    let points = (0..size)
        .map(|i| {
            let label = i % 10;
            let features = DIGIT_GLYPHS[label]
                .iter()
                .map(|&bit| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    (0.2 + 0.6 * bit as f64 + DIGIT_NOISE * g).clamp(0.0, 1.0)
                })
                .collect();
            LabeledExample::new(features, label)
        })
        .collect();
    FinitePopulation::uniform(points)
}
