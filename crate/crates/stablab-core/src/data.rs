//! Data points and finite ground-truth populations.
//!
//! A population with finitely many weighted points stands in for the data
//! distribution, so every population expectation is an exact weighted sum
//! instead of a Monte Carlo estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One data point: a feature vector in the unit box and a class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    /// Feature coordinates, each in `[0, 1]`.
    pub features: Vec<f64>,
    /// Class index, `< num_classes` of the owning population/model.
    pub label: usize,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }

    /// Check the unit-box invariant and the label range.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.label >= num_classes {
            return Err(Error::InvalidConfig(format!(
                "label {} out of range for {} classes",
                self.label, num_classes
            )));
        }
        for (j, &x) in self.features.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidConfig(format!(
                    "feature[{j}] = {x} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// A finite weighted population: the exact data distribution of the lab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePopulation {
    points: Vec<LabeledExample>,
    weights: Vec<f64>,
    num_classes: usize,
    /// Cumulative weights, for O(log n) sampling.
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl FinitePopulation {
    /// Build a population; weights must be nonnegative and sum to 1 within 1e-12.
    pub fn new(points: Vec<LabeledExample>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset("population has no points".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidConfig("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        let dim = points[0].features.len();
        if points.iter().any(|p| p.features.len() != dim) {
            return Err(Error::InvalidConfig(
                "inconsistent feature dimensions".into(),
            ));
        }
        let num_classes = points.iter().map(|p| p.label).max().unwrap() + 1;
        for p in &points {
            p.validate(num_classes)?;
        }
        let mut pop = Self {
            points,
            weights,
            num_classes,
            cumulative: Vec::new(),
        };
        pop.rebuild_cumulative();
        Ok(pop)
    }

    /// Uniform weights over the given points.
    pub fn uniform(points: Vec<LabeledExample>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyDataset("population has no points".into()));
        }
        let w = 1.0 / n as f64;
        let mut weights = vec![w; n];
        // Force an exact unit sum regardless of rounding in 1/n.
        let sum: f64 = weights.iter().sum();
        weights[n - 1] += 1.0 - sum;
        Self::new(points, weights)
    }

    fn rebuild_cumulative(&mut self) {
        let mut acc = 0.0;
        self.cumulative = self
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].features.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn points(&self) -> &[LabeledExample] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &LabeledExample {
        &self.points[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Exact population expectation of a scalar function.
    pub fn expectation<F: FnMut(&LabeledExample) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| w * f(p))
            .sum()
    }

    /// Exact population expectation of a vector-valued function.
    pub fn expectation_vec<F: FnMut(&LabeledExample) -> Vec<f64>>(&self, mut f: F) -> Vec<f64> {
        let mut acc: Option<Vec<f64>> = None;
        for (p, &w) in self.points.iter().zip(&self.weights) {
            let v = f(p);
            match &mut acc {
                None => {
                    let mut v0 = v;
                    for x in v0.iter_mut() {
                        *x *= w;
                    }
                    acc = Some(v0);
                }
                Some(a) => crate::vecmath::axpy(w, &v, a),
            }
        }
        acc.expect("population is nonempty")
    }

    /// Weighted index draw.
    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.min(self.points.len() - 1),
        }
    }

    /// Rebuild with the same weights but transformed points; labels and
    /// weights are preserved by construction.
    pub fn map_points<F: FnMut(usize, &LabeledExample) -> LabeledExample>(
        &self,
        mut f: F,
    ) -> Result<Self> {
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| f(i, p))
            .collect();
        let mut pop = Self::new(points, self.weights.clone())?;
        // map_points must not change the label alphabet even if a class is unused.
        pop.num_classes = self.num_classes;
        Ok(pop)
    }
}

/// Restore the cumulative cache after deserialization.
impl FinitePopulation {
    pub fn after_deserialize(mut self) -> Self {
        self.rebuild_cumulative();
        self
    }
}
