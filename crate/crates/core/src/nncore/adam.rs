use indexmap::IndexMap;
use ndarray::{ArrayD, Zip};

use super::params::Parameterized;
use crate::error::{Error, Result};

/// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
///
/// Moment buffers are keyed by parameter name and created lazily on the
/// first step that sees a parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: IndexMap<String, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: IndexMap::new() }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update of `params` from `grads`, which must have the same
    /// structure. Nothing is modified if any gradient is non-finite.
    pub fn step<M: Parameterized>(&mut self, params: &mut M, grads: &M, lr: f64) -> Result<()> {
        let grads = grads.params();
        for (name, g) in &grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("non-finite gradient for parameter `{name}`")));
            }
        }
        let mut targets = params.params_mut();
        if targets.len() != grads.len() {
            return Err(Error::Dimension(format!("{} parameters but {} gradients", targets.len(), grads.len())));
        }
        for ((name, p), (gname, g)) in targets.iter().zip(&grads) {
            if name != gname || p.shape() != g.shape() {
                return Err(Error::Dimension(format!("gradient `{gname}` does not match parameter `{name}`")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((name, p), (_, g)) in targets.iter_mut().zip(&grads) {
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (ArrayD::zeros(g.shape()), ArrayD::zeros(g.shape())));
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }

    /// Moment buffers as `(name, first, second)`.
    pub fn state(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>, &ArrayD<f64>)> {
        self.moments.iter().map(|(k, (m, v))| (k.as_str(), m, v))
    }

    pub fn from_state(step: u64, moments: IndexMap<String, (ArrayD<f64>, ArrayD<f64>)>) -> Self {
        Self { step, moments, ..Self::default() }
    }
}
