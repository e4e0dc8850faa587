use std::f64::consts::PI;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{standard_normal, NoiseModel};
use crate::{Error, Image, Result};

/// Gaussian noise with variance linear in the signal, clamped from below:
/// `var(s) = max(a * s + b, sigma_min^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearVarianceModel {
    pub a: f64,
    pub b: f64,
    pub sigma_min: f64,
}

impl LinearVarianceModel {
    pub fn new(a: f64, b: f64, sigma_min: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min.is_finite()) {
            return Err(Error::Input(format!("sigma_min must be positive, got {sigma_min}")));
        }
        Ok(Self { a, b, sigma_min })
    }

    pub fn variance(&self, s: f64) -> f64 {
        (self.a * s + self.b).max(self.sigma_min * self.sigma_min)
    }

    /// True when the clamp is active at `s` (no gradient flows to `a`, `b`).
    pub fn is_clamped(&self, s: f64) -> bool {
        self.a * s + self.b < self.sigma_min * self.sigma_min
    }

    /// `(log p, d/ds, d/da, d/db)` at one pixel.
    pub fn log_prob_grads(&self, x: f64, s: f64) -> (f64, f64, f64, f64) {
        let var = self.variance(s);
        let r = x - s;
        let lp = -0.5 * (2.0 * PI * var).ln() - r * r / (2.0 * var);
        let dvar = -0.5 / var + r * r / (2.0 * var * var);
        if self.is_clamped(s) {
            (lp, r / var, 0.0, 0.0)
        } else {
            (lp, r / var + dvar * self.a, dvar * s, dvar)
        }
    }
}

impl NoiseModel for LinearVarianceModel {
    fn log_prob(&self, x: f64, s: f64) -> f64 {
        let var = self.variance(s);
        -0.5 * (2.0 * PI * var).ln() - (x - s) * (x - s) / (2.0 * var)
    }

    fn log_prob_and_ds(&self, x: f64, s: f64) -> (f64, f64) {
        let (lp, ds, _, _) = self.log_prob_grads(x, s);
        (lp, ds)
    }

    fn effective_std(&self, s: f64) -> f64 {
        self.variance(s).sqrt()
    }

    fn sample(&self, s: f64, rng: &mut dyn rand::RngCore) -> f64 {
        s + self.variance(s).sqrt() * standard_normal(rng)
    }
}

/// Per-pixel clamped variance `max(a * s_i + b, sigma_min^2)`.
pub fn colearned_variance(s: ArrayView2<'_, f64>, model: &LinearVarianceModel) -> Image {
    s.map(|&v| model.variance(v))
}
