use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{standard_normal, NoiseModel};
use crate::{Error, Result};

/// Signal-independent Gaussian noise, e.g. for synthetically corrupted data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoiseModel {
    pub sigma: f64,
}

impl GaussianNoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Input(format!("gaussian sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }
}

impl NoiseModel for GaussianNoiseModel {
    fn log_prob(&self, x: f64, s: f64) -> f64 {
        let var = self.sigma * self.sigma;
        -0.5 * (2.0 * PI * var).ln() - (x - s) * (x - s) / (2.0 * var)
    }

    fn log_prob_and_ds(&self, x: f64, s: f64) -> (f64, f64) {
        let var = self.sigma * self.sigma;
        (self.log_prob(x, s), (x - s) / var)
    }

    fn effective_std(&self, _s: f64) -> f64 {
        self.sigma
    }

    fn sample(&self, s: f64, rng: &mut dyn rand::RngCore) -> f64 {
        s + self.sigma * standard_normal(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_sigma_at_mode() {
        let m = GaussianNoiseModel::new(1.0).unwrap();
        assert!((m.log_prob(3.0, 3.0) - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(GaussianNoiseModel::new(0.0).is_err());
        assert!(GaussianNoiseModel::new(-1.0).is_err());
    }
}
