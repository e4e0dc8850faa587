use std::f64::consts::PI;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::LatentCode;
use crate::noise::NoiseModel;
use crate::{Error, Result};

/// Loss components, each a sum divided by the image pixel count and averaged
/// over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.recon.is_finite() && self.kl.is_finite()
    }
}

/// `-sum_i log p(x_i | s_i)` over an image.
pub fn reconstruction_nll(model: &impl NoiseModel, x: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>) -> Result<f64> {
    if x.dim() != s.dim() {
        return Err(Error::Dimension(format!("x {:?} vs s {:?}", x.dim(), s.dim())));
    }
    Ok(-x.iter().zip(s.iter()).map(|(&xi, &si)| model.log_prob(xi, si)).sum::<f64>())
}

/// Closed-form `KL(q(z|x) || N(0, I))` summed over all latent dimensions and
/// positions.
pub fn kl_divergence(code: &LatentCode) -> f64 {
    code.mu
        .iter()
        .zip(code.log_var.iter())
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

pub(crate) fn gaussian_log_prob(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn kl_analytic_cases() {
        let zero = LatentCode {
            mu: Array3::zeros((2, 3, 3)),
            log_var: Array3::zeros((2, 3, 3)),
        };
        assert_eq!(kl_divergence(&zero), 0.0);
        let one = LatentCode {
            mu: Array3::from_elem((1, 1, 1), 1.0),
            log_var: Array3::zeros((1, 1, 1)),
        };
        assert!((kl_divergence(&one) - 0.5).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn kl_is_nonnegative(m in -5.0f64..5.0, lv in -10.0f64..10.0) {
            let code = LatentCode { mu: Array3::from_elem((1, 1, 1), m), log_var: Array3::from_elem((1, 1, 1), lv) };
            proptest::prop_assert!(kl_divergence(&code) >= 0.0);
        }
    }
}
