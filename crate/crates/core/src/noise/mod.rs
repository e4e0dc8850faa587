//! Pixel-wise observation likelihoods `p(x_i | s_i)`.
//!
//! All models are defined on raw intensities. The joint image likelihood is
//! the product over pixels, so the image log-likelihood is the sum of the
//! per-pixel values returned by [`log_likelihood`].

mod calibration;
mod container;
mod gaussian;
mod gmm;
mod linear;

pub use calibration::CalibrationStack;
pub use container::{deserialize, read_noise_model, serialize, write_noise_model, NOISE_MAGIC, NOISE_VERSION};
pub use gaussian::GaussianNoiseModel;
pub use gmm::{fit_gmm, fit_gmm_pairs, GmmFit, GmmFitConfig, GmmNoiseModel, GMM_VARIANCE_FLOOR};
pub use linear::{colearned_variance, LinearVarianceModel};

use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::{Error, Image, Result};

/// Evaluates `log p(x | s)` for a single pixel.
pub trait NoiseModel {
    fn log_prob(&self, x: f64, s: f64) -> f64;

    /// Log-probability together with its derivative with respect to `s`.
    fn log_prob_and_ds(&self, x: f64, s: f64) -> (f64, f64);

    /// Standard deviation of `x` given `s`.
    fn effective_std(&self, s: f64) -> f64;

    /// Draws one observation for signal `s`.
    fn sample(&self, s: f64, rng: &mut dyn rand::RngCore) -> f64;
}

/// Any of the supported pixel noise models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PixelNoiseModel {
    Gaussian(GaussianNoiseModel),
    Gmm(GmmNoiseModel),
    LinearVariance(LinearVarianceModel),
}

impl PixelNoiseModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PixelNoiseModel::Gaussian(_) => "gaussian",
            PixelNoiseModel::Gmm(_) => "gmm",
            PixelNoiseModel::LinearVariance(_) => "linear_variance",
        }
    }

    fn inner(&self) -> &dyn NoiseModel {
        match self {
            PixelNoiseModel::Gaussian(m) => m,
            PixelNoiseModel::Gmm(m) => m,
            PixelNoiseModel::LinearVariance(m) => m,
        }
    }
}

impl NoiseModel for PixelNoiseModel {
    fn log_prob(&self, x: f64, s: f64) -> f64 {
        self.inner().log_prob(x, s)
    }

    fn log_prob_and_ds(&self, x: f64, s: f64) -> (f64, f64) {
        self.inner().log_prob_and_ds(x, s)
    }

    fn effective_std(&self, s: f64) -> f64 {
        self.inner().effective_std(s)
    }

    fn sample(&self, s: f64, rng: &mut dyn rand::RngCore) -> f64 {
        self.inner().sample(s, rng)
    }
}

impl From<GaussianNoiseModel> for PixelNoiseModel {
    fn from(m: GaussianNoiseModel) -> Self {
        PixelNoiseModel::Gaussian(m)
    }
}

impl From<GmmNoiseModel> for PixelNoiseModel {
    fn from(m: GmmNoiseModel) -> Self {
        PixelNoiseModel::Gmm(m)
    }
}

impl From<LinearVarianceModel> for PixelNoiseModel {
    fn from(m: LinearVarianceModel) -> Self {
        PixelNoiseModel::LinearVariance(m)
    }
}

/// Per-pixel `log p(x_i | s_i)`.
pub fn log_likelihood(model: &impl NoiseModel, x: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>) -> Result<Image> {
    if x.dim() != s.dim() {
        return Err(Error::Dimension(format!(
            "observation {:?} and signal {:?} differ in shape",
            x.dim(),
            s.dim()
        )));
    }
    let mut out = Image::zeros(x.dim());
    Zip::from(&mut out).and(&x).and(&s).for_each(|o, &xi, &si| *o = model.log_prob(xi, si));
    Ok(out)
}

/// Adds noise drawn from `model` to a clean image.
pub fn sample_image(model: &impl NoiseModel, s: ArrayView2<'_, f64>, rng: &mut dyn rand::RngCore) -> Image {
    s.map(|&v| model.sample(v, rng))
}

pub(crate) fn standard_normal(rng: &mut dyn rand::RngCore) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}
