use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::ImageStack;
use crate::rng::rng_from_seed;
use crate::{Error, Image, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    #[default]
    Gaussian,
    /// Poisson resampling, then additive Gaussian, then salt-and-pepper.
    PoissonGaussianSaltpepper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub gaussian_sigma: f64,
    pub poisson_lambda: f64,
    pub saltpepper_fraction: f64,
    pub rng_seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            kind: CorruptionKind::Gaussian,
            gaussian_sigma: 0.0,
            poisson_lambda: 1.0,
            saltpepper_fraction: 0.0,
            rng_seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            gaussian_sigma: sigma,
            rng_seed: seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::Input(format!("gaussian_sigma must be >= 0, got {}", self.gaussian_sigma)));
        }
        if !(0.0..=1.0).contains(&self.saltpepper_fraction) {
            return Err(Error::Input(format!(
                "saltpepper_fraction must lie in [0, 1], got {}",
                self.saltpepper_fraction
            )));
        }
        if self.kind == CorruptionKind::PoissonGaussianSaltpepper && !(self.poisson_lambda > 0.0) {
            return Err(Error::Input(format!("poisson_lambda must be > 0, got {}", self.poisson_lambda)));
        }
        Ok(())
    }
}

/// Corrupts one clean image with the given recipe, drawing from `rng`.
pub fn corrupt_image(img: &Image, spec: &CorruptionSpec, rng: &mut impl Rng) -> Result<Image> {
    spec.validate()?;
    let normal = Normal::new(0.0, spec.gaussian_sigma).expect("validated sigma");
    match spec.kind {
        CorruptionKind::Gaussian => Ok(img.map(|&s| s + normal.sample(rng))),
        CorruptionKind::PoissonGaussianSaltpepper => {
            if let Some(&v) = img.iter().find(|&&v| v < 0.0) {
                return Err(Error::Domain(format!("Poisson corruption needs non-negative intensities, found {v}")));
            }
            let lambda = spec.poisson_lambda;
            let mut out = img.clone();
            for v in out.iter_mut() {
                let rate = *v * lambda;
                let counts = if rate > 0.0 {
                    Poisson::new(rate).expect("positive rate").sample(rng)
                } else {
                    0.0
                };
                *v = counts / lambda + normal.sample(rng);
            }
            if spec.saltpepper_fraction > 0.0 {
                for v in out.iter_mut() {
                    if rng.random::<f64>() < spec.saltpepper_fraction {
                        *v = if rng.random::<bool>() { 255.0 } else { 0.0 };
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Corrupts every image of a stack; bit-reproducible for a fixed seed.
pub fn corrupt(stack: &ImageStack, spec: &CorruptionSpec) -> Result<ImageStack> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.rng_seed);
    let images = stack
        .images
        .iter()
        .map(|img| corrupt_image(img, spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    ImageStack::new(format!("{}_corrupted", stack.name), images)
}
