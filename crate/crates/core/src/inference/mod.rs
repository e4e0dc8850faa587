//! Posterior sampling and point estimates built from sample sets.

mod meanshift;
mod tiled;

pub use meanshift::{
    bandwidth_schedule, cluster_solutions, map_estimate, mean_shift, tile_modes, Cluster, MeanShiftConfig, Region, TileMode,
};
pub use tiled::denoise_tiled;

use ndarray::{s, Array2};
use rand_distr::{Distribution, StandardNormal};

use crate::nn::{Real, Tensor};
use crate::rng::{rng_from_seed, Rng};
use crate::vae::{LatentCode, VaeModel};
use crate::{Error, Image, Result};

/// Default number of samples averaged for an MMSE estimate.
pub const DEFAULT_MMSE_SAMPLES: usize = 1000;

// Upper bound on decoder activations per decode batch (values).
const DECODE_BUDGET: usize = 1 << 24;

/// `K` decoded posterior (or prior) samples for one image, in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Image>,
    pub source: String,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(samples: Vec<Image>, source: impl Into<String>, seed: u64) -> Result<Self> {
        let dim = samples.first().map(|s| s.dim()).ok_or_else(|| Error::Input("a sample set needs K >= 1".into()))?;
        if samples.iter().any(|s| s.dim() != dim) {
            return Err(Error::Dimension("samples in a set must share one shape".into()));
        }
        Ok(Self {
            samples,
            source: source.into(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.samples[0].dim()
    }

    /// Hex digest of all sample values.
    pub fn digest(&self) -> String {
        crate::rng::hash_f64(self.samples.iter().flat_map(|s| s.iter().copied()))
    }
}

/// Pixel-wise mean of the samples.
pub fn mmse(set: &SampleSet) -> Image {
    let mut acc = Image::zeros(set.dim());
    for s in &set.samples {
        acc += s;
    }
    acc / set.len() as f64
}

/// One standard-normal field of shape `(c, h, w)` per call, in row-major order.
pub(crate) fn eps_field(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Reflect-pads bottom/right so both sides are multiples of `f`.
pub(crate) fn pad_to_multiple(x: &Image, f: usize) -> Image {
    let (h, w) = x.dim();
    let (hp, wp) = (h.div_ceil(f) * f, w.div_ceil(f) * f);
    if (hp, wp) == (h, w) {
        return x.clone();
    }
    Array2::from_shape_fn((hp, wp), |(y, xx)| x[[reflect(y, h), reflect(xx, w)]])
}

pub(crate) fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

fn decode_batch_size<T: Real>(model: &VaeModel<T>, h: usize, w: usize) -> usize {
    let width = model.arch().base_features.max(model.arch().latent_dims_per_position);
    (DECODE_BUDGET / (width * h * w).max(1)).max(1)
}

/// Decodes `k` reparameterized draws from `code`; `eps` supplies one
/// standard-normal field per draw. Output images are `(H, W)` of the code's
/// latent grid times `2^depth`.
pub(crate) fn decode_draws<T: Real>(
    model: &VaeModel<T>,
    code: &LatentCode,
    k: usize,
    mut eps: impl FnMut() -> Vec<f64>,
) -> Vec<Image> {
    let (c, lh, lw) = code.dim();
    let f = model.arch().downsampling();
    let chunk = decode_batch_size(model, lh * f, lw * f);
    let plane = lh * lw;
    let mu = code.mu.as_slice().expect("standard layout");
    let sd: Vec<f64> = code.log_var.iter().map(|&lv| (0.5 * lv).exp()).collect();
    let mut out = Vec::with_capacity(k);
    let mut done = 0;
    while done < k {
        let b = chunk.min(k - done);
        let mut z = Tensor::<T>::zeros(c, b, lh, lw);
        for n in 0..b {
            let e = eps();
            for ch in 0..c {
                let dst = z.plane_of_mut(ch, n);
                for i in 0..plane {
                    let j = ch * plane + i;
                    dst[i] = T::from_f64_lossy(mu[j] + sd[j] * e[j]);
                }
            }
        }
        let dec = model.decode_tensor(&z);
        out.extend((0..b).map(|n| model.output_signal(&dec, n)));
        done += b;
    }
    out
}

/// Decodes `k` draws from a given latent code; also the test hook for
/// hand-built (for example zero-variance) posteriors.
pub fn sample_from_code<T: Real>(model: &VaeModel<T>, code: &LatentCode, k: usize, seed: u64) -> Result<SampleSet> {
    if k == 0 {
        return Err(Error::Input("K must be at least 1".into()));
    }
    let (c, lh, lw) = code.dim();
    if c != model.arch().latent_dims_per_position || code.log_var.dim() != code.dim() {
        return Err(Error::Dimension(format!(
            "latent code {:?} does not match {} latent dimensions",
            code.dim(),
            model.arch().latent_dims_per_position
        )));
    }
    let mut rng = rng_from_seed(seed);
    let code = LatentCode {
        mu: code.mu.as_standard_layout().to_owned(),
        log_var: code.log_var.as_standard_layout().to_owned(),
    };
    let samples = decode_draws(model, &code, k, || eps_field(&mut rng, c * lh * lw));
    SampleSet::new(samples, "latent", seed)
}

/// `K` samples `s^k = g(z^k)`, `z^k ~ q(z|x)`, for a raw noisy image.
/// Images whose sides are not multiples of `2^depth` are reflect-padded
/// for the network and cropped back.
pub fn sample_posterior<T: Real>(model: &VaeModel<T>, x: &Image, k: usize, seed: u64) -> Result<SampleSet> {
    if k == 0 {
        return Err(Error::Input("K must be at least 1".into()));
    }
    let (h, w) = x.dim();
    let padded = pad_to_multiple(x, model.arch().downsampling());
    let code = model.encode(model.normalize(padded.view()).view())?;
    let mut set = sample_from_code(model, &code, k, seed)?;
    if padded.dim() != (h, w) {
        for s in set.samples.iter_mut() {
            *s = s.slice(s![..h, ..w]).to_owned();
        }
    }
    set.source = "posterior".into();
    Ok(set)
}

/// Decodes `K` draws from the unit-Gaussian prior.
pub fn generate_from_prior<T: Real>(model: &VaeModel<T>, shape: (usize, usize), k: usize, seed: u64) -> Result<SampleSet> {
    if k == 0 {
        return Err(Error::Input("K must be at least 1".into()));
    }
    let (lh, lw) = model.arch().latent_shape(shape.0, shape.1)?;
    let c = model.arch().latent_dims_per_position;
    let code = LatentCode {
        mu: ndarray::Array3::zeros((c, lh, lw)),
        log_var: ndarray::Array3::zeros((c, lh, lw)),
    };
    let mut set = sample_from_code(model, &code, k, seed)?;
    set.source = "prior".into();
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataStats;
    use crate::noise::GaussianNoiseModel;
    use crate::vae::{ArchitectureConfig, Likelihood};

    pub(crate) fn toy_model() -> VaeModel<f32> {
        toy_model_with(DataStats { mean: 100.0, std: 30.0 })
    }

    fn toy_model_with(stats: DataStats) -> VaeModel<f32> {
        let arch = ArchitectureConfig {
            depth: 2,
            base_features: 4,
            latent_dims_per_position: 3,
            ..Default::default()
        };
        let lik = Likelihood::Noise {
            model: GaussianNoiseModel::new(10.0).unwrap().into(),
        };
        VaeModel::new(arch, stats, lik, 21).unwrap()
    }

    fn noisy(h: usize, w: usize) -> Image {
        Image::from_shape_fn((h, w), |(y, x)| 100.0 + 40.0 * ((y as f64 * 0.3).sin() + (x as f64 * 0.2).cos()))
    }

    #[test]
    fn mmse_trivial_cases() {
        let s = noisy(4, 4);
        let set = SampleSet::new(vec![s.clone(); 5], "t", 0).unwrap();
        assert_eq!(mmse(&set), s);
        let set = SampleSet::new(vec![&s - 3.0, &s + 3.0], "t", 0).unwrap();
        let m = mmse(&set);
        assert!(m.iter().zip(s.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn posterior_samples_are_seeded_and_shaped() {
        let m = toy_model();
        let digest = m.param_digest();
        let x = noisy(16, 20);
        let a = sample_posterior(&m, &x, 7, 3).unwrap();
        let b = sample_posterior(&m, &x, 7, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        assert_eq!(a.dim(), (16, 20));
        assert_ne!(a.samples[0], a.samples[1]);
        assert_eq!(m.param_digest(), digest);
        assert!(sample_posterior(&m, &x, 0, 3).is_err());
    }

    #[test]
    fn zero_variance_code_gives_identical_samples() {
        // Unit data scale so the tolerance applies to the decoder output directly.
        let m = toy_model_with(DataStats { mean: 0.0, std: 1.0 }).cast::<f64>();
        let code = m.encode(m.normalize(noisy(16, 16).view()).view()).unwrap();
        let code = LatentCode {
            log_var: ndarray::Array3::from_elem(code.dim(), -30.0),
            ..code
        };
        let set = sample_from_code(&m, &code, 20, 1).unwrap();
        for s in &set.samples {
            let d = (s - &set.samples[0]).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(d < 1e-5, "{d}");
        }
    }

    #[test]
    fn prior_generation() {
        let m = toy_model();
        let a = generate_from_prior(&m, (16, 8), 4, 9).unwrap();
        assert_eq!(a.dim(), (16, 8));
        assert_eq!(a, generate_from_prior(&m, (16, 8), 4, 9).unwrap());
        assert!(matches!(generate_from_prior(&m, (18, 8), 4, 9), Err(Error::Dimension(_))));
        assert!(generate_from_prior(&m, (16, 8), 0, 9).is_err());
    }

    #[test]
    fn batching_does_not_change_draws() {
        let m = toy_model();
        let code = m.encode(m.normalize(noisy(8, 8).view()).view()).unwrap();
        let many = sample_from_code(&m, &code, 6, 4).unwrap();
        let few = sample_from_code(&m, &code, 2, 4).unwrap();
        assert_eq!(&many.samples[..2], &few.samples[..]);
    }

    #[test]
    fn reflect_indices() {
        let v: Vec<usize> = (0..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(v, vec![0, 1, 2, 1, 0, 1, 2, 1]);
    }
}
