//! PSNR, sample diversity and the parameter studies built on them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{compute_stats, corrupt, extract_patches, CorruptionSpec, ImageStack};
use crate::inference::{mmse, sample_posterior, SampleSet};
use crate::nn::Real;
use crate::noise::{GaussianNoiseModel, PixelNoiseModel};
use crate::rng::{derive_indexed, derive_seed};
use crate::train::{train, TrainConfig, TrainReport};
use crate::vae::{ArchitectureConfig, Likelihood, VaeModel};
use crate::{Error, Image, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RangeMode {
    #[default]
    GtMinmaxPerImage,
    #[serde(rename = "fixed_255")]
    Fixed255,
}

impl std::fmt::Display for RangeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RangeMode::GtMinmaxPerImage => "gt_minmax_per_image",
            RangeMode::Fixed255 => "fixed_255",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PsnrConfig {
    pub range_mode: RangeMode,
}

impl PsnrConfig {
    pub fn fixed_255() -> Self {
        PsnrConfig { range_mode: RangeMode::Fixed255 }
    }
}

/// `20 log10(range / rmse)`; `+inf` when the images are identical.
pub fn psnr(gt: &Image, pred: &Image, cfg: &PsnrConfig) -> Result<f64> {
    if gt.dim() != pred.dim() {
        return Err(Error::Dimension(format!("ground truth {:?} vs prediction {:?}", gt.dim(), pred.dim())));
    }
    let range = match cfg.range_mode {
        RangeMode::Fixed255 => 255.0,
        RangeMode::GtMinmaxPerImage => {
            let (lo, hi) = gt.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            hi - lo
        }
    };
    if !(range > 0.0) {
        return Err(Error::Domain(format!("PSNR range must be positive, got {range}")));
    }
    let mse = gt.iter().zip(pred.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / gt.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (range / mse.sqrt()).log10())
}

/// Mean of the finite values and the number of infinite ones left out.
pub fn finite_mean(values: &[f64]) -> (f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    (mean, values.len() - finite.len())
}

/// Population standard deviation of the per-sample PSNRs.
pub fn diversity_std_psnr(gt: &Image, set: &SampleSet, cfg: &PsnrConfig) -> Result<f64> {
    if set.len() < 2 {
        return Err(Error::Input(format!("diversity needs at least 2 samples, got {}", set.len())));
    }
    let v = set.samples.iter().map(|s| psnr(gt, s, cfg)).collect::<Result<Vec<_>>>()?;
    if v.iter().all(|&p| p == v[0]) {
        return Ok(0.0);
    }
    if v.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("a sample reproduces the ground truth exactly; spread of PSNRs undefined".into()));
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Ok((v.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / v.len() as f64).sqrt())
}

/// PSNR of the MMSE estimate from the first `k` samples, for each `k`.
pub fn psnr_vs_k(gt: &Image, set: &SampleSet, ks: &[usize], cfg: &PsnrConfig) -> Result<Vec<(usize, f64)>> {
    ks.iter()
        .map(|&k| {
            if k == 0 || k > set.len() {
                return Err(Error::Input(format!("k = {k} outside 1..={}", set.len())));
            }
            let sub = SampleSet::new(set.samples[..k].to_vec(), set.source.clone(), set.seed)?;
            Ok((k, psnr(gt, &mmse(&sub), cfg)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub index: usize,
    pub input_psnr: f64,
    pub mmse_psnr: f64,
    pub diversity: f64,
}

/// Denoising quality over a set of images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseEvaluation {
    pub rows: Vec<ImageEval>,
    pub k: usize,
    pub range_mode: RangeMode,
    pub input_psnr: f64,
    pub mmse_psnr: f64,
    pub diversity: f64,
    /// Infinite PSNR values excluded from the means.
    pub n_infinite: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub k: usize,
    pub noise_tag: String,
}

impl DenoiseEvaluation {
    pub fn diversity_report(&self, noise_tag: impl Into<String>) -> DiversityReport {
        DiversityReport {
            per_image: self.rows.iter().map(|r| r.diversity).collect(),
            mean: self.diversity,
            k: self.k,
            noise_tag: noise_tag.into(),
        }
    }
}

/// Draws `k` posterior samples per noisy image and scores the MMSE estimate,
/// the noisy input and the sample spread against the clean image.
pub fn evaluate_denoising<T: Real>(
    model: &VaeModel<T>,
    noisy: &[Image],
    clean: &[Image],
    k: usize,
    seed: u64,
    cfg: &PsnrConfig,
) -> Result<DenoiseEvaluation> {
    if noisy.len() != clean.len() || noisy.is_empty() {
        return Err(Error::Input(format!("{} noisy vs {} clean images", noisy.len(), clean.len())));
    }
    let mut rows = Vec::with_capacity(noisy.len());
    for (i, (x, gt)) in noisy.iter().zip(clean).enumerate() {
        let set = sample_posterior(model, x, k, derive_indexed(seed, "image", i as u64))?;
        rows.push(ImageEval {
            index: i,
            input_psnr: psnr(gt, x, cfg)?,
            mmse_psnr: psnr(gt, &mmse(&set), cfg)?,
            diversity: if k >= 2 { diversity_std_psnr(gt, &set, cfg)? } else { 0.0 },
        });
    }
    let col = |f: fn(&ImageEval) -> f64| finite_mean(&rows.iter().map(f).collect::<Vec<_>>());
    let (input_psnr, n_in) = col(|r| r.input_psnr);
    let (mmse_psnr, n_out) = col(|r| r.mmse_psnr);
    let (diversity, _) = col(|r| r.diversity);
    Ok(DenoiseEvaluation { rows, k, range_mode: cfg.range_mode, input_psnr, mmse_psnr, diversity, n_infinite: n_in + n_out })
}

/// Shared settings of the training studies.
#[derive(Clone, Debug)]
pub struct StudySetup {
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    pub patch_size: usize,
    pub val_fraction: f64,
    /// Posterior samples per evaluated image.
    pub samples: usize,
    pub psnr: PsnrConfig,
    pub seed: u64,
}

/// Trains one model on `noisy` with the given likelihood and KL weight.
pub fn fit_model(noisy: &ImageStack, likelihood: Likelihood, setup: &StudySetup, beta: f64) -> Result<(VaeModel<f32>, TrainReport)> {
    let mut stack = noisy.clone();
    let stats = compute_stats(&mut stack)?;
    let (tr, val) = extract_patches(&stack, setup.patch_size, setup.val_fraction, derive_seed(setup.seed, "patches"))?;
    let model = VaeModel::new(setup.arch.clone(), stats, likelihood, derive_seed(setup.seed, "init"))?;
    let cfg = TrainConfig { beta, seed: setup.seed, ..setup.train.clone() };
    train(model, &tr, &val, &cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    pub input_psnr: f64,
    pub mmse_psnr: f64,
    pub diversity: f64,
    pub best_epoch: usize,
    pub stop_reason: String,
}

/// One model per KL weight, all from the same seed, scored on `clean`.
pub fn beta_sweep(noisy: &ImageStack, clean: &[Image], likelihood: &Likelihood, betas: &[f64], setup: &StudySetup) -> Result<Vec<BetaRow>> {
    if betas.is_empty() {
        return Err(Error::Input("beta list is empty".into()));
    }
    betas
        .iter()
        .map(|&beta| {
            let run = || -> Result<BetaRow> {
                let (model, report) = fit_model(noisy, likelihood.clone(), setup, beta)?;
                let ev = evaluate_denoising(&model, &noisy.images, clean, setup.samples, derive_seed(setup.seed, "eval"), &setup.psnr)?;
                Ok(BetaRow {
                    beta,
                    input_psnr: ev.input_psnr,
                    mmse_psnr: ev.mmse_psnr,
                    diversity: ev.diversity,
                    best_epoch: report.best_epoch,
                    stop_reason: format!("{:?}", report.stop_reason),
                })
            };
            run().map_err(|e| e.context(format!("beta = {beta}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub input_psnr: f64,
    pub mmse_psnr: f64,
    pub diversity: f64,
}

/// Corrupts the same clean set at each Gaussian noise level, trains a model
/// per level with the matching noise model, and reports sample diversity.
pub fn diversity_study(clean: &ImageStack, sigmas: &[f64], setup: &StudySetup, corruption_seed: u64) -> Result<Vec<NoiseRow>> {
    if sigmas.is_empty() {
        return Err(Error::Input("sigma list is empty".into()));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let run = || -> Result<NoiseRow> {
                let noisy = corrupt(clean, &CorruptionSpec::gaussian(sigma, corruption_seed))?;
                let lik = Likelihood::Noise { model: PixelNoiseModel::Gaussian(GaussianNoiseModel::new(sigma)?) };
                let (model, _) = fit_model(&noisy, lik, setup, setup.train.beta)?;
                let ev = evaluate_denoising(&model, &noisy.images, &clean.images, setup.samples, derive_seed(setup.seed, "eval"), &setup.psnr)?;
                Ok(NoiseRow { sigma, input_psnr: ev.input_psnr, mmse_psnr: ev.mmse_psnr, diversity: ev.diversity })
            };
            run().map_err(|e| e.context(format!("sigma = {sigma}")))
        })
        .collect()
}

/// Writes serializable rows as CSV with a header; infinities appear as `inf`.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
