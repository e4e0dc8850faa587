use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use divnoise_core::data::{corrupt, load_stack, CorruptionSpec, ImageStack, StackFormat};
use divnoise_core::eval::{self, finite_mean, fit_model, psnr, psnr_vs_k, write_csv, StudySetup};
use divnoise_core::inference::{denoise_tiled, generate_from_prior, map_estimate, mmse, sample_posterior, SampleSet};
use divnoise_core::io::{read_any, write_label_tiff, write_png, write_tiff_stack};
use divnoise_core::noise::{
    fit_gmm, fit_gmm_pairs, read_noise_model, write_noise_model, CalibrationStack, GaussianNoiseModel, GmmFitConfig, PixelNoiseModel,
};
use divnoise_core::plot;
use divnoise_core::rng::{derive_indexed, derive_seed};
use divnoise_core::seg::{self, consensus_avg, seg_score, LabelMap};
use divnoise_core::train::{StopReason, TrainReport};
use divnoise_core::vae::{load_checkpoint, ArchitectureConfig, Likelihood, Mode, VaeModel};
use divnoise_core::{Error, Image};
use ndarray::s;
use serde::Serialize;

use crate::config::{NoiseModelSpec, RunConfig};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const LOCK_FILE: &str = ".divnoise.lock";
const NOISE_MODEL_FILE: &str = "noise_model.dnnm";

/// Exclusive ownership of a run directory for the lifetime of a command.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e).into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn subdir(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let d = cfg.output_dir.join(name);
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    Ok(d)
}

fn existing(p: &Path, what: &str) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", p.display())))
    }
}

fn read_stack(p: &Path, format: Option<StackFormat>, what: &str) -> Result<ImageStack> {
    existing(p, what)?;
    Ok(load_stack(p, format.unwrap_or_else(|| StackFormat::infer(p)))?)
}

struct Inputs {
    noisy: ImageStack,
    clean: Option<ImageStack>,
}

/// With a corruption spec the data are clean and corrupted here; otherwise
/// they are the noisy observations and ground truth is optional.
fn load_inputs(cfg: &RunConfig, input: Option<&Path>) -> Result<Inputs> {
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.path.clone())
        .ok_or_else(|| CliError::Config("no input data: set data.path or pass --input".into()))?;
    let data = read_stack(&path, cfg.data.format, "dataset")?;
    let (noisy, mut clean) = match &cfg.corruption {
        Some(spec) => (corrupt(&data, spec)?, Some(data)),
        None => (data, None),
    };
    if clean.is_none() {
        if let Some(gt) = &cfg.data.ground_truth {
            let gt = read_stack(gt, None, "ground truth")?;
            if gt.len() != noisy.len() {
                return Err(CliError::Config(format!("{} ground-truth images for {} inputs", gt.len(), noisy.len())));
            }
            clean = Some(gt);
        }
    }
    Ok(Inputs { noisy, clean })
}

fn load_model(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<VaeModel<f32>> {
    let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join("best.dnck"));
    existing(&path, "checkpoint")?;
    Ok(load_checkpoint(&path)?)
}

fn fit_calibration(path: &Path, fit: &GmmFitConfig, seed: u64) -> Result<(PixelNoiseModel, f64)> {
    let stack = read_stack(path, None, "calibration stack")?;
    let mut calib = CalibrationStack::new(stack.images).map_err(|e| CliError::Config(format!("calibration: {e}")))?;
    calib.estimate_signal()?;
    let cfg = GmmFitConfig { seed: derive_seed(seed, "gmm"), ..fit.clone() };
    let fit = fit_gmm(&calib, &cfg)?;
    log::info!("gmm fit: {} coefficients, log-likelihood per pixel {:.6}", fit.model.coefficient_count(), fit.log_likelihood);
    Ok((PixelNoiseModel::Gmm(fit.model), fit.log_likelihood))
}

fn study_setup(cfg: &RunConfig, arch: ArchitectureConfig, samples: usize, train_dir: Option<PathBuf>) -> StudySetup {
    let mut train = cfg.train.clone();
    train.output_dir = train_dir;
    StudySetup {
        arch,
        train,
        patch_size: cfg.data.patch_size,
        val_fraction: cfg.data.val_fraction,
        samples,
        psnr: cfg.eval.psnr(),
        seed: derive_seed(cfg.seed, "train"),
    }
}

/// Architecture with its mode matched to the likelihood.
fn arch_for(cfg: &RunConfig, lik: &Likelihood) -> Result<ArchitectureConfig> {
    let want = lik.mode();
    if cfg.arch.mode == Mode::Vanilla && want != Mode::Vanilla {
        return Err(CliError::Config("arch.mode = vanilla cannot be combined with an external or co-learned noise model".into()));
    }
    Ok(ArchitectureConfig { mode: want, ..cfg.arch.clone() })
}

/// Likelihood for every spec except the self-bootstrap, which needs training.
fn direct_likelihood(cfg: &RunConfig) -> Result<Likelihood> {
    Ok(match &cfg.noise_model {
        None if cfg.arch.mode == Mode::Vanilla => Likelihood::Learned,
        None => return Err(CliError::Config("noise_model is required unless arch.mode = vanilla".into())),
        Some(NoiseModelSpec::Learned) => Likelihood::Learned,
        Some(NoiseModelSpec::Gaussian { sigma }) => Likelihood::Noise { model: PixelNoiseModel::Gaussian(GaussianNoiseModel::new(*sigma)?) },
        Some(NoiseModelSpec::Gmm { calibration, fit }) => {
            let (model, _) = fit_calibration(calibration, fit, cfg.seed)?;
            write_noise_model(&cfg.output_dir.join(NOISE_MODEL_FILE), &model)?;
            Likelihood::Noise { model }
        }
        Some(NoiseModelSpec::File { path }) => {
            existing(path, "noise model")?;
            Likelihood::Noise { model: read_noise_model(path)? }
        }
        Some(NoiseModelSpec::Colearn { sigma_min }) => Likelihood::Colearned { sigma_min: *sigma_min },
        Some(NoiseModelSpec::BootstrapSelf { .. }) => {
            return Err(CliError::Config("bootstrap_self noise models are only supported by train and fit-noise".into()))
        }
    })
}

fn check_training(report: &TrainReport) -> Result<()> {
    if report.stop_reason == StopReason::Diverged {
        return Err(CliError::Diverged(format!(
            "{}; best checkpoint from epoch {} was kept",
            report.divergence.as_deref().unwrap_or("non-finite loss"),
            report.best_epoch
        )));
    }
    Ok(())
}

/// Co-learns a linear-variance model, denoises the data with it and fits a
/// GMM to the (noisy, MMSE) pairs.
fn bootstrap_self(cfg: &RunConfig, noisy: &ImageStack, sigma_min: f64, samples: usize, fit: &GmmFitConfig) -> Result<PixelNoiseModel> {
    log::info!("bootstrap (self): co-learning stage");
    let lik = Likelihood::Colearned { sigma_min };
    let arch = arch_for(cfg, &lik)?;
    let dir = subdir(cfg, "bootstrap")?;
    let (model, report) = fit_model(noisy, lik, &study_setup(cfg, arch, samples, Some(dir)), cfg.train.beta)?;
    check_training(&report)?;
    let root = derive_seed(cfg.seed, "bootstrap");
    let mut signals = Vec::with_capacity(noisy.len());
    for (i, x) in noisy.images.iter().enumerate() {
        signals.push(mmse(&sample_posterior(&model, x, samples, derive_indexed(root, "image", i as u64))?));
    }
    let fit_cfg = GmmFitConfig { seed: derive_seed(cfg.seed, "gmm"), ..fit.clone() };
    let fitted = fit_gmm_pairs(&noisy.images, &signals, &fit_cfg)?;
    log::info!("bootstrap (self) gmm: log-likelihood per pixel {:.6}", fitted.log_likelihood);
    let nm = PixelNoiseModel::Gmm(fitted.model);
    write_noise_model(&cfg.output_dir.join(NOISE_MODEL_FILE), &nm)?;
    Ok(nm)
}

pub fn fit_noise(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| cfg.output_dir.join(NOISE_MODEL_FILE));
    let model = match &cfg.noise_model {
        Some(NoiseModelSpec::Gaussian { sigma }) => PixelNoiseModel::Gaussian(GaussianNoiseModel::new(*sigma)?),
        Some(NoiseModelSpec::Gmm { calibration, fit }) => {
            let (model, ll) = fit_calibration(calibration, fit, cfg.seed)?;
            println!("log-likelihood per pixel: {ll:.6}");
            model
        }
        Some(NoiseModelSpec::BootstrapSelf { sigma_min, samples, fit }) => {
            let inputs = load_inputs(cfg, None)?;
            bootstrap_self(cfg, &inputs.noisy, *sigma_min, *samples, fit)?
        }
        Some(NoiseModelSpec::File { .. }) => return Err(CliError::Config("noise model is already a file; nothing to fit".into())),
        Some(NoiseModelSpec::Colearn { .. }) => {
            return Err(CliError::Config("co-learned noise models are fitted by train".into()))
        }
        Some(NoiseModelSpec::Learned) | None => return Err(CliError::Config("fit-noise needs a noise_model section".into())),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_noise_model(&out, &model)?;
    println!("wrote {} noise model to {}", model.kind_name(), out.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg, None)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let lik = match &cfg.noise_model {
        Some(NoiseModelSpec::BootstrapSelf { sigma_min, samples, fit }) => {
            Likelihood::Noise { model: bootstrap_self(cfg, &inputs.noisy, *sigma_min, *samples, fit)? }
        }
        _ => direct_likelihood(cfg)?,
    };
    let arch = arch_for(cfg, &lik)?;
    let setup = study_setup(cfg, arch, 0, Some(cfg.output_dir.clone()));
    let (model, report) = fit_model(&inputs.noisy, lik, &setup, cfg.train.beta)?;
    if let Err(e) = plot::plot_training(&cfg.output_dir.join("training.png"), &report) {
        log::warn!("training plot skipped: {e}");
    }
    println!(
        "trained {} parameters for {} epochs ({:?}); best epoch {}",
        model.parameter_count(),
        report.records.len(),
        report.stop_reason,
        report.best_epoch
    );
    check_training(&report)
}

fn draw(cfg: &RunConfig, model: &VaeModel<f32>, x: &Image, k: usize, seed: u64) -> Result<SampleSet> {
    match cfg.inference.tile {
        Some(tile) => denoise_tiled(model, x, k, tile, cfg.inference.margin, seed).map_err(|e| {
            if matches!(e, Error::Dimension(_)) {
                let f = model.arch().downsampling();
                CliError::Config(format!("{e}; pick --tile and --margin so that tile and tile + 2*margin are multiples of {f}"))
            } else {
                e.into()
            }
        }),
        None => Ok(sample_posterior(model, x, k, seed)?),
    }
}

#[derive(Serialize)]
struct DrawRow {
    image: usize,
    k: usize,
    seconds: f64,
}

#[derive(Serialize)]
struct DigestRow {
    image: usize,
    samples: String,
    mmse: String,
}

pub fn denoise(cfg: &RunConfig, checkpoint: Option<PathBuf>, input: Option<PathBuf>) -> Result<()> {
    let model = load_model(cfg, checkpoint)?;
    let inputs = load_inputs(cfg, input.as_deref())?;
    let out = subdir(cfg, "denoise")?;
    let root = derive_seed(cfg.seed, "denoise");
    let k = cfg.inference.k;
    let (mut mmses, mut maps, mut timing, mut digests) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, x) in inputs.noisy.images.iter().enumerate() {
        let t = Instant::now();
        let set = draw(cfg, &model, x, k, derive_indexed(root, "image", i as u64))?;
        let seconds = t.elapsed().as_secs_f64();
        log::info!("image {i}: {k} samples in {seconds:.2}s");
        let m = mmse(&set);
        digests.push(DigestRow { image: i, samples: set.digest(), mmse: divnoise_core::rng::hash_f64(m.iter().copied()) });
        if cfg.inference.write_samples {
            write_tiff_stack(&out.join(format!("samples_{i:04}.tif")), &set.samples)?;
        }
        if cfg.inference.map {
            maps.push(map_estimate(&set, &cfg.inference.meanshift)?);
        }
        mmses.push(m);
        timing.push(DrawRow { image: i, k, seconds });
    }
    write_tiff_stack(&out.join("mmse.tif"), &mmses)?;
    if !maps.is_empty() {
        write_tiff_stack(&out.join("map.tif"), &maps)?;
    }
    write_csv(&out.join("timing.csv"), &timing)?;
    write_csv(&out.join("digests.csv"), &digests)?;
    println!("denoised {} images with K={k} into {}", mmses.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct PredRow {
    image: usize,
    psnr: f64,
}

#[derive(Serialize)]
struct CurveRow {
    k: usize,
    mmse_psnr: f64,
}

#[derive(Serialize)]
struct EvalSummary {
    range_mode: String,
    k: usize,
    input_psnr: Option<f64>,
    psnr: f64,
    diversity: Option<f64>,
    images: usize,
    /// Infinite PSNR values left out of the means.
    n_infinite: usize,
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

pub fn evaluate(cfg: &RunConfig, checkpoint: Option<PathBuf>, input: Option<PathBuf>) -> Result<()> {
    let inputs = load_inputs(cfg, input.as_deref())?;
    let gt = inputs
        .clean
        .ok_or_else(|| CliError::Config("evaluate needs ground truth: set data.ground_truth or a corruption spec".into()))?;
    let pc = cfg.eval.psnr();
    let out = subdir(cfg, "evaluate")?;
    if let Some(pred_path) = &cfg.eval.prediction {
        let preds = read_stack(pred_path, None, "prediction")?;
        if preds.len() != gt.len() {
            return Err(CliError::Config(format!("{} predictions for {} ground-truth images", preds.len(), gt.len())));
        }
        let rows = gt
            .images
            .iter()
            .zip(&preds.images)
            .enumerate()
            .map(|(i, (g, p))| Ok(PredRow { image: i, psnr: psnr(g, p, &pc)? }))
            .collect::<Result<Vec<_>>>()?;
        let (mean, n_inf) = finite_mean(&rows.iter().map(|r| r.psnr).collect::<Vec<_>>());
        write_csv(&out.join("psnr.csv"), &rows)?;
        let summary = EvalSummary { range_mode: pc.range_mode.to_string(), k: 0, input_psnr: None, psnr: mean, diversity: None, images: rows.len(), n_infinite: n_inf };
        write_json(&out.join("summary.json"), &summary)?;
        println!("PSNR {mean:.3} dB over {} images ({}; {n_inf} infinite excluded)", rows.len(), pc.range_mode);
        return Ok(());
    }
    let model = load_model(cfg, checkpoint)?;
    let mut ks: Vec<usize> = cfg.eval.ks.clone();
    if ks.is_empty() {
        ks.push(cfg.inference.k);
    }
    ks.sort_unstable();
    ks.dedup();
    let kmax = *ks.last().expect("non-empty");
    let root = derive_seed(cfg.seed, "evaluate");
    let mut rows = Vec::new();
    let mut curves = vec![Vec::new(); ks.len()];
    for (i, (x, g)) in inputs.noisy.images.iter().zip(&gt.images).enumerate() {
        let set = draw(cfg, &model, x, kmax, derive_indexed(root, "image", i as u64))?;
        for (j, (_, p)) in psnr_vs_k(g, &set, &ks, &pc)?.into_iter().enumerate() {
            curves[j].push(p);
        }
        rows.push(eval::ImageEval {
            index: i,
            input_psnr: psnr(g, x, &pc)?,
            mmse_psnr: psnr(g, &mmse(&set), &pc)?,
            diversity: if kmax >= 2 { eval::diversity_std_psnr(g, &set, &pc)? } else { 0.0 },
        });
    }
    let curve: Vec<CurveRow> = ks.iter().zip(&curves).map(|(&k, v)| CurveRow { k, mmse_psnr: finite_mean(v).0 }).collect();
    write_csv(&out.join("per_image.csv"), &rows)?;
    write_csv(&out.join("psnr_vs_k.csv"), &curve)?;
    if let Err(e) = plot::plot_psnr_vs_k(&out.join("psnr_vs_k.png"), &curve.iter().map(|c| (c.k, c.mmse_psnr)).collect::<Vec<_>>()) {
        log::warn!("PSNR-vs-K plot skipped: {e}");
    }
    let (input_psnr, n_a) = finite_mean(&rows.iter().map(|r| r.input_psnr).collect::<Vec<_>>());
    let (mmse_psnr, n_b) = finite_mean(&rows.iter().map(|r| r.mmse_psnr).collect::<Vec<_>>());
    let (diversity, _) = finite_mean(&rows.iter().map(|r| r.diversity).collect::<Vec<_>>());
    let summary = EvalSummary {
        range_mode: pc.range_mode.to_string(),
        k: kmax,
        input_psnr: Some(input_psnr),
        psnr: mmse_psnr,
        diversity: Some(diversity),
        images: rows.len(),
        n_infinite: n_a + n_b,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("input {input_psnr:.3} dB, MMSE-{kmax} {mmse_psnr:.3} dB, diversity {diversity:.4} dB ({})", pc.range_mode);
    Ok(())
}

/// Tiles images row by row into one mosaic with a 2-pixel gap.
fn mosaic(images: &[Image]) -> Image {
    let (h, w) = images[0].dim();
    let cols = (images.len() as f64).sqrt().ceil() as usize;
    let rows = images.len().div_ceil(cols);
    let gap = 2;
    let lo = images.iter().flat_map(|i| i.iter()).copied().fold(f64::INFINITY, f64::min);
    let mut out = Image::from_elem((rows * (h + gap) - gap, cols * (w + gap) - gap), lo);
    for (i, img) in images.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        out.slice_mut(s![r * (h + gap)..r * (h + gap) + h, c * (w + gap)..c * (w + gap) + w]).assign(img);
    }
    out
}

pub fn generate(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let model = load_model(cfg, checkpoint)?;
    let g = &cfg.generate;
    let &[h, w] = g.shape.as_slice() else {
        return Err(CliError::Config(format!("generate.shape needs two values, got {:?}", g.shape)));
    };
    let set = generate_from_prior(&model, (h, w), g.k, derive_seed(cfg.seed, "generate"))?;
    let out = subdir(cfg, "generate")?;
    write_tiff_stack(&out.join("samples.tif"), &set.samples)?;
    write_png(&out.join("grid.png"), &mosaic(&set.samples), None)?;
    println!("generated {} images of {h}x{w} into {}", set.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ScoreRow {
    image: usize,
    source: String,
    sample: Option<usize>,
    instances: u32,
    score: Option<f64>,
}

fn read_labels(path: &Path) -> Result<Vec<LabelMap>> {
    existing(path, "ground-truth labels")?;
    Ok(read_any(path)?.iter().map(|img| LabelMap::from_raw(&img.mapv(|v| v.round().max(0.0) as u32))).collect())
}

pub fn segment(cfg: &RunConfig, checkpoint: Option<PathBuf>, input: Option<PathBuf>, no_model: bool) -> Result<()> {
    let pipeline = cfg.seg.pipeline();
    let inputs = load_inputs(cfg, input.as_deref())?;
    let gt = match &cfg.seg.ground_truth_labels {
        Some(p) => {
            let l = read_labels(p)?;
            if l.len() != inputs.noisy.len() {
                return Err(CliError::Config(format!("{} label images for {} inputs", l.len(), inputs.noisy.len())));
            }
            Some(l)
        }
        None => None,
    };
    let model = if no_model { None } else { Some(load_model(cfg, checkpoint)?) };
    if model.is_some() && cfg.seg.consensus == "avg" && cfg.seg.k < 2 {
        return Err(CliError::Config("consensus avg needs seg.k >= 2".into()));
    }
    let out = subdir(cfg, "segment")?;
    let root = derive_seed(cfg.seed, "segment");
    let mut rows = Vec::new();
    let score = |i: usize, l: &LabelMap| -> Result<Option<f64>> {
        gt.as_ref().map(|g| seg_score(l, &g[i]).map_err(CliError::from)).transpose()
    };
    for (i, x) in inputs.noisy.images.iter().enumerate() {
        let direct = seg::segment(x, &pipeline)?;
        rows.push(ScoreRow { image: i, source: "input".into(), sample: None, instances: direct.labels.count(), score: score(i, &direct.labels)? });
        let Some(model) = &model else {
            write_label_tiff(&out.join(format!("labels_{i:04}.tif")), direct.labels.labels())?;
            continue;
        };
        let set = draw(cfg, model, x, cfg.seg.k, derive_indexed(root, "image", i as u64))?;
        for (j, s) in set.samples.iter().enumerate() {
            let seg = seg::segment(s, &pipeline)?;
            rows.push(ScoreRow { image: i, source: "sample".into(), sample: Some(j), instances: seg.labels.count(), score: score(i, &seg.labels)? });
        }
        let (fused, source) = if cfg.seg.consensus == "avg" {
            (consensus_avg(&set.samples, &pipeline)?, "consensus_avg")
        } else {
            (seg::segment(&mmse(&set), &pipeline)?.labels, "mmse")
        };
        rows.push(ScoreRow { image: i, source: source.into(), sample: None, instances: fused.count(), score: score(i, &fused)? });
        write_label_tiff(&out.join(format!("labels_{i:04}.tif")), fused.labels())?;
    }
    write_csv(&out.join("scores.csv"), &rows)?;
    if gt.is_some() {
        for src in ["input", "sample", "consensus_avg", "mmse"] {
            let v: Vec<f64> = rows.iter().filter(|r| r.source == src).filter_map(|r| r.score).collect();
            if !v.is_empty() {
                println!("{src}: mean score {:.4} over {} segmentations", v.iter().sum::<f64>() / v.len() as f64, v.len());
            }
        }
    }
    println!("wrote label maps for {} images into {}", inputs.noisy.len(), out.display());
    Ok(())
}

pub fn beta_sweep(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg, None)?;
    let clean = inputs
        .clean
        .ok_or_else(|| CliError::Config("beta-sweep needs ground truth: set data.ground_truth or a corruption spec".into()))?;
    let lik = direct_likelihood(cfg)?;
    let setup = study_setup(cfg, arch_for(cfg, &lik)?, cfg.study.samples, None);
    let rows = eval::beta_sweep(&inputs.noisy, &clean.images, &lik, &cfg.study.betas, &setup)?;
    let out = subdir(cfg, "beta_sweep")?;
    write_csv(&out.join("beta_sweep.csv"), &rows)?;
    if let Err(e) = plot::plot_beta_sweep(&out.join("beta_sweep.png"), &rows) {
        log::warn!("beta plot skipped: {e}");
    }
    for r in &rows {
        println!("beta {:>6}: MMSE {:.3} dB, diversity {:.4} dB", r.beta, r.mmse_psnr, r.diversity);
    }
    Ok(())
}

pub fn diversity_study(cfg: &RunConfig) -> Result<()> {
    // The study corrupts clean data itself: take ground truth when there is
    // one, else treat the dataset as clean.
    let inputs = load_inputs(cfg, None)?;
    let clean = inputs.clean.unwrap_or(inputs.noisy);
    let seed = cfg.corruption.map(|c: CorruptionSpec| c.rng_seed).unwrap_or_else(|| derive_seed(cfg.seed, "corruption"));
    let lik = Likelihood::Noise { model: PixelNoiseModel::Gaussian(GaussianNoiseModel::new(1.0)?) };
    let setup = study_setup(cfg, arch_for(cfg, &lik)?, cfg.study.samples, None);
    let rows = eval::diversity_study(&clean, &cfg.study.sigmas, &setup, seed)?;
    let out = subdir(cfg, "diversity_study")?;
    write_csv(&out.join("diversity.csv"), &rows)?;
    if let Err(e) = plot::plot_diversity(&out.join("diversity.png"), &rows) {
        log::warn!("diversity plot skipped: {e}");
    }
    for r in &rows {
        println!("sigma {:>6}: input {:.3} dB, MMSE {:.3} dB, diversity {:.4} dB", r.sigma, r.input_psnr, r.mmse_psnr, r.diversity);
    }
    Ok(())
}
