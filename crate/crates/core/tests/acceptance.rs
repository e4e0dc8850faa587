//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Training-based criteria use epoch budgets rather than wall-clock limits so
//! every run is reproducible. Set `ACCEPTANCE_STRICT=1` to turn any FAIL into
//! a non-zero exit status; `ACCEPTANCE_ONLY=4,5` runs a subset.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::time::Instant;

use divnoise_core::data::{corrupt, CorruptionSpec, ImageStack};
use divnoise_core::eval::{evaluate_denoising, fit_model, DenoiseEvaluation, PsnrConfig, StudySetup};
use divnoise_core::inference::{map_estimate, mmse, sample_from_code, sample_posterior, MeanShiftConfig, SampleSet};
use divnoise_core::noise::{
    fit_gmm, log_likelihood, CalibrationStack, GaussianNoiseModel, GmmFitConfig, LinearVarianceModel, PixelNoiseModel,
};
use divnoise_core::rng::{derive_indexed, derive_seed, hash_f64, rng_from_seed};
use divnoise_core::seg::{consensus_avg, seg_score, segment, LabelMap, SegPipelineConfig};
use divnoise_core::synthetic::{digit_images, phantom_set, CellPhantom};
use divnoise_core::train::TrainConfig;
use divnoise_core::vae::{
    kl_divergence, reconstruction_nll, ArchitectureConfig, EvalOptions, LatentCode, Likelihood, Mode, VaeModel,
};
use divnoise_core::{Image, Result};
use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const PHANTOM_COUNT: usize = 200;
const PHANTOM_SIZE: usize = 64;
const PHANTOM_SPACING: f64 = 20.0;
const PHANTOM_SIGMA: f64 = 30.0;
const PHANTOM_EPOCHS: usize = 60;
const PHANTOM_SAMPLES: usize = 100;
const SEG_SIGMA: f64 = 50.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn gaussian(sigma: f64) -> Likelihood {
    Likelihood::Noise { model: PixelNoiseModel::Gaussian(GaussianNoiseModel::new(sigma).unwrap()) }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Phantom images, their labels, and trained models shared by several criteria.
struct Phantoms {
    cells: Vec<CellPhantom>,
    clean: ImageStack,
    noisy: HashMap<u64, ImageStack>,
    runs: HashMap<(u64, u64), (VaeModel<f32>, DenoiseEvaluation)>,
}

impl Phantoms {
    fn new() -> Self {
        let cells = phantom_set(PHANTOM_COUNT, PHANTOM_SIZE, PHANTOM_SPACING, 11);
        let clean = ImageStack::new("phantoms", cells.iter().map(|c| c.image.clone()).collect()).unwrap();
        Phantoms { cells, clean, noisy: HashMap::new(), runs: HashMap::new() }
    }

    fn setup() -> StudySetup {
        StudySetup {
            arch: ArchitectureConfig { depth: 2, base_features: 8, latent_dims_per_position: 16, ..Default::default() },
            train: TrainConfig { max_epochs: Some(PHANTOM_EPOCHS), kl_anneal_epochs: 30, ..Default::default() },
            patch_size: 32,
            val_fraction: 0.15,
            samples: PHANTOM_SAMPLES,
            psnr: PsnrConfig::fixed_255(),
            seed: 7,
        }
    }

    fn noisy(&mut self, sigma: f64) -> &ImageStack {
        let clean = &self.clean;
        self.noisy
            .entry(sigma.to_bits())
            .or_insert_with(|| corrupt(clean, &CorruptionSpec::gaussian(sigma, derive_seed(5, &format!("sigma {sigma}")))).unwrap())
    }

    /// Trains (once) and evaluates the model for `(sigma, beta)`.
    fn run(&mut self, sigma: f64, beta: f64) -> Result<&(VaeModel<f32>, DenoiseEvaluation)> {
        let key = (sigma.to_bits(), beta.to_bits());
        if !self.runs.contains_key(&key) {
            let setup = Self::setup();
            let noisy = self.noisy(sigma).clone();
            let t = Instant::now();
            let (model, report) = fit_model(&noisy, gaussian(sigma), &setup, beta)?;
            let train_s = t.elapsed().as_secs_f64();
            let ev = evaluate_denoising(&model, &noisy.images, &self.clean.images, setup.samples, 3, &setup.psnr)?;
            println!(
                "  [phantoms sigma={sigma} beta={beta}] {} epochs in {train_s:.0}s, best {}; input {:.2} dB, MMSE {:.2} dB, diversity {:.4} dB",
                report.records.len(),
                report.best_epoch,
                ev.input_psnr,
                ev.mmse_psnr,
                ev.diversity
            );
            self.runs.insert(key, (model, ev));
        }
        Ok(&self.runs[&key])
    }
}

fn c1_loss_identity() -> Result<Verdict> {
    let mut rng = rng_from_seed(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
        let sigma = 10f64.powf(rng.random_range(-1.0..2.5));
        let x = Image::from_shape_fn((h, w), |_| rng.random_range(-50.0..300.0));
        let s = Image::from_shape_fn((h, w), |_| rng.random_range(-50.0..300.0));
        let n = (h * w) as f64;
        let sq: f64 = x.iter().zip(s.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let oracle = sq / (2.0 * sigma * sigma) + n / 2.0 * (2.0 * PI * sigma * sigma).ln();
        let got = reconstruction_nll(&GaussianNoiseModel::new(sigma)?, x.view(), s.view())?;
        worst = worst.max((got - oracle).abs() / oracle.abs().max(1e-300));
    }
    verdict(worst < 1e-6, format!("max relative error {worst:.2e} over 100 pairs (tol 1e-6)"))
}

fn c2_gradient_check() -> Result<Verdict> {
    let mut rng = rng_from_seed(2);
    let images: Vec<Image> = (0..2)
        .map(|_| Image::from_shape_fn((16, 16), |(y, x)| 100.0 + 40.0 * ((y * 3 + x) as f64 * 0.3).sin() + rng.random_range(-20.0..20.0)))
        .collect();
    let mut stack = ImageStack::new("g", images.clone())?;
    let stats = divnoise_core::data::compute_stats(&mut stack)?;
    let arch = ArchitectureConfig { depth: 2, base_features: 4, latent_dims_per_position: 4, ..Default::default() };
    let model = VaeModel::<f64>::new(arch, stats, gaussian(15.0), 3)?;
    let views: Vec<_> = images.iter().map(|i| i.view()).collect();
    let noise_rng = rng_from_seed(77);
    let grad_opts = EvalOptions { gradients: true, keep_signals: false };
    let base = model.evaluate(&views, 1.0, &mut noise_rng.clone(), grad_opts)?;
    let grads = base.grads.expect("gradients requested");
    let sizes = model.block_sizes();
    let h = 1e-4;
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    while checked < 50 {
        let b = rng.random_range(0..sizes.len());
        let i = rng.random_range(0..sizes[b]);
        let at = |delta: f64| {
            let mut m = model.clone();
            m.param_blocks_mut()[b][i] += delta;
            m.evaluate(&views, 1.0, &mut noise_rng.clone(), EvalOptions::default())
        };
        let (plus, minus) = (at(h)?, at(-h)?);
        // A ReLU or max-pool switch inside the stencil makes the loss non-differentiable there.
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            skipped += 1;
            continue;
        }
        let fd = (plus.parts.total - minus.parts.total) / (2.0 * h);
        let g = grads[b][i];
        worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-8));
        checked += 1;
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over 50 parameters ({skipped} kinked draws redrawn; tol 1e-4)"))
}

fn c3_kl_monte_carlo() -> Result<Verdict> {
    let mut rng = rng_from_seed(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let code = LatentCode {
            mu: Array3::from_shape_fn((4, 2, 2), |_| rng.random_range(-2.0..2.0)),
            log_var: Array3::from_shape_fn((4, 2, 2), |_| rng.random_range(-2.5..1.0)),
        };
        let closed = kl_divergence(&code);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z = code.reparameterize(&mut rng);
            let mut log_ratio = 0.0;
            for ((&zi, &m), &lv) in z.iter().zip(code.mu.iter()).zip(code.log_var.iter()) {
                let log_q = -0.5 * ((2.0 * PI).ln() + lv + (zi - m) * (zi - m) / lv.exp());
                let log_p = -0.5 * ((2.0 * PI).ln() + zi * zi);
                log_ratio += log_q - log_p;
            }
            acc += log_ratio;
        }
        let mc = acc / n as f64;
        worst = worst.max((closed - mc).abs() / mc.abs());
    }
    verdict(worst < 0.01, format!("max relative deviation {:.3}% over 20 codes (tol 1%)", 100.0 * worst))
}

fn c4_digits() -> Result<Verdict> {
    const TRAIN: usize = 3000;
    const HELD_OUT: usize = 200;
    let sigma = 140.0;
    let clean = ImageStack::new("digits", digit_images(TRAIN + HELD_OUT, 1))?;
    let noisy = corrupt(&clean, &CorruptionSpec::gaussian(sigma, 2))?;
    let train_set = ImageStack::new("digits-train", noisy.images[..TRAIN].to_vec())?;
    let setup = StudySetup {
        arch: ArchitectureConfig { depth: 2, base_features: 16, latent_dims_per_position: 8, ..Default::default() },
        train: TrainConfig { max_epochs: Some(DIGIT_EPOCHS), kl_anneal_epochs: 15, ..Default::default() },
        patch_size: 28,
        val_fraction: 0.1,
        samples: 100,
        psnr: PsnrConfig::default(),
        seed: 7,
    };
    let t = Instant::now();
    let (model, report) = fit_model(&train_set, gaussian(sigma), &setup, 1.0)?;
    let train_s = t.elapsed().as_secs_f64();
    let ev = evaluate_denoising(&model, &noisy.images[TRAIN..], &clean.images[TRAIN..], 100, 3, &setup.psnr)?;
    let gain = ev.mmse_psnr - ev.input_psnr;
    verdict(
        gain >= 5.0 && train_s <= 1800.0,
        format!(
            "held-out {HELD_OUT}: input {:.2} dB, MMSE-100 {:.2} dB, gain {gain:.2} dB (need >= 5); trained {} epochs in {train_s:.0}s (limit 1800s)",
            ev.input_psnr,
            ev.mmse_psnr,
            report.records.len()
        ),
    )
}

const DIGIT_EPOCHS: usize = 20;

fn c5_beta_sweep(ph: &mut Phantoms) -> Result<Verdict> {
    let mut rows = Vec::new();
    for beta in [0.1, 1.0, 10.0] {
        let ev = &ph.run(PHANTOM_SIGMA, beta)?.1;
        rows.push((beta, ev.mmse_psnr, ev.diversity));
    }
    let best = rows[1].1 > rows[0].1 && rows[1].1 > rows[2].1;
    let monotone = rows[0].2 < rows[1].2 && rows[1].2 < rows[2].2;
    let table: Vec<String> = rows.iter().map(|(b, m, d)| format!("beta {b}: MMSE {m:.2} dB, diversity {d:.4}")).collect();
    verdict(best && monotone, format!("{} (beta=1 best: {best}; diversity monotone: {monotone})", table.join("; ")))
}

fn c6_noise_diversity(ph: &mut Phantoms) -> Result<Verdict> {
    let mut div = Vec::new();
    for sigma in [30.0, 50.0, 70.0] {
        div.push((sigma, ph.run(sigma, 1.0)?.1.diversity));
    }
    let increasing = div.windows(2).all(|w| w[1].1 > w[0].1);
    let table: Vec<String> = div.iter().map(|(s, d)| format!("sigma {s}: {d:.4} dB")).collect();
    verdict(increasing, format!("mean diversity {} (strictly increasing: {increasing})", table.join(", ")))
}

/// Two-component mixture whose weights, offsets and variances depend on `s`.
struct Generator;

impl Generator {
    fn components(s: f64) -> [(f64, f64, f64); 2] {
        let v = 4.0 + 0.5 * s;
        [(0.7, s, v), (0.3, s + 3.0, 2.0 * v)]
    }

    fn log_prob(x: f64, s: f64) -> f64 {
        let p: f64 = Self::components(s)
            .iter()
            .map(|&(w, m, v)| w * (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt())
            .sum();
        p.ln()
    }

    fn sample(s: f64, rng: &mut impl Rng) -> f64 {
        let [(w0, m0, v0), (_, m1, v1)] = Self::components(s);
        let (m, v) = if rng.random::<f64>() < w0 { (m0, v0) } else { (m1, v1) };
        m + v.sqrt() * normal(rng)
    }
}

fn c7_gmm_fidelity() -> Result<Verdict> {
    let mut rng = rng_from_seed(7);
    let signal = Image::from_shape_fn((100, 100), |(y, x)| 20.0 + 3.8 * x as f64 + 0.2 * y as f64);
    let frames: Vec<Image> = (0..100).map(|_| signal.mapv(|s| Generator::sample(s, &mut rng))).collect();
    let truth: f64 = frames.iter().flat_map(|f| f.iter().zip(signal.iter()).map(|(&x, &s)| Generator::log_prob(x, s))).sum::<f64>();
    let pixels = (frames.len() * signal.len()) as f64;
    let truth = truth / pixels;
    let mut calib = CalibrationStack::new(frames.clone())?;
    let s_hat = calib.estimate_signal()?.clone();
    let fit = fit_gmm(&calib, &GmmFitConfig::default())?;
    let model = PixelNoiseModel::Gmm(fit.model);
    let mut fitted = 0.0;
    for f in &frames {
        fitted += log_likelihood(&model, f.view(), s_hat.view())?.sum();
    }
    let fitted = fitted / pixels;
    let gap = (fitted - truth).abs();
    verdict(gap < 0.05, format!("{} px: generator {truth:.4} nats/px, fitted {fitted:.4} nats/px, gap {gap:.4} (tol 0.05)", pixels))
}

fn c8_colearn(ph: &Phantoms) -> Result<Verdict> {
    let (a, b) = (1.5, 40.0);
    let mut rng = rng_from_seed(8);
    let noisy: Vec<Image> = ph
        .clean
        .images
        .iter()
        .map(|img| img.mapv(|s| s + (a * s + b).sqrt() * normal(&mut rng)))
        .collect();
    let stack = ImageStack::new("colearn", noisy)?;
    let mut setup = Phantoms::setup();
    setup.arch.mode = Mode::UnsupervisedDivnoising;
    let (model, report) = fit_model(&stack, Likelihood::Colearned { sigma_min: 1.0 }, &setup, 1.0)?;
    let learned: LinearVarianceModel = model.colearned_model().expect("co-learned likelihood");
    let mut signal: Vec<f64> = ph.clean.images.iter().flat_map(|i| i.iter().copied()).collect();
    signal.sort_by(f64::total_cmp);
    let q = |p: f64| signal[((signal.len() - 1) as f64 * p).round() as usize];
    let (lo, hi) = (q(0.1), q(0.9));
    let grid = 101;
    let err = (0..grid)
        .map(|i| {
            let s = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
            let truth = a * s + b;
            (learned.variance(s) - truth).abs() / truth
        })
        .sum::<f64>()
        / grid as f64;
    verdict(
        err < 0.15,
        format!(
            "true var = {a}*s + {b}, learned {:.3}*s + {:.2} after {} epochs; mean relative error {:.1}% on [{lo:.0}, {hi:.0}] (tol 15%)",
            learned.a,
            learned.b,
            report.records.len(),
            100.0 * err
        ),
    )
}

/// Epanechnikov KDE (the flat-kernel shadow) evaluated at `p`.
fn kde(points: &[Vec<f64>], p: &[f64], h: f64) -> f64 {
    points
        .iter()
        .map(|q| {
            let r2: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (h * h);
            (1.0 - r2).max(0.0)
        })
        .sum()
}

fn c9_map_oracle() -> Result<Verdict> {
    let cfg = MeanShiftConfig::default();
    let h = *divnoise_core::inference::bandwidth_schedule(&cfg).last().unwrap();
    // Flat-kernel fixed points can sit on a kink next to the peak, so the grid
    // resolution is tied to the kernel scale.
    let step = h / 40.0;
    let mut rng = rng_from_seed(9);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        // Odd trials are 1x2 tiles (two-dimensional modes), even trials single
        // pixels. Clusters sit within reach of the bandwidth schedule.
        let dim = 1 + trial % 2;
        let spread = rng.random_range(15.0..40.0);
        let n_modes = rng.random_range(2..=3);
        let mut centers: Vec<Vec<f64>> = Vec::new();
        while centers.len() < n_modes {
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..400.0)).collect();
            if centers.iter().all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() > 120.0) {
                centers.push(c);
            }
        }
        let counts: Vec<usize> = (0..n_modes).map(|m| if m == 0 { 120 } else { 40 + 10 * m }).collect();
        let mut samples = Vec::new();
        let mut pts = Vec::new();
        for (c, &n) in centers.iter().zip(&counts) {
            for _ in 0..n {
                let p: Vec<f64> = c.iter().map(|&v| v + spread * normal(&mut rng)).collect();
                samples.push(Image::from_shape_vec((1, dim), p.clone()).unwrap());
                pts.push(p);
            }
        }
        let map = map_estimate(&SampleSet::new(samples, "surrogate", 0)?, &cfg)?;
        let got: Vec<f64> = map.iter().copied().collect();
        // Brute-force grid search over the bounding box of all samples.
        let lo: Vec<f64> = (0..dim).map(|d| pts.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min)).collect();
        let hi: Vec<f64> = (0..dim).map(|d| pts.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let steps: Vec<usize> = (0..dim).map(|d| ((hi[d] - lo[d]) / step).ceil() as usize + 1).collect();
        let (mut best, mut arg) = (f64::NEG_INFINITY, vec![0.0; dim]);
        let total: usize = steps.iter().product();
        for idx in 0..total {
            let mut rem = idx;
            let p: Vec<f64> = (0..dim)
                .map(|d| {
                    let i = rem % steps[d];
                    rem /= steps[d];
                    lo[d] + i as f64 * step
                })
                .collect();
            let v = kde(&pts, &p, h);
            if v > best {
                best = v;
                arg = p;
            }
        }
        let dist = got.iter().zip(&arg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(dist);
    }
    verdict(worst <= step / 2.0, format!("max deviation from KDE argmax {worst:.3} over 20 surrogates (grid step {step:.2} = bandwidth/40, tol {:.2})", step / 2.0))
}

fn c10_mmse_variance(ph: &mut Phantoms) -> Result<Verdict> {
    let x = ph.noisy(PHANTOM_SIGMA).images[0].clone();
    let model = &ph.run(PHANTOM_SIGMA, 1.0)?.0;
    let repeats = 24;
    let mut scaled = Vec::new();
    for k in [25usize, 100, 400] {
        let estimates: Vec<Image> = (0..repeats)
            .map(|r| sample_posterior(model, &x, k, derive_indexed(10, &format!("k{k}"), r)).map(|s| mmse(&s)))
            .collect::<Result<_>>()?;
        let n = repeats as f64;
        let mean = estimates.iter().fold(Image::zeros(x.dim()), |a, e| a + e) / n;
        let var = estimates.iter().map(|e| (e - &mean).mapv(|v| v * v).sum()).sum::<f64>() / ((n - 1.0) * x.len() as f64);
        scaled.push((k, var, var * k as f64));
    }
    let max = scaled.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    let min = scaled.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let table: Vec<String> = scaled.iter().map(|(k, v, s)| format!("K={k}: var {v:.4}, K*var {s:.2}")).collect();
    verdict(max / min <= 1.5, format!("{}; spread {:.3} (tol 1.5)", table.join("; "), max / min))
}

fn c11_segmentation(ph: &mut Phantoms) -> Result<Verdict> {
    const K: usize = 30;
    let cfg = SegPipelineConfig::default();
    let noisy = ph.noisy(SEG_SIGMA).images.clone();
    let gts: Vec<LabelMap> = ph.cells.iter().map(|c| LabelMap::from_raw(&c.labels)).collect();
    let model = &ph.run(SEG_SIGMA, 1.0)?.0;
    let (mut noisy_score, mut single, mut fused) = (0.0, 0.0, 0.0);
    for (i, (x, gt)) in noisy.iter().zip(&gts).enumerate() {
        noisy_score += seg_score(&segment(x, &cfg)?.labels, gt)?;
        let set = sample_posterior(model, x, K, derive_indexed(11, "image", i as u64))?;
        for s in &set.samples {
            single += seg_score(&segment(s, &cfg)?.labels, gt)? / K as f64;
        }
        fused += seg_score(&consensus_avg(&set.samples, &cfg)?, gt)?;
    }
    let n = noisy.len() as f64;
    let (noisy_score, single, fused) = (noisy_score / n, single / n, fused / n);
    let pass = fused >= single && single >= noisy_score + 0.05;
    verdict(
        pass,
        format!("{} images: noisy {noisy_score:.4}, single sample {single:.4}, Consensus(Avg) of {K} {fused:.4}", noisy.len()),
    )
}

fn c12_throughput() -> Result<Verdict> {
    let stats = divnoise_core::data::DataStats { mean: 100.0, std: 30.0 };
    let model = VaeModel::<f32>::new(ArchitectureConfig::default(), stats, gaussian(20.0), 12)?;
    let mut rng = rng_from_seed(12);
    let x = Image::from_shape_fn((128, 128), |_| 100.0 + 30.0 * normal(&mut rng));
    let t = Instant::now();
    let code = model.encode(x.view())?;
    let set = sample_from_code(&model, &code, 1000, 12)?;
    let secs = t.elapsed().as_secs_f64();
    verdict(
        set.len() == 1000,
        format!("1000 posterior samples of 128x128, {} parameters: {secs:.1}s on {} thread(s) (reported, non-binding)", model.parameter_count(), 1),
    )
}

fn c13_determinism(ph: &Phantoms) -> Result<Verdict> {
    let clean = ImageStack::new("det", ph.clean.images[..48].to_vec())?;
    let run = || -> Result<String> {
        let noisy = corrupt(&clean, &CorruptionSpec::gaussian(PHANTOM_SIGMA, 13))?;
        let mut setup = Phantoms::setup();
        setup.train.max_epochs = Some(4);
        setup.train.kl_anneal_epochs = 2;
        let (model, _) = fit_model(&noisy, gaussian(PHANTOM_SIGMA), &setup, 1.0)?;
        let mut values = Vec::new();
        for (i, x) in noisy.images.iter().enumerate() {
            let set = sample_posterior(&model, x, 20, derive_indexed(13, "image", i as u64))?;
            values.extend(mmse(&set).iter().copied());
        }
        Ok(hash_f64(values))
    };
    let (a, b) = (run()?, run()?);
    verdict(a == b, format!("MMSE hashes {}.. and {}..", &a[..16], &b[..16]))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut ph = Phantoms::new();
    let criteria: Vec<(usize, &str, Box<dyn FnMut(&mut Phantoms) -> Result<Verdict>>)> = vec![
        (1, "gaussian reconstruction loss identity", Box::new(|_| c1_loss_identity())),
        (2, "total-loss gradient check", Box::new(|_| c2_gradient_check())),
        (3, "closed-form KL vs Monte Carlo", Box::new(|_| c3_kl_monte_carlo())),
        (4, "digit denoising gain", Box::new(|_| c4_digits())),
        (5, "beta sweep trend", Box::new(c5_beta_sweep)),
        (6, "noise level vs diversity", Box::new(c6_noise_diversity)),
        (7, "GMM noise model fidelity", Box::new(|_| c7_gmm_fidelity())),
        (8, "co-learned noise recovery", Box::new(|p| c8_colearn(p))),
        (9, "MAP vs brute-force KDE", Box::new(|_| c9_map_oracle())),
        (10, "MMSE variance scales as 1/K", Box::new(c10_mmse_variance)),
        (11, "segmentation fusion benefit", Box::new(c11_segmentation)),
        (12, "sampling throughput", Box::new(|_| c12_throughput())),
        (13, "determinism", Box::new(|p| c13_determinism(p))),
    ];
    let mut failed = 0;
    for (n, name, mut f) in criteria {
        if !wanted(n) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match f(&mut ph) {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("{} {n:>2} {name}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {failed} failing");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
