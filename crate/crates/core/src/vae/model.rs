use ndarray::{Array3, ArrayView2, ArrayView3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::objective::gaussian_log_prob;
use super::{kl_divergence, ArchitectureConfig, LossParts, Mode};
use crate::data::DataStats;
use crate::nn::{activation_pattern, Conv2d, Layer, Padding, Real, Sequential, Tensor};
use crate::noise::{LinearVarianceModel, NoiseModel, PixelNoiseModel};
use crate::{Error, Image, Result};

/// Encoder log-variances are clamped to `[-LOG_VAR_CLAMP, LOG_VAR_CLAMP]`.
pub const LOG_VAR_CLAMP: f64 = 20.0;

const VANILLA_VAR_FLOOR: f64 = 1e-6;
const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// Per-position diagonal Gaussian `q(z|x)`, arrays shaped
/// `(latent_dims_per_position, H / 2^depth, W / 2^depth)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Array3<f64>,
    pub log_var: Array3<f64>,
}

impl LatentCode {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.mu.dim()
    }

    /// `z = mu + exp(log_var / 2) * eps` with `eps ~ N(0, I)`.
    pub fn reparameterize(&self, rng: &mut impl Rng) -> Array3<f64> {
        let mut z = self.mu.clone();
        for (zi, &lv) in z.iter_mut().zip(self.log_var.iter()) {
            let eps: f64 = StandardNormal.sample(rng);
            *zi += (0.5 * lv).exp() * eps;
        }
        z
    }
}

/// Decoder output mapped to raw intensity units.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedOutput {
    /// Predicted signal (the predicted mean in vanilla mode).
    pub signal: Image,
    /// Per-pixel variance: predicted in vanilla mode, implied by the
    /// co-learned noise model in unsupervised mode, absent otherwise.
    pub variance: Option<Image>,
}

/// How the reconstruction term scores an observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    /// Fixed, pre-calibrated noise model.
    Noise { model: PixelNoiseModel },
    /// Gaussian with linear variance whose coefficients are trained.
    Colearned { sigma_min: f64 },
    /// Decoder predicts mean and variance itself.
    Learned,
}

impl Likelihood {
    pub fn mode(&self) -> Mode {
        match self {
            Likelihood::Noise { .. } => Mode::Divnoising,
            Likelihood::Colearned { .. } => Mode::UnsupervisedDivnoising,
            Likelihood::Learned => Mode::Vanilla,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub gradients: bool,
    /// Keep the decoded raw signals of the batch in [`LossEval::signals`].
    pub keep_signals: bool,
}

/// Result of one stochastic loss evaluation over a batch.
#[derive(Clone, Debug)]
pub struct LossEval<T> {
    pub parts: LossParts,
    /// Gradients of `parts.total`, one block per parameter block.
    pub grads: Option<Vec<Vec<T>>>,
    pub signals: Vec<Image>,
    /// Digest of the ReLU/pooling regime of this forward pass.
    pub pattern: u64,
}

/// Fully convolutional VAE. Parameters are stored in precision `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel<T = f32> {
    arch: ArchitectureConfig,
    stats: DataStats,
    likelihood: Likelihood,
    encoder: Sequential<T>,
    mu_head: Conv2d<T>,
    logvar_head: Conv2d<T>,
    decoder: Sequential<T>,
    /// Normalized linear-variance coefficients `(p_a, p_b)`; empty unless co-learning.
    colearn: Vec<T>,
}

impl<T: Real> VaeModel<T> {
    pub fn new(arch: ArchitectureConfig, stats: DataStats, likelihood: Likelihood, seed: u64) -> Result<Self> {
        arch.validate()?;
        if arch.mode != likelihood.mode() {
            return Err(Error::Config(format!(
                "mode {:?} is incompatible with the {:?} likelihood",
                arch.mode,
                likelihood.mode()
            )));
        }
        if let Likelihood::Colearned { sigma_min } = likelihood {
            LinearVarianceModel::new(0.0, 1.0, sigma_min)?;
        }
        let mut rng = crate::rng::rng_from_seed(seed);
        let k = arch.conv_kernel;
        let mut enc = Vec::new();
        let mut prev = 1;
        for level in 0..arch.depth {
            let c = arch.features_at(level);
            enc.push(Layer::Conv(Conv2d::new(prev, c, k, RELU_GAIN, &mut rng)));
            enc.push(Layer::Relu);
            enc.push(Layer::Conv(Conv2d::new(c, c, k, RELU_GAIN, &mut rng)));
            enc.push(Layer::Relu);
            enc.push(Layer::MaxPool2);
            prev = c;
        }
        let top = arch.features_at(arch.depth - 1);
        let latent = arch.latent_dims_per_position;
        let mu_head = Conv2d::new(top, latent, k, 1.0, &mut rng);
        let logvar_head = Conv2d::new(top, latent, k, 1.0, &mut rng);
        let mut dec = vec![Layer::Conv(Conv2d::new(latent, top, 1, RELU_GAIN, &mut rng)), Layer::Relu];
        let mut prev = top;
        for level in (0..arch.depth).rev() {
            let c = arch.features_at(level);
            dec.push(Layer::Upsample2);
            dec.push(Layer::Conv(Conv2d::new(prev, c, k, RELU_GAIN, &mut rng)));
            dec.push(Layer::Relu);
            prev = c;
        }
        dec.push(Layer::Conv(Conv2d::new(prev, arch.output_channels(), 1, 1.0, &mut rng)));
        let colearn = match likelihood {
            Likelihood::Colearned { .. } => vec![T::zero(), T::from_f64_lossy(0.5)],
            _ => Vec::new(),
        };
        Ok(Self {
            arch,
            stats,
            likelihood,
            encoder: Sequential::new(enc),
            mu_head,
            logvar_head,
            decoder: Sequential::new(dec),
            colearn,
        })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn data_stats(&self) -> DataStats {
        self.stats
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    /// The fixed noise model of a DivNoising model.
    pub fn noise_model(&self) -> Option<&PixelNoiseModel> {
        match &self.likelihood {
            Likelihood::Noise { model } => Some(model),
            _ => None,
        }
    }

    /// Current co-learned noise model in raw intensity units.
    pub fn colearned_model(&self) -> Option<LinearVarianceModel> {
        let Likelihood::Colearned { sigma_min } = self.likelihood else {
            return None;
        };
        let (pa, pb) = (self.colearn[0].as_f64(), self.colearn[1].as_f64());
        let (mean, std) = (self.stats.mean, self.stats.scale());
        Some(LinearVarianceModel {
            a: pa * std,
            b: pb * std * std - pa * std * mean,
            sigma_min,
        })
    }

    /// Sets the co-learned coefficients from a raw-unit model.
    pub fn set_colearned_model(&mut self, model: &LinearVarianceModel) -> Result<()> {
        let Likelihood::Colearned { sigma_min } = &mut self.likelihood else {
            return Err(Error::Config("model does not co-learn a noise model".into()));
        };
        *sigma_min = model.sigma_min;
        let (mean, std) = (self.stats.mean, self.stats.scale());
        let pa = model.a / std;
        self.colearn[0] = T::from_f64_lossy(pa);
        self.colearn[1] = T::from_f64_lossy((model.b + pa * std * mean) / (std * std));
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    /// Named parameter blocks in a fixed order shared by gradients and optimizers.
    pub fn param_blocks(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.convs().enumerate() {
            out.push((format!("encoder.{i}.weight"), c.weight.as_slice()));
            out.push((format!("encoder.{i}.bias"), c.bias.as_slice()));
        }
        out.push(("mu_head.weight".to_string(), self.mu_head.weight.as_slice()));
        out.push(("mu_head.bias".to_string(), self.mu_head.bias.as_slice()));
        out.push(("logvar_head.weight".to_string(), self.logvar_head.weight.as_slice()));
        out.push(("logvar_head.bias".to_string(), self.logvar_head.bias.as_slice()));
        for (i, c) in self.decoder.convs().enumerate() {
            out.push((format!("decoder.{i}.weight"), c.weight.as_slice()));
            out.push((format!("decoder.{i}.bias"), c.bias.as_slice()));
        }
        if !self.colearn.is_empty() {
            out.push(("noise.linear_variance".to_string(), self.colearn.as_slice()));
        }
        out
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for c in self.encoder.convs_mut() {
            out.push(c.weight.as_mut_slice());
            out.push(c.bias.as_mut_slice());
        }
        out.push(self.mu_head.weight.as_mut_slice());
        out.push(self.mu_head.bias.as_mut_slice());
        out.push(self.logvar_head.weight.as_mut_slice());
        out.push(self.logvar_head.bias.as_mut_slice());
        for c in self.decoder.convs_mut() {
            out.push(c.weight.as_mut_slice());
            out.push(c.bias.as_mut_slice());
        }
        if !self.colearn.is_empty() {
            out.push(self.colearn.as_mut_slice());
        }
        out
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.param_blocks().iter().map(|(_, b)| b.len()).collect()
    }

    /// Hex digest of all parameters.
    pub fn param_digest(&self) -> String {
        crate::rng::hash_f64(self.param_blocks().into_iter().flat_map(|(_, b)| b.iter().map(|v| v.as_f64())))
    }

    /// Same model with parameters converted to precision `U`.
    pub fn cast<U: Real>(&self) -> VaeModel<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            in_ch: c.in_ch,
            out_ch: c.out_ch,
            kernel: c.kernel,
            weight: c.weight.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            bias: c.bias.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        };
        let seq = |s: &Sequential<T>| {
            Sequential::new(
                s.layers
                    .iter()
                    .map(|l| match l {
                        Layer::Conv(c) => Layer::Conv(conv(c)),
                        Layer::Relu => Layer::Relu,
                        Layer::MaxPool2 => Layer::MaxPool2,
                        Layer::Upsample2 => Layer::Upsample2,
                    })
                    .collect(),
            )
        };
        VaeModel {
            arch: self.arch.clone(),
            stats: self.stats,
            likelihood: self.likelihood.clone(),
            encoder: seq(&self.encoder),
            mu_head: conv(&self.mu_head),
            logvar_head: conv(&self.logvar_head),
            decoder: seq(&self.decoder),
            colearn: self.colearn.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Overwrites parameters from named blocks (as stored in checkpoints).
    pub(crate) fn load_blocks(&mut self, blocks: &[(String, Vec<f32>)]) -> Result<()> {
        let expected: Vec<(String, usize)> = self.param_blocks().iter().map(|(n, b)| (n.clone(), b.len())).collect();
        if expected.len() != blocks.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameter blocks, architecture needs {}",
                blocks.len(),
                expected.len()
            )));
        }
        for ((name, len), (got_name, data)) in expected.iter().zip(blocks) {
            if name != got_name || *len != data.len() {
                return Err(Error::Format(format!(
                    "parameter block {got_name} ({} values) does not match {name} ({len} values)",
                    data.len()
                )));
            }
        }
        for (dst, (_, src)) in self.param_blocks_mut().into_iter().zip(blocks) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::from_f64_lossy(s as f64);
            }
        }
        Ok(())
    }

    pub fn normalize(&self, raw: ArrayView2<'_, f64>) -> Image {
        let (mean, std) = (self.stats.mean, self.stats.scale());
        raw.map(|&v| (v - mean) / std)
    }

    fn padding(&self) -> Padding {
        self.arch.padding
    }

    fn check_image(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.arch.latent_shape(h, w)
    }

    /// Stacks normalized images into a `(1, n, h, w)` tensor.
    pub(crate) fn input_tensor(&self, images: &[ArrayView2<'_, f64>], normalize: bool) -> Result<Tensor<T>> {
        let (h, w) = images.first().map(|i| i.dim()).ok_or_else(|| Error::Input("empty batch".into()))?;
        self.check_image(h, w)?;
        let (mean, std) = if normalize {
            (self.stats.mean, self.stats.scale())
        } else {
            (0.0, 1.0)
        };
        let mut t = Tensor::zeros(1, images.len(), h, w);
        for (n, img) in images.iter().enumerate() {
            if img.dim() != (h, w) {
                return Err(Error::Dimension(format!("batch mixes {:?} and {:?} images", (h, w), img.dim())));
            }
            for (dst, &v) in t.plane_of_mut(0, n).iter_mut().zip(img.iter()) {
                *dst = T::from_f64_lossy((v - mean) / std);
            }
        }
        Ok(t)
    }

    /// Encoder on a normalized batch: `(mu, clamped log_var)`.
    pub(crate) fn encode_tensor(&self, x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let h = self.encoder.forward(x, self.padding());
        let mu = self.mu_head.forward(&h, self.padding());
        let lv = clamp_log_var(self.logvar_head.forward(&h, self.padding()));
        (mu, lv)
    }

    /// Decoder on a latent batch; output stays in normalized units.
    pub(crate) fn decode_tensor(&self, z: &Tensor<T>) -> Tensor<T> {
        self.decoder.forward(z, self.padding())
    }

    /// Maps decoder output sample `n` to raw intensity units.
    pub(crate) fn output_to_raw(&self, out: &Tensor<T>, n: usize) -> DecodedOutput {
        let (mean, std) = (self.stats.mean, self.stats.scale());
        let shape = (out.h, out.w);
        let signal = Image::from_shape_vec(shape, out.plane_of(0, n).iter().map(|v| v.as_f64() * std + mean).collect())
            .expect("plane shape");
        let variance = match &self.likelihood {
            Likelihood::Learned => Some(
                Image::from_shape_vec(
                    shape,
                    out.plane_of(1, n).iter().map(|v| (softplus(v.as_f64()) + VANILLA_VAR_FLOOR) * std * std).collect(),
                )
                .expect("plane shape"),
            ),
            Likelihood::Colearned { .. } => {
                let m = self.colearned_model().expect("co-learned model");
                Some(signal.map(|&s| m.variance(s)))
            }
            Likelihood::Noise { .. } => None,
        };
        DecodedOutput { signal, variance }
    }

    /// Raw signal of decoder output sample `n`, without variance maps.
    pub(crate) fn output_signal(&self, out: &Tensor<T>, n: usize) -> Image {
        let (mean, std) = (self.stats.mean, self.stats.scale());
        Image::from_shape_vec((out.h, out.w), out.plane_of(0, n).iter().map(|v| v.as_f64() * std + mean).collect())
            .expect("plane shape")
    }

    /// `q(z|x)` for a normalized image.
    pub fn encode(&self, x: ArrayView2<'_, f64>) -> Result<LatentCode> {
        let t = self.input_tensor(&[x], false)?;
        let (mu, lv) = self.encode_tensor(&t);
        Ok(LatentCode {
            mu: tensor_to_array3(&mu, 0),
            log_var: tensor_to_array3(&lv, 0),
        })
    }

    /// Decodes one latent sample shaped like a [`LatentCode`].
    pub fn decode(&self, z: ArrayView3<'_, f64>) -> Result<DecodedOutput> {
        let (c, h, w) = z.dim();
        if c != self.arch.latent_dims_per_position || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "latent sample {:?} does not have {} channels",
                z.dim(),
                self.arch.latent_dims_per_position
            )));
        }
        let zt = Tensor::from_vec(c, 1, h, w, z.iter().map(|&v| T::from_f64_lossy(v)).collect());
        let out = self.decode_tensor(&zt);
        Ok(self.output_to_raw(&out, 0))
    }

    /// Single-sample loss of one raw image.
    pub fn loss(&self, x: ArrayView2<'_, f64>, beta: f64, rng: &mut impl Rng) -> Result<LossParts> {
        Ok(self.evaluate(&[x], beta, rng, EvalOptions::default())?.parts)
    }

    /// Loss (and optionally gradients) of a batch of raw images, each term
    /// averaged over pixels and batch items.
    pub fn evaluate(
        &self,
        raw: &[ArrayView2<'_, f64>],
        beta: f64,
        rng: &mut impl Rng,
        opts: EvalOptions,
    ) -> Result<LossEval<T>> {
        let pad = self.padding();
        let x = self.input_tensor(raw, true)?;
        let (b, h, w) = (x.n, x.h, x.w);
        let scale = 1.0 / (b * h * w) as f64;

        let mut enc_caches = Vec::new();
        let hidden = self.encoder.forward_cached(&x, pad, &mut enc_caches);
        let mu = self.mu_head.forward(&hidden, pad);
        let lv_raw = self.logvar_head.forward(&hidden, pad);
        let lv = clamp_log_var(lv_raw.clone());
        let mut eps = Tensor::zeros(mu.c, mu.n, mu.h, mu.w);
        for e in eps.data.iter_mut() {
            let v: f64 = StandardNormal.sample(rng);
            *e = T::from_f64_lossy(v);
        }
        let mut z = mu.clone();
        for ((zi, &l), &e) in z.data.iter_mut().zip(&lv.data).zip(&eps.data) {
            *zi = *zi + (l * T::from_f64_lossy(0.5)).exp() * e;
        }
        let mut dec_caches = Vec::new();
        let out = self.decoder.forward_cached(&z, pad, &mut dec_caches);

        let (mean, std) = (self.stats.mean, self.stats.scale());
        let mut d_out = Tensor::zeros(out.c, out.n, out.h, out.w);
        let mut recon_sum = 0.0;
        let mut colearn_grad = [0.0f64; 2];
        match &self.likelihood {
            Likelihood::Noise { model } => {
                for n in 0..b {
                    let o = out.plane_of(0, n);
                    let mut grads = Vec::with_capacity(o.len());
                    for (&on, &xv) in o.iter().zip(raw[n].iter()) {
                        let s = on.as_f64() * std + mean;
                        let (lp, ds) = model.log_prob_and_ds(xv, s);
                        recon_sum -= lp;
                        grads.push(T::from_f64_lossy(-ds * std * scale));
                    }
                    d_out.plane_of_mut(0, n).copy_from_slice(&grads);
                }
            }
            Likelihood::Colearned { .. } => {
                let m = self.colearned_model().expect("co-learned model");
                for n in 0..b {
                    let o = out.plane_of(0, n);
                    let mut grads = Vec::with_capacity(o.len());
                    for (&on, &xv) in o.iter().zip(raw[n].iter()) {
                        let s = on.as_f64() * std + mean;
                        let (lp, ds, da, db) = m.log_prob_grads(xv, s);
                        recon_sum -= lp;
                        grads.push(T::from_f64_lossy(-ds * std * scale));
                        colearn_grad[0] -= (da * std - db * std * mean) * scale;
                        colearn_grad[1] -= db * std * std * scale;
                    }
                    d_out.plane_of_mut(0, n).copy_from_slice(&grads);
                }
            }
            Likelihood::Learned => {
                for n in 0..b {
                    let (om, ov) = (out.plane_of(0, n), out.plane_of(1, n));
                    let mut gm = Vec::with_capacity(om.len());
                    let mut gv = Vec::with_capacity(om.len());
                    for ((&a, &c), &xv) in om.iter().zip(ov).zip(raw[n].iter()) {
                        let m = a.as_f64() * std + mean;
                        let c = c.as_f64();
                        let var = (softplus(c) + VANILLA_VAR_FLOOR) * std * std;
                        recon_sum -= gaussian_log_prob(xv, m, var);
                        let r = xv - m;
                        let dm = r / var;
                        let dv = -0.5 / var + r * r / (2.0 * var * var);
                        gm.push(T::from_f64_lossy(-dm * std * scale));
                        gv.push(T::from_f64_lossy(-dv * std * std * sigmoid(c) * scale));
                    }
                    d_out.plane_of_mut(0, n).copy_from_slice(&gm);
                    d_out.plane_of_mut(1, n).copy_from_slice(&gv);
                }
            }
        }
        let kl_sum: f64 = mu
            .data
            .iter()
            .zip(&lv.data)
            .map(|(&m, &l)| {
                let (m, l) = (m.as_f64(), l.as_f64());
                0.5 * (m * m + l.exp() - 1.0 - l)
            })
            .sum();
        let recon = recon_sum * scale;
        let kl = kl_sum * scale;
        let parts = LossParts {
            total: recon + beta * kl,
            recon,
            kl,
        };
        if !parts.is_finite() {
            return Err(Error::Divergence {
                iteration: 0,
                detail: format!("non-finite loss: total {}, recon {}, kl {}", parts.total, parts.recon, parts.kl),
            });
        }
        let pattern = activation_pattern(&dec_caches, activation_pattern(&enc_caches, 0xcbf29ce484222325));
        let signals = if opts.keep_signals {
            (0..b).map(|n| self.output_signal(&out, n)).collect()
        } else {
            Vec::new()
        };

        let grads = if opts.gradients {
            let mut grads: Vec<Vec<T>> = self.block_sizes().into_iter().map(|n| vec![T::zero(); n]).collect();
            let ne = self.encoder.block_count();
            let nd = self.decoder.block_count();
            let (enc_g, rest) = grads.split_at_mut(ne);
            let (head_g, rest) = rest.split_at_mut(4);
            let (dec_g, noise_g) = rest.split_at_mut(nd);
            let dz = self.decoder.backward(&dec_caches, d_out, pad, dec_g);
            let kl_w = beta * scale;
            let half = T::from_f64_lossy(0.5);
            let mut dmu = dz.clone();
            let mut dlv = dz;
            for i in 0..dmu.data.len() {
                let (m, l, l_raw, e) = (mu.data[i], lv.data[i], lv_raw.data[i], eps.data[i]);
                let sd = (l * half).exp();
                dmu.data[i] = dmu.data[i] + T::from_f64_lossy(kl_w) * m;
                let g = dlv.data[i] * e * half * sd + T::from_f64_lossy(kl_w * 0.5 * (l.as_f64().exp() - 1.0));
                dlv.data[i] = if l_raw.as_f64().abs() > LOG_VAR_CLAMP { T::zero() } else { g };
            }
            let (mu_g, lv_g) = head_g.split_at_mut(2);
            let (mu_w, mu_b) = mu_g.split_at_mut(1);
            let mut dh = self.mu_head.backward(&hidden, &dmu, pad, &mut mu_w[0], &mut mu_b[0]);
            let (lv_w, lv_b) = lv_g.split_at_mut(1);
            dh.add_assign(&self.logvar_head.backward(&hidden, &dlv, pad, &mut lv_w[0], &mut lv_b[0]));
            self.encoder.backward(&enc_caches, dh, pad, enc_g);
            if let Some(g) = noise_g.first_mut() {
                g[0] = T::from_f64_lossy(colearn_grad[0]);
                g[1] = T::from_f64_lossy(colearn_grad[1]);
            }
            Some(grads)
        } else {
            None
        };
        Ok(LossEval {
            parts,
            grads,
            signals,
            pattern,
        })
    }

    /// KL of the encoder posterior of a raw image, summed (not averaged).
    pub fn posterior_kl(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        Ok(kl_divergence(&self.encode(self.normalize(x).view())?))
    }
}

/// `z = mu + exp(log_var / 2) * eps`, `eps ~ N(0, I)`.
pub fn reparameterize(code: &LatentCode, rng: &mut impl Rng) -> Array3<f64> {
    code.reparameterize(rng)
}

fn clamp_log_var<T: Real>(mut t: Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (T::from_f64_lossy(-LOG_VAR_CLAMP), T::from_f64_lossy(LOG_VAR_CLAMP));
    for v in t.data.iter_mut() {
        *v = v.max(lo).min(hi);
    }
    t
}

pub(crate) fn tensor_to_array3<T: Real>(t: &Tensor<T>, n: usize) -> Array3<f64> {
    let mut a = Array3::zeros((t.c, t.h, t.w));
    for c in 0..t.c {
        for (dst, src) in a.index_axis_mut(ndarray::Axis(0), c).iter_mut().zip(t.plane_of(c, n)) {
            *dst = src.as_f64();
        }
    }
    a
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::GaussianNoiseModel;
    use rand::SeedableRng;

    fn stats() -> DataStats {
        DataStats { mean: 10.0, std: 4.0 }
    }

    fn gaussian() -> Likelihood {
        Likelihood::Noise {
            model: GaussianNoiseModel::new(2.0).unwrap().into(),
        }
    }

    fn arch(depth: usize, base: usize, latent: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            depth,
            base_features: base,
            latent_dims_per_position: latent,
            ..Default::default()
        }
    }

    #[test]
    fn parameter_counts_match_reference_sizes() {
        let m2 = VaeModel::<f32>::new(arch(2, 32, 64), stats(), gaussian(), 0).unwrap();
        let n2 = m2.parameter_count() as f64;
        assert!((n2 / 200_000.0 - 1.0).abs() < 0.05, "{n2}");
        let m3 = VaeModel::<f32>::new(arch(3, 32, 64), stats(), gaussian(), 0).unwrap();
        let n3 = m3.parameter_count() as f64;
        assert!((n3 / 713_000.0 - 1.0).abs() < 0.05, "{n3}");
    }

    #[test]
    fn latent_shapes() {
        let m = VaeModel::<f32>::new(arch(2, 4, 64), stats(), gaussian(), 0).unwrap();
        let code = m.encode(Image::zeros((128, 128)).view()).unwrap();
        assert_eq!(code.dim(), (64, 32, 32));
        let m = VaeModel::<f32>::new(arch(2, 4, 8), stats(), gaussian(), 0).unwrap();
        let code = m.encode(Image::zeros((28, 28)).view()).unwrap();
        assert_eq!(code.dim(), (8, 7, 7));
        let err = m.encode(Image::zeros((127, 128)).view()).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref s) if s.contains('4')), "{err}");
    }

    #[test]
    fn decode_shape_and_vanilla_variance_positive() {
        let mut a = arch(2, 4, 4);
        a.mode = Mode::Vanilla;
        let m = VaeModel::<f64>::new(a, stats(), Likelihood::Learned, 3).unwrap();
        let mut rng = crate::rng::rng_from_seed(1);
        for _ in 0..5 {
            let z = Array3::from_shape_fn((4, 4, 4), |_| rng.random_range(-50.0..50.0));
            let out = m.decode(z.view()).unwrap();
            assert_eq!(out.signal.dim(), (16, 16));
            let var = out.variance.unwrap();
            assert!(var.iter().all(|&v| v > 0.0));
        }
        assert!(m.decode(Array3::zeros((3, 4, 4)).view()).is_err());
    }

    #[test]
    fn reparameterize_degenerate_and_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mu = Array3::from_shape_fn((2, 3, 3), |(c, y, x)| (c + y + x) as f64 - 2.0);
        let code = LatentCode {
            mu: mu.clone(),
            log_var: Array3::from_elem((2, 3, 3), -30.0),
        };
        let z = code.reparameterize(&mut rng);
        for (&a, &b) in z.iter().zip(mu.iter()) {
            assert!((a - b).abs() < 1e-6 * b.abs() + 1e-6);
        }
        let unit = LatentCode {
            mu: Array3::zeros((1, 1, 1)),
            log_var: Array3::zeros((1, 1, 1)),
        };
        let draws: Vec<f64> = (0..100_000).map(|_| unit.reparameterize(&mut rng)[[0, 0, 0]]).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.02, "{mean} {var}");
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        assert_eq!(code.reparameterize(&mut r1), code.reparameterize(&mut r2));
    }

    #[test]
    fn beta_zero_gives_reconstruction_only() {
        let m = VaeModel::<f64>::new(arch(2, 4, 4), stats(), gaussian(), 5).unwrap();
        let x = Image::from_shape_fn((16, 16), |(y, x)| (y * x) as f64 * 0.1);
        let mut rng = crate::rng::rng_from_seed(2);
        let p = m.loss(x.view(), 0.0, &mut rng).unwrap();
        assert_eq!(p.total, p.recon);
        assert!(p.kl >= 0.0);
    }

    #[test]
    fn colearned_model_round_trips_through_normalized_params() {
        let mut a = arch(2, 4, 4);
        a.mode = Mode::UnsupervisedDivnoising;
        let mut m = VaeModel::<f64>::new(a, stats(), Likelihood::Colearned { sigma_min: 0.1 }, 0).unwrap();
        let target = LinearVarianceModel::new(2.5, -3.0, 0.1).unwrap();
        m.set_colearned_model(&target).unwrap();
        let got = m.colearned_model().unwrap();
        assert!((got.a - 2.5).abs() < 1e-12 && (got.b + 3.0).abs() < 1e-12);
    }

    /// Central finite differences on parameters whose perturbation keeps the
    /// ReLU/pooling regime fixed.
    fn gradient_check(model: VaeModel<f64>, images: &[Image], beta: f64, n_params: usize) -> f64 {
        let views: Vec<_> = images.iter().map(|i| i.view()).collect();
        let rng0 = crate::rng::rng_from_seed(77);
        let opts = EvalOptions { gradients: true, keep_signals: false };
        let base = model.evaluate(&views, beta, &mut rng0.clone(), opts).unwrap();
        let grads = base.grads.unwrap();
        let sizes = model.block_sizes();
        let mut pick = crate::rng::rng_from_seed(5);
        let h = 1e-3;
        let mut worst = 0.0f64;
        let mut checked = 0;
        // The co-learned noise coefficients form a tiny block; always include them.
        let mut forced: Vec<(usize, usize)> = match model.likelihood() {
            Likelihood::Colearned { .. } => vec![(sizes.len() - 1, 0), (sizes.len() - 1, 1)],
            _ => Vec::new(),
        };
        while checked < n_params {
            let (b, i) = forced.pop().unwrap_or_else(|| {
                let b = pick.random_range(0..sizes.len());
                (b, pick.random_range(0..sizes[b]))
            });
            let eval_at = |delta: f64| {
                let mut m = model.clone();
                m.param_blocks_mut()[b][i] += delta;
                m.evaluate(&views, beta, &mut rng0.clone(), EvalOptions::default()).unwrap()
            };
            let (plus, minus) = (eval_at(h), eval_at(-h));
            if plus.pattern != base.pattern || minus.pattern != base.pattern {
                continue;
            }
            let fd = (plus.parts.total - minus.parts.total) / (2.0 * h);
            let g = grads[b][i];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::rng::rng_from_seed(8);
        let images: Vec<Image> = (0..2)
            .map(|_| Image::from_shape_fn((16, 16), |(y, x)| 10.0 + 6.0 * ((y + x) as f64 * 0.4).sin() + rng.random_range(-3.0..3.0)))
            .collect();
        let m = VaeModel::<f64>::new(arch(2, 4, 4), stats(), gaussian(), 9).unwrap();
        let worst = gradient_check(m, &images, 1.0, 50);
        assert!(worst < 1e-4, "{worst}");
        let mut a = arch(2, 4, 4);
        a.mode = Mode::Vanilla;
        let m = VaeModel::<f64>::new(a, stats(), Likelihood::Learned, 9).unwrap();
        assert!(gradient_check(m, &images, 0.5, 30) < 1e-4);
        let mut a = arch(2, 4, 4);
        a.mode = Mode::UnsupervisedDivnoising;
        let m = VaeModel::<f64>::new(a, stats(), Likelihood::Colearned { sigma_min: 0.5 }, 9).unwrap();
        assert!(gradient_check(m, &images, 1.0, 30) < 1e-4);
    }

    #[test]
    fn mode_must_match_likelihood() {
        assert!(VaeModel::<f32>::new(arch(2, 4, 4), stats(), Likelihood::Learned, 0).is_err());
    }
}
