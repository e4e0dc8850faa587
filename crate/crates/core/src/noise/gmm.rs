//! Signal-dependent Gaussian mixture noise model.
//!
//! Every component has a weight logit, a mean offset and a variance, each a
//! polynomial in the normalized signal `t = (s - s_lo) / (s_hi - s_lo)`:
//!
//! * weights: softmax over the component logit polynomials
//! * means: `s + scale * poly(t)`, so all-zero coefficients give `mean = s`
//! * variances: `max(scale^2 * sum_j exp(c_j) t^j, floor)`, a polynomial with
//!   positive coefficients
//!
//! `scale` is a reference noise level fixed at fit time; it keeps the
//! coefficients O(1) whatever the intensity range.

use std::f64::consts::PI;

use log::warn;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{standard_normal, CalibrationStack, NoiseModel};
use crate::nn::{Adam, AdamConfig};
use crate::rng::rng_from_seed;
use crate::{Error, Image, Result};

/// Lower bound on any component variance, in squared intensity units.
pub const GMM_VARIANCE_FLOOR: f64 = 1e-3;

const MAX_COMPONENTS: usize = 16;
// exp(LOG_ZERO) underflows to a negligible coefficient.
const LOG_ZERO: f64 = -700.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmNoiseModel {
    pub n_components: usize,
    pub n_coeffs: usize,
    /// Component-major `(n_components, n_coeffs)` coefficient tables.
    pub weight_coeffs: Vec<f64>,
    pub mean_coeffs: Vec<f64>,
    pub var_coeffs: Vec<f64>,
    pub signal_range: (f64, f64),
    pub scale: f64,
}

struct Eval {
    log_w: [f64; MAX_COMPONENTS],
    dlogit: [f64; MAX_COMPONENTS],
    mean: [f64; MAX_COMPONENTS],
    dmean: [f64; MAX_COMPONENTS],
    var: [f64; MAX_COMPONENTS],
    dvar: [f64; MAX_COMPONENTS],
    clamped: [bool; MAX_COMPONENTS],
}

fn poly(c: &[f64], t: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for (j, &cj) in c.iter().enumerate() {
        v += cj * t.powi(j as i32);
        if j > 0 {
            d += cj * j as f64 * t.powi(j as i32 - 1);
        }
    }
    (v, d)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmNoiseModel {
    /// Model with uniform weights, `mean = s` and constant variance `scale^2`.
    pub fn identity(n_components: usize, n_coeffs: usize, signal_range: (f64, f64), scale: f64) -> Self {
        assert!((1..=MAX_COMPONENTS).contains(&n_components) && n_coeffs >= 1);
        let mut var_coeffs = vec![LOG_ZERO; n_components * n_coeffs];
        for k in 0..n_components {
            var_coeffs[k * n_coeffs] = 0.0;
        }
        Self {
            n_components,
            n_coeffs,
            weight_coeffs: vec![0.0; n_components * n_coeffs],
            mean_coeffs: vec![0.0; n_components * n_coeffs],
            var_coeffs,
            signal_range,
            scale,
        }
    }

    pub fn coefficient_count(&self) -> usize {
        3 * self.n_components * self.n_coeffs
    }

    /// All coefficients as one vector: weights, then means, then variances.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut out = self.weight_coeffs.clone();
        out.extend_from_slice(&self.mean_coeffs);
        out.extend_from_slice(&self.var_coeffs);
        out
    }

    pub fn set_coefficients(&mut self, flat: &[f64]) {
        let n = self.n_components * self.n_coeffs;
        assert_eq!(flat.len(), 3 * n);
        self.weight_coeffs.copy_from_slice(&flat[..n]);
        self.mean_coeffs.copy_from_slice(&flat[n..2 * n]);
        self.var_coeffs.copy_from_slice(&flat[2 * n..]);
    }

    fn range(&self) -> f64 {
        let r = self.signal_range.1 - self.signal_range.0;
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    fn normalize(&self, s: f64) -> f64 {
        (s - self.signal_range.0) / self.range()
    }

    fn coeffs<'a>(&self, table: &'a [f64], k: usize) -> &'a [f64] {
        &table[k * self.n_coeffs..(k + 1) * self.n_coeffs]
    }

    fn eval(&self, s: f64) -> Eval {
        let t = self.normalize(s);
        let inv_range = 1.0 / self.range();
        let scale2 = self.scale * self.scale;
        let k_n = self.n_components;
        let mut e = Eval {
            log_w: [0.0; MAX_COMPONENTS],
            dlogit: [0.0; MAX_COMPONENTS],
            mean: [0.0; MAX_COMPONENTS],
            dmean: [0.0; MAX_COMPONENTS],
            var: [0.0; MAX_COMPONENTS],
            dvar: [0.0; MAX_COMPONENTS],
            clamped: [false; MAX_COMPONENTS],
        };
        let mut logits = [0.0; MAX_COMPONENTS];
        for k in 0..k_n {
            let (l, dl) = poly(self.coeffs(&self.weight_coeffs, k), t);
            logits[k] = l;
            e.dlogit[k] = dl * inv_range;
            let (m, dm) = poly(self.coeffs(&self.mean_coeffs, k), t);
            e.mean[k] = s + self.scale * m;
            e.dmean[k] = 1.0 + self.scale * dm * inv_range;
            let vc = self.coeffs(&self.var_coeffs, k);
            let mut v = 0.0;
            let mut dv = 0.0;
            for (j, &c) in vc.iter().enumerate() {
                let ec = c.exp();
                v += ec * t.powi(j as i32);
                if j > 0 {
                    dv += ec * j as f64 * t.powi(j as i32 - 1);
                }
            }
            let v = scale2 * v;
            if v < GMM_VARIANCE_FLOOR || !v.is_finite() {
                e.var[k] = GMM_VARIANCE_FLOOR;
                e.clamped[k] = true;
            } else {
                e.var[k] = v;
                e.dvar[k] = scale2 * dv * inv_range;
            }
        }
        let lse = log_sum_exp(&logits[..k_n]);
        for k in 0..k_n {
            e.log_w[k] = logits[k] - lse;
        }
        e
    }

    /// Component `(weight, mean, variance)` triples at signal `s`.
    pub fn components(&self, s: f64) -> Vec<(f64, f64, f64)> {
        let e = self.eval(s);
        (0..self.n_components).map(|k| (e.log_w[k].exp(), e.mean[k], e.var[k])).collect()
    }

    fn joint_terms(&self, e: &Eval, x: f64, out: &mut [f64; MAX_COMPONENTS]) -> f64 {
        for k in 0..self.n_components {
            let r = x - e.mean[k];
            out[k] = e.log_w[k] - 0.5 * (2.0 * PI * e.var[k]).ln() - r * r / (2.0 * e.var[k]);
        }
        log_sum_exp(&out[..self.n_components])
    }

    /// Adds `d log p(x|s) / d coefficients` to `grad` (layout of
    /// [`coefficients`](Self::coefficients)) and returns `log p(x|s)`.
    pub fn accumulate_coeff_grad(&self, x: f64, s: f64, grad: &mut [f64]) -> f64 {
        let e = self.eval(s);
        let mut terms = [0.0; MAX_COMPONENTS];
        let lp = self.joint_terms(&e, x, &mut terms);
        let t = self.normalize(s);
        let n = self.n_components * self.n_coeffs;
        let scale2 = self.scale * self.scale;
        for k in 0..self.n_components {
            let resp = (terms[k] - lp).exp();
            let w = e.log_w[k].exp();
            let r = x - e.mean[k];
            let dmean = resp * r / e.var[k] * self.scale;
            let dvar = resp * (-0.5 / e.var[k] + r * r / (2.0 * e.var[k] * e.var[k]));
            for j in 0..self.n_coeffs {
                let tj = t.powi(j as i32);
                let idx = k * self.n_coeffs + j;
                grad[idx] += (resp - w) * tj;
                grad[n + idx] += dmean * tj;
                if !e.clamped[k] {
                    grad[2 * n + idx] += dvar * scale2 * self.var_coeffs[idx].exp() * tj;
                }
            }
        }
        lp
    }
}

impl NoiseModel for GmmNoiseModel {
    fn log_prob(&self, x: f64, s: f64) -> f64 {
        let e = self.eval(s);
        let mut terms = [0.0; MAX_COMPONENTS];
        self.joint_terms(&e, x, &mut terms)
    }

    fn log_prob_and_ds(&self, x: f64, s: f64) -> (f64, f64) {
        let e = self.eval(s);
        let mut terms = [0.0; MAX_COMPONENTS];
        let lp = self.joint_terms(&e, x, &mut terms);
        let k_n = self.n_components;
        let mean_dlogit: f64 = (0..k_n).map(|k| e.log_w[k].exp() * e.dlogit[k]).sum();
        let mut d = 0.0;
        for k in 0..k_n {
            let resp = (terms[k] - lp).exp();
            let r = x - e.mean[k];
            let dg = r / e.var[k] * e.dmean[k] + (-0.5 / e.var[k] + r * r / (2.0 * e.var[k] * e.var[k])) * e.dvar[k];
            d += resp * (e.dlogit[k] - mean_dlogit + dg);
        }
        (lp, d)
    }

    fn effective_std(&self, s: f64) -> f64 {
        let comps = self.components(s);
        let m: f64 = comps.iter().map(|(w, mu, _)| w * mu).sum();
        let second: f64 = comps.iter().map(|(w, mu, v)| w * (v + mu * mu)).sum();
        (second - m * m).max(0.0).sqrt()
    }

    fn sample(&self, s: f64, rng: &mut dyn rand::RngCore) -> f64 {
        let comps = self.components(s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = comps.len() - 1;
        for (k, (w, _, _)) in comps.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let (_, mu, var) = comps[chosen];
        mu + var.sqrt() * standard_normal(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmFitConfig {
    pub n_components: usize,
    pub n_coeffs: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GmmFitConfig {
    fn default() -> Self {
        Self {
            n_components: 3,
            n_coeffs: 2,
            iterations: 2000,
            learning_rate: 0.1,
            batch_size: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmNoiseModel,
    /// Mean per-pixel log-likelihood over all calibration pixels.
    pub log_likelihood: f64,
    /// Minibatch negative log-likelihood per iteration.
    pub loss_history: Vec<f64>,
    /// Set when every component variance collapsed onto the floor.
    pub degenerate: bool,
}

/// Fits a [`GmmNoiseModel`] to `(observation, signal estimate)` pixel pairs by
/// minibatch gradient ascent on the log-likelihood.
pub fn fit_gmm(calib: &CalibrationStack, cfg: &GmmFitConfig) -> Result<GmmFit> {
    let signal = calib
        .signal_estimate
        .as_ref()
        .ok_or_else(|| Error::Input("signal estimate not computed for calibration stack".into()))?;
    let signals = vec![signal.clone(); calib.observations.len()];
    fit_gmm_pairs(&calib.observations, &signals, cfg)
}

/// Fits a [`GmmNoiseModel`] to observations paired pixel by pixel with
/// their own signal images.
pub fn fit_gmm_pairs(observations: &[Image], signals: &[Image], cfg: &GmmFitConfig) -> Result<GmmFit> {
    if cfg.n_components == 0 || cfg.n_components > MAX_COMPONENTS || cfg.n_coeffs == 0 {
        return Err(Error::Input(format!(
            "need 1..={MAX_COMPONENTS} components and at least one coefficient, got {} / {}",
            cfg.n_components, cfg.n_coeffs
        )));
    }
    if observations.len() != signals.len() || observations.is_empty() {
        return Err(Error::Input(format!("{} observations vs {} signal images", observations.len(), signals.len())));
    }
    let mut xs = Vec::new();
    let mut ss = Vec::new();
    for (o, sgn) in observations.iter().zip(signals) {
        if o.dim() != sgn.dim() {
            return Err(Error::Dimension(format!("observation {:?} vs signal {:?}", o.dim(), sgn.dim())));
        }
        xs.extend(o.iter().copied());
        ss.extend(sgn.iter().copied());
    }
    let total = xs.len();

    let lo = ss.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ss.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };

    // Moment initialization: regress squared residuals on normalized signal.
    let (mut st, mut sr, mut stt, mut str_) = (0.0, 0.0, 0.0, 0.0);
    {
        for (x, s) in xs.iter().zip(&ss) {
            let t = (s - lo) / range;
            let r2 = (x - s) * (x - s);
            st += t;
            sr += r2;
            stt += t * t;
            str_ += t * r2;
        }
    }
    let nf = total as f64;
    let mean_r2 = sr / nf;
    let denom = nf * stt - st * st;
    let (mut icpt, mut slope) = if cfg.n_coeffs >= 2 && denom.abs() > 1e-12 {
        let slope = (nf * str_ - st * sr) / denom;
        ((sr - slope * st) / nf, slope)
    } else {
        (mean_r2, 0.0)
    };
    let scale = if mean_r2 > GMM_VARIANCE_FLOOR { mean_r2.sqrt() } else { GMM_VARIANCE_FLOOR.sqrt() };
    let scale2 = scale * scale;
    if icpt < 0.05 * mean_r2 {
        icpt = 0.05 * mean_r2;
    }
    slope = slope.max(1e-6 * scale2);

    let mut model = GmmNoiseModel::identity(cfg.n_components, cfg.n_coeffs, (lo, hi), scale);
    for k in 0..cfg.n_components {
        let spread = if cfg.n_components == 1 {
            1.0
        } else {
            0.5 * 4f64.powf(k as f64 / (cfg.n_components - 1) as f64)
        };
        let base = k * cfg.n_coeffs;
        model.var_coeffs[base] = ((spread * icpt).max(GMM_VARIANCE_FLOOR) / scale2).ln();
        if cfg.n_coeffs >= 2 {
            model.var_coeffs[base + 1] = (spread * slope / scale2).ln();
        }
        for j in 2..cfg.n_coeffs {
            model.var_coeffs[base + j] = (1e-6f64).ln();
        }
    }

    let mut rng = rng_from_seed(cfg.seed);
    let mut params = model.coefficients();
    let mut opt = Adam::new(AdamConfig::default(), &[params.len()]);
    let mut history = Vec::with_capacity(cfg.iterations);
    let batch = cfg.batch_size.max(1);
    for it in 0..cfg.iterations {
        let mut grad = vec![0.0; params.len()];
        let mut ll = 0.0;
        for _ in 0..batch {
            let u = rng.random_range(0..total);
            ll += model.accumulate_coeff_grad(xs[u], ss[u], &mut grad);
        }
        let loss = -ll / batch as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                detail: format!("gmm negative log-likelihood is {loss}"),
            });
        }
        history.push(loss);
        // Descend on the negative mean log-likelihood.
        let g: Vec<f64> = grad.iter().map(|v| -v / batch as f64).collect();
        let lr = cfg.learning_rate * 0.5 * (1.0 + (PI * it as f64 / cfg.iterations as f64).cos());
        opt.step(&mut [&mut params[..]], &[g], lr);
        model.set_coefficients(&params);
    }

    let mut ll_total = 0.0;
    for (x, s) in xs.iter().zip(&ss) {
        ll_total += model.log_prob(*x, *s);
    }
    let log_likelihood = ll_total / nf;
    if !log_likelihood.is_finite() {
        return Err(Error::Divergence {
            iteration: cfg.iterations,
            detail: "final log-likelihood is not finite".into(),
        });
    }
    let mid = 0.5 * (lo + hi);
    let degenerate = model
        .components(mid)
        .iter()
        .all(|&(_, _, v)| v <= GMM_VARIANCE_FLOOR * (1.0 + 1e-9));
    if degenerate {
        warn!("gmm fit collapsed: all component variances clamped at the floor {GMM_VARIANCE_FLOOR}");
    }
    Ok(GmmFit {
        model,
        log_likelihood,
        loss_history: history,
        degenerate,
    })
}
