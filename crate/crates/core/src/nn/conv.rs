use rand::Rng;
use serde::{Deserialize, Serialize};

use super::real::{gemm, MatRef};
use super::{Real, Tensor};

/// Boundary handling for 3x3 convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Zero,
    /// Wrap-around borders; makes the network exactly shift-equivariant.
    Periodic,
}

/// Odd-sized square convolution with "same" output size.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// `(out_ch, in_ch * kernel * kernel)`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

// Upper bound on im2col buffer entries per chunk.
const COL_BUDGET: usize = 1 << 23;

impl<T: Real> Conv2d<T> {
    /// Uniform init with standard deviation `gain / sqrt(fan_in)`.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, gain: f64, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_ch * kernel * kernel;
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        let weight = (0..out_ch * fan_in)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect();
        Self {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias: vec![T::zero(); out_ch],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn chunk_len(&self, plane: usize, n: usize) -> usize {
        (COL_BUDGET / (self.fan_in() * plane).max(1)).clamp(1, n.max(1))
    }

    pub fn forward(&self, x: &Tensor<T>, padding: Padding) -> Tensor<T> {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let plane = x.plane();
        let total = x.n * plane;
        let mut y = Tensor::zeros(self.out_ch, x.n, x.h, x.w);
        let w = MatRef::row_major(&self.weight, self.out_ch, self.fan_in());
        let chunk = self.chunk_len(plane, x.n);
        let mut cols = Vec::new();
        let mut n0 = 0;
        while n0 < x.n {
            let nb = chunk.min(x.n - n0);
            let p = nb * plane;
            let out = &mut y.data[n0 * plane..];
            if self.kernel == 1 {
                let b = MatRef::with_stride(&x.data[n0 * plane..], self.in_ch, p, total);
                gemm(T::one(), w, b, T::zero(), out, total);
            } else {
                im2col(x, n0, nb, self.kernel, padding, &mut cols);
                let b = MatRef::row_major(&cols, self.fan_in(), p);
                gemm(T::one(), w, b, T::zero(), out, total);
            }
            n0 += nb;
        }
        for (co, &b) in self.bias.iter().enumerate() {
            if b != T::zero() {
                for v in &mut y.data[co * total..(co + 1) * total] {
                    *v = *v + b;
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients into `gw`/`gb` and returns the
    /// input gradient.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        padding: Padding,
        gw: &mut [T],
        gb: &mut [T],
    ) -> Tensor<T> {
        assert_eq!(dy.c, self.out_ch);
        let plane = x.plane();
        let total = x.n * plane;
        for (co, g) in gb.iter_mut().enumerate() {
            let s: T = dy.data[co * total..(co + 1) * total].iter().copied().sum();
            *g = *g + s;
        }
        let w = MatRef::row_major(&self.weight, self.out_ch, self.fan_in());
        let mut dx = Tensor::zeros(self.in_ch, x.n, x.h, x.w);
        let chunk = self.chunk_len(plane, x.n);
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        let mut n0 = 0;
        while n0 < x.n {
            let nb = chunk.min(x.n - n0);
            let p = nb * plane;
            let dyc = MatRef::with_stride(&dy.data[n0 * plane..], self.out_ch, p, total);
            if self.kernel == 1 {
                let xc = MatRef::with_stride(&x.data[n0 * plane..], self.in_ch, p, total);
                gemm(T::one(), dyc, xc.t(), T::one(), gw, self.fan_in());
                gemm(T::one(), w.t(), dyc, T::zero(), &mut dx.data[n0 * plane..], total);
            } else {
                im2col(x, n0, nb, self.kernel, padding, &mut cols);
                let xc = MatRef::row_major(&cols, self.fan_in(), p);
                gemm(T::one(), dyc, xc.t(), T::one(), gw, self.fan_in());
                dcols.clear();
                dcols.resize(self.fan_in() * p, T::zero());
                gemm(T::one(), w.t(), dyc, T::zero(), &mut dcols, p);
                col2im(&dcols, &mut dx, n0, nb, self.kernel, padding);
            }
            n0 += nb;
        }
        dx
    }
}

/// Lays out receptive fields of batch items `[n0, n0 + nb)` as columns.
fn im2col<T: Real>(x: &Tensor<T>, n0: usize, nb: usize, k: usize, padding: Padding, cols: &mut Vec<T>) {
    let (h, w) = (x.h, x.w);
    let pad = k / 2;
    let p = nb * h * w;
    cols.clear();
    cols.resize(x.c * k * k * p, T::zero());
    for ci in 0..x.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut cols[row * p..(row + 1) * p];
                for b in 0..nb {
                    let src = x.plane_of(ci, n0 + b);
                    for y in 0..h {
                        let dst = &mut dst_row[(b * h + y) * w..(b * h + y + 1) * w];
                        let sy = y as isize + ky as isize - pad as isize;
                        match padding {
                            Padding::Zero => {
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                                let shift = kx as isize - pad as isize;
                                let lo = (-shift).max(0) as usize;
                                let hi = (w as isize - shift).min(w as isize).max(0) as usize;
                                if lo < hi {
                                    let s0 = (lo as isize + shift) as usize;
                                    dst[lo..hi].copy_from_slice(&srow[s0..s0 + (hi - lo)]);
                                }
                            }
                            Padding::Periodic => {
                                let sy = sy.rem_euclid(h as isize) as usize;
                                let srow = &src[sy * w..(sy + 1) * w];
                                for (xx, d) in dst.iter_mut().enumerate() {
                                    let sx = (xx as isize + kx as isize - pad as isize).rem_euclid(w as isize);
                                    *d = srow[sx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds column gradients back onto the input layout.
fn col2im<T: Real>(dcols: &[T], dx: &mut Tensor<T>, n0: usize, nb: usize, k: usize, padding: Padding) {
    let (h, w) = (dx.h, dx.w);
    let pad = k / 2;
    let p = nb * h * w;
    for ci in 0..dx.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &dcols[row * p..(row + 1) * p];
                for b in 0..nb {
                    let dst = dx.plane_of_mut(ci, n0 + b);
                    for y in 0..h {
                        let src = &src_row[(b * h + y) * w..(b * h + y + 1) * w];
                        let sy = y as isize + ky as isize - pad as isize;
                        match padding {
                            Padding::Zero => {
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                                let shift = kx as isize - pad as isize;
                                let lo = (-shift).max(0) as usize;
                                let hi = (w as isize - shift).min(w as isize).max(0) as usize;
                                for xx in lo..hi {
                                    let sx = (xx as isize + shift) as usize;
                                    drow[sx] = drow[sx] + src[xx];
                                }
                            }
                            Padding::Periodic => {
                                let sy = sy.rem_euclid(h as isize) as usize;
                                let drow = &mut dst[sy * w..(sy + 1) * w];
                                for (xx, &g) in src.iter().enumerate() {
                                    let sx = (xx as isize + kx as isize - pad as isize).rem_euclid(w as isize);
                                    drow[sx as usize] = drow[sx as usize] + g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
