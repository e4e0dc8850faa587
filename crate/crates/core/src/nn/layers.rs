use super::{Conv2d, Padding, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Relu,
    /// 2x2 max pooling with stride 2.
    MaxPool2,
    /// Nearest-neighbour 2x upsampling.
    Upsample2,
}

/// Values a layer keeps from its forward pass for the backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    Conv(Tensor<T>),
    Relu(Vec<bool>),
    MaxPool { argmax: Vec<u8>, h: usize, w: usize },
    Upsample,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv2d<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(Conv2d::param_count).sum()
    }

    /// Number of parameter blocks (weight and bias per convolution).
    pub fn block_count(&self) -> usize {
        2 * self.convs().count()
    }

    pub fn forward(&self, x: &Tensor<T>, padding: Padding) -> Tensor<T> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(conv) => conv.forward(&cur, padding),
                Layer::Relu => cur.map(|v| v.max(T::zero())),
                Layer::MaxPool2 => maxpool(&cur).0,
                Layer::Upsample2 => upsample(&cur),
            };
        }
        cur
    }

    pub fn forward_cached(&self, x: &Tensor<T>, padding: Padding, caches: &mut Vec<LayerCache<T>>) -> Tensor<T> {
        caches.clear();
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(conv) => {
                    let y = conv.forward(&cur, padding);
                    caches.push(LayerCache::Conv(cur));
                    y
                }
                Layer::Relu => {
                    let mask: Vec<bool> = cur.data.iter().map(|&v| v > T::zero()).collect();
                    let y = cur.map(|v| v.max(T::zero()));
                    caches.push(LayerCache::Relu(mask));
                    y
                }
                Layer::MaxPool2 => {
                    let (y, argmax) = maxpool(&cur);
                    caches.push(LayerCache::MaxPool {
                        argmax,
                        h: cur.h,
                        w: cur.w,
                    });
                    y
                }
                Layer::Upsample2 => {
                    caches.push(LayerCache::Upsample);
                    upsample(&cur)
                }
            };
        }
        cur
    }

    /// Back-propagates `dy`, accumulating parameter gradients into `grads`
    /// (two blocks per convolution, in layer order).
    pub fn backward(&self, caches: &[LayerCache<T>], dy: Tensor<T>, padding: Padding, grads: &mut [Vec<T>]) -> Tensor<T> {
        assert_eq!(caches.len(), self.layers.len());
        assert_eq!(grads.len(), self.block_count());
        let mut block = grads.len();
        let mut cur = dy;
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            cur = match (layer, cache) {
                (Layer::Conv(conv), LayerCache::Conv(input)) => {
                    block -= 2;
                    let (gw, rest) = grads[block..].split_at_mut(1);
                    conv.backward(input, &cur, padding, &mut gw[0], &mut rest[0])
                }
                (Layer::Relu, LayerCache::Relu(mask)) => {
                    for (g, &m) in cur.data.iter_mut().zip(mask) {
                        if !m {
                            *g = T::zero();
                        }
                    }
                    cur
                }
                (Layer::MaxPool2, LayerCache::MaxPool { argmax, h, w }) => unpool(&cur, argmax, *h, *w),
                (Layer::Upsample2, LayerCache::Upsample) => downsample_sum(&cur),
                _ => unreachable!("cache does not match layer"),
            };
        }
        cur
    }
}

/// FNV-1a digest of the piecewise-linear regime (ReLU masks and pooling
/// winners) recorded in `caches`.
pub fn activation_pattern<T>(caches: &[LayerCache<T>], mut hash: u64) -> u64 {
    const PRIME: u64 = 0x100000001b3;
    for cache in caches {
        match cache {
            LayerCache::Relu(mask) => {
                for &m in mask {
                    hash = (hash ^ m as u64).wrapping_mul(PRIME);
                }
            }
            LayerCache::MaxPool { argmax, .. } => {
                for &a in argmax {
                    hash = (hash ^ a as u64).wrapping_mul(PRIME);
                }
            }
            _ => {}
        }
    }
    hash
}

fn maxpool<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.c, x.n, oh, ow);
    let mut argmax = vec![0u8; y.data.len()];
    let mut o = 0;
    for c in 0..x.c {
        for n in 0..x.n {
            let src = x.plane_of(c, n);
            for yy in 0..oh {
                for xx in 0..ow {
                    let base = 2 * yy * x.w + 2 * xx;
                    let cand = [src[base], src[base + 1], src[base + x.w], src[base + x.w + 1]];
                    let mut best = 0;
                    for i in 1..4 {
                        if cand[i] > cand[best] {
                            best = i;
                        }
                    }
                    y.data[o] = cand[best];
                    argmax[o] = best as u8;
                    o += 1;
                }
            }
        }
    }
    (y, argmax)
}

fn unpool<T: Real>(dy: &Tensor<T>, argmax: &[u8], h: usize, w: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(dy.c, dy.n, h, w);
    let mut o = 0;
    for c in 0..dy.c {
        for n in 0..dy.n {
            let dst = dx.plane_of_mut(c, n);
            for yy in 0..dy.h {
                for xx in 0..dy.w {
                    let a = argmax[o] as usize;
                    let idx = (2 * yy + a / 2) * w + 2 * xx + a % 2;
                    dst[idx] = dy.data[o];
                    o += 1;
                }
            }
        }
    }
    dx
}

fn upsample<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (oh, ow) = (2 * x.h, 2 * x.w);
    let mut y = Tensor::zeros(x.c, x.n, oh, ow);
    for c in 0..x.c {
        for n in 0..x.n {
            let src = x.plane_of(c, n).to_vec();
            let dst = y.plane_of_mut(c, n);
            for yy in 0..oh {
                for xx in 0..ow {
                    dst[yy * ow + xx] = src[(yy / 2) * x.w + xx / 2];
                }
            }
        }
    }
    y
}

fn downsample_sum<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.c, dy.n, h, w);
    for c in 0..dy.c {
        for n in 0..dy.n {
            let src = dy.plane_of(c, n).to_vec();
            let dst = dx.plane_of_mut(c, n);
            for yy in 0..dy.h {
                for xx in 0..dy.w {
                    let i = (yy / 2) * w + xx / 2;
                    dst[i] = dst[i] + src[yy * dy.w + xx];
                }
            }
        }
    }
    dx
}
