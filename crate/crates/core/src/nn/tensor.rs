use super::Real;

/// Dense 4-D tensor stored channel-major: `(channels, batch, height, width)`.
///
/// Keeping channels outermost turns every convolution over a whole batch
/// into a single matrix product.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    pub fn from_vec(c: usize, n: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * n * h * w, "tensor data length");
        Self { c, n, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.c, self.n, self.h, self.w)
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn idx(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.n + n) * self.h + y) * self.w + x
    }

    /// Copies out sample `n` of channel `c` as a row-major plane.
    pub fn plane_of(&self, c: usize, n: usize) -> &[T] {
        let start = self.idx(c, n, 0, 0);
        &self.data[start..start + self.plane()]
    }

    pub fn plane_of_mut(&mut self, c: usize, n: usize) -> &mut [T] {
        let start = self.idx(c, n, 0, 0);
        let len = self.plane();
        &mut self.data[start..start + len]
    }

    /// Extracts batch items `[start, start + len)` into a new tensor.
    pub fn batch_slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.n);
        let mut out = Self::zeros(self.c, len, self.h, self.w);
        let chunk = len * self.plane();
        for c in 0..self.c {
            let src = self.idx(c, start, 0, 0);
            let dst = c * chunk;
            out.data[dst..dst + chunk].copy_from_slice(&self.data[src..src + chunk]);
        }
        out
    }

    /// Selects one channel as a `(1, n, h, w)` tensor.
    pub fn channel(&self, c: usize) -> Self {
        let len = self.n * self.plane();
        let start = c * len;
        Self::from_vec(1, self.n, self.h, self.w, self.data[start..start + len].to_vec())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            c: self.c,
            n: self.n,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            c: self.c,
            n: self.n,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}
