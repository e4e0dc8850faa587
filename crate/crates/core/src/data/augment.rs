use crate::{Error, Image, Result};

/// Size of the dihedral group of the square.
pub const D4_COUNT: usize = 8;

/// Element `k` of D4: `k % 4` counter-clockwise quarter turns, followed by a
/// horizontal mirror when `k >= 4`.
pub fn dihedral(patch: &Image, k: usize) -> Image {
    let mut out = patch.clone();
    for _ in 0..k % 4 {
        out = rot90(&out);
    }
    if k % D4_COUNT >= 4 {
        out.invert_axis(ndarray::Axis(1));
    }
    out
}

fn rot90(a: &Image) -> Image {
    let (h, w) = a.dim();
    Image::from_shape_fn((w, h), |(y, x)| a[[x, w - 1 - y]])
}

/// All eight D4 transforms of a square patch.
pub fn augment_eightfold(patch: &Image) -> Result<Vec<Image>> {
    if patch.nrows() != patch.ncols() {
        return Err(Error::Dimension(format!(
            "augmentation needs a square patch, got {}x{}",
            patch.nrows(),
            patch.ncols()
        )));
    }
    Ok((0..D4_COUNT).map(|k| dihedral(patch, k)).collect())
}
