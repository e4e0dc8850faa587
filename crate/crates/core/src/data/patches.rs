use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ImageStack;
use crate::{Error, Image, Result};

/// Where a patch was cut from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Image>,
    pub patch_size: usize,
    pub origins: Vec<PatchOrigin>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> PatchSet {
        PatchSet {
            patches: idx.iter().map(|&i| self.patches[i].clone()).collect(),
            patch_size: self.patch_size,
            origins: idx.iter().map(|&i| self.origins[i]).collect(),
        }
    }
}

/// Non-overlapping tiling of every image; partial tiles at the right and
/// bottom borders are discarded.
pub fn tile_patches(stack: &ImageStack, patch_size: usize) -> Result<PatchSet> {
    if patch_size == 0 {
        return Err(Error::Input("patch_size must be positive".into()));
    }
    if let Some((i, img)) = stack
        .images
        .iter()
        .enumerate()
        .find(|(_, im)| im.nrows().min(im.ncols()) < patch_size)
    {
        return Err(Error::Dimension(format!(
            "patch size {patch_size} exceeds image {i} of size {}x{}",
            img.nrows(),
            img.ncols()
        )));
    }
    let mut set = PatchSet {
        patch_size,
        ..Default::default()
    };
    for (i, img) in stack.images.iter().enumerate() {
        for row in (0..=img.nrows() - patch_size).step_by(patch_size) {
            for col in (0..=img.ncols() - patch_size).step_by(patch_size) {
                set.patches
                    .push(img.slice(ndarray::s![row..row + patch_size, col..col + patch_size]).to_owned());
                set.origins.push(PatchOrigin { image: i, row, col });
            }
        }
    }
    Ok(set)
}

/// Tiles the stack and moves a seeded random `val_fraction` share of the
/// patches (at least one, never all) to the validation set.
pub fn extract_patches(stack: &ImageStack, patch_size: usize, val_fraction: f64, seed: u64) -> Result<(PatchSet, PatchSet)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Input(format!("val_fraction must lie in (0, 1), got {val_fraction}")));
    }
    let all = tile_patches(stack, patch_size)?;
    let n = all.len();
    if n < 2 {
        return Err(Error::Input(format!(
            "{n} patch(es) of size {patch_size} cannot be split into training and validation sets"
        )));
    }
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::rng_from_seed(seed));
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut train: Vec<usize> = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((all.subset(&train), all.subset(&val)))
}
