use serde::{Deserialize, Serialize};

use crate::nn::Padding;
use crate::{Error, Result};

/// Which decoder likelihood the VAE is trained with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Decoder predicts the signal; likelihood is a fixed noise model.
    #[default]
    Divnoising,
    /// Decoder predicts per-pixel mean and variance.
    Vanilla,
    /// Decoder predicts the signal; a linear-variance noise model is co-learned.
    UnsupervisedDivnoising,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub depth: usize,
    pub base_features: usize,
    pub latent_dims_per_position: usize,
    pub conv_kernel: usize,
    pub pool: usize,
    pub mode: Mode,
    pub padding: Padding,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            base_features: 32,
            latent_dims_per_position: 64,
            conv_kernel: 3,
            pool: 2,
            mode: Mode::Divnoising,
            padding: Padding::Zero,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_features == 0 || self.latent_dims_per_position == 0 {
            return Err(Error::Config("depth, base_features and latent_dims_per_position must be positive".into()));
        }
        if self.conv_kernel != 3 || self.pool != 2 {
            return Err(Error::Config(format!(
                "only 3x3 convolutions with 2x2 pooling are supported (got kernel {}, pool {})",
                self.conv_kernel, self.pool
            )));
        }
        Ok(())
    }

    /// Spatial reduction factor between image and latent grid.
    pub fn downsampling(&self) -> usize {
        self.pool.pow(self.depth as u32)
    }

    /// Feature width of encoder level `k` (doubles per downsampling step).
    pub fn features_at(&self, level: usize) -> usize {
        self.base_features << level
    }

    pub fn latent_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let f = self.downsampling();
        if h % f != 0 || w % f != 0 {
            return Err(Error::Dimension(format!(
                "image {h}x{w} is not divisible by {f} (pool^depth); use a multiple of {f} or tiled prediction"
            )));
        }
        Ok((h / f, w / f))
    }

    pub fn output_channels(&self) -> usize {
        match self.mode {
            Mode::Vanilla => 2,
            _ => 1,
        }
    }
}
