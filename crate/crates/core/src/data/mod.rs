//! Dataset ingestion, patching, D4 augmentation and synthetic corruption.

mod augment;
mod corrupt;
mod patches;

pub use augment::{augment_eightfold, dihedral, D4_COUNT};
pub use corrupt::{corrupt, corrupt_image, CorruptionKind, CorruptionSpec};
pub use patches::{extract_patches, tile_patches, PatchOrigin, PatchSet};

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{io, Error, Image, Result};

/// Pixel mean and standard deviation used for input standardization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataStats {
    pub mean: f64,
    pub std: f64,
}

impl DataStats {
    /// A constant stack has zero spread and cannot be standardized.
    pub fn is_degenerate(&self) -> bool {
        !(self.std > 0.0)
    }

    /// Divisor used for standardization; 1 for degenerate stats.
    pub fn scale(&self) -> f64 {
        if self.is_degenerate() {
            1.0
        } else {
            self.std
        }
    }
}

impl Default for DataStats {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    pub images: Vec<Image>,
    pub name: String,
    pub stats: Option<DataStats>,
}

impl ImageStack {
    pub fn new(name: impl Into<String>, images: Vec<Image>) -> Result<Self> {
        if let Some(i) = images.iter().position(|im| im.nrows() == 0 || im.ncols() == 0) {
            return Err(Error::Dimension(format!("image {i} is empty")));
        }
        Ok(Self {
            images,
            name: name.into(),
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.images.iter().map(|i| i.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackFormat {
    TiffStack,
    PngDir,
    ArrayContainer,
}

impl FromStr for StackFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiff_stack" | "tiff" => Ok(StackFormat::TiffStack),
            "png_dir" | "dir" => Ok(StackFormat::PngDir),
            "array_container" | "array" => Ok(StackFormat::ArrayContainer),
            other => Err(Error::Config(format!(
                "unknown stack format {other:?} (expected tiff_stack, png_dir or array_container)"
            ))),
        }
    }
}

impl StackFormat {
    /// Guesses the format from a path: directories are image folders.
    pub fn infer(path: &Path) -> Self {
        if path.is_dir() {
            return StackFormat::PngDir;
        }
        match path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).as_deref() {
            Some("tif" | "tiff") => StackFormat::TiffStack,
            _ => StackFormat::ArrayContainer,
        }
    }
}

pub fn load_stack(path: &Path, format: StackFormat) -> Result<ImageStack> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "path does not exist")));
    }
    let images = match format {
        StackFormat::TiffStack => io::read_tiff_stack(path)?,
        StackFormat::PngDir => io::read_image_dir(path)?,
        StackFormat::ArrayContainer => io::read_array(path)?,
    };
    if images.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ImageStack::new(name, images)
}

/// Mean and population standard deviation over all pixels, stored on the
/// stack. A constant stack yields `std == 0`, reported as degenerate.
pub fn compute_stats(stack: &mut ImageStack) -> Result<DataStats> {
    if stack.is_empty() {
        return Err(Error::Input("cannot compute statistics of an empty stack".into()));
    }
    let n = stack.pixel_count() as f64;
    let mean = stack.images.iter().flat_map(|i| i.iter()).sum::<f64>() / n;
    let var = stack
        .images
        .iter()
        .flat_map(|i| i.iter())
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let stats = DataStats { mean, std: var.sqrt() };
    if stats.is_degenerate() {
        log::warn!("stack {:?} is constant (value {mean}); standardization is degenerate", stack.name);
    }
    stack.stats = Some(stats);
    Ok(stats)
}
