//! Raster readers and writers: multi-page TIFF, PNG and the raw array container.
//!
//! Array container layout (little-endian): magic `b"DNAR"`, u16 version,
//! u8 ndim (2 or 3), ndim x u64 dimensions, then f32 values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use crate::{Error, Image, Result};

pub const ARRAY_MAGIC: &[u8; 4] = b"DNAR";
pub const ARRAY_VERSION: u16 = 1;

/// Reads every page of a (multi-page) grayscale TIFF.
pub fn read_tiff_stack(path: &Path) -> Result<Vec<Image>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| Error::decode(path, e))?;
    let mut out = Vec::new();
    loop {
        let (w, h) = dec.dimensions().map_err(|e| Error::decode(path, e))?;
        let values: Vec<f64> = match dec.read_image().map_err(|e| Error::decode(path, e))? {
            DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
            DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
            DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
            DecodingResult::U64(v) => v.into_iter().map(|x| x as f64).collect(),
            DecodingResult::I8(v) => v.into_iter().map(f64::from).collect(),
            DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
            DecodingResult::I32(v) => v.into_iter().map(f64::from).collect(),
            DecodingResult::I64(v) => v.into_iter().map(|x| x as f64).collect(),
            DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
            DecodingResult::F64(v) => v,
            other => {
                return Err(Error::decode(path, format!("unsupported TIFF sample format {:?}", std::mem::discriminant(&other))));
            }
        };
        let (h, w) = (h as usize, w as usize);
        if values.len() != h * w {
            return Err(Error::decode(
                path,
                format!("page {} has {} samples for {h}x{w}; only single-channel images are supported", out.len(), values.len()),
            ));
        }
        out.push(Image::from_shape_vec((h, w), values).expect("checked length"));
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| Error::decode(path, e))?;
    }
    Ok(out)
}

/// Writes images as pages of a 32-bit float TIFF.
pub fn write_tiff_stack(path: &Path, images: &[Image]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::decode(path, e))?;
    for img in images {
        let (h, w) = img.dim();
        let data: Vec<f32> = img.iter().map(|&v| v as f32).collect();
        enc.write_image::<colortype::Gray32Float>(w as u32, h as u32, &data)
            .map_err(|e| Error::decode(path, e))?;
    }
    Ok(())
}

/// Writes a label image as 16-bit TIFF (32-bit if labels exceed `u16`).
pub fn write_label_tiff(path: &Path, labels: &Array2<u32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::decode(path, e))?;
    let (h, w) = labels.dim();
    let max = labels.iter().copied().max().unwrap_or(0);
    if max <= u16::MAX as u32 {
        let data: Vec<u16> = labels.iter().map(|&v| v as u16).collect();
        enc.write_image::<colortype::Gray16>(w as u32, h as u32, &data)
    } else {
        let data: Vec<u32> = labels.iter().copied().collect();
        enc.write_image::<colortype::Gray32>(w as u32, h as u32, &data)
    }
    .map_err(|e| Error::decode(path, e))
}

/// Reads a single-channel PNG (colour images are converted to luma).
pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::decode(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLumaA16(_) | image::DynamicImage::ImageRgb16(_) | image::DynamicImage::ImageRgba16(_) => {
            img.to_luma16().into_raw().into_iter().map(f64::from).collect()
        }
        image::DynamicImage::ImageRgb32F(_) | image::DynamicImage::ImageRgba32F(_) => {
            img.to_luma32f().into_raw().into_iter().map(f64::from).collect()
        }
        other => other.to_luma8().into_raw().into_iter().map(f64::from).collect(),
    };
    Ok(Image::from_shape_vec((h, w), values).expect("decoded size"))
}

/// Writes an 8-bit PNG, mapping `range` (default: the image min/max) to 0..255.
pub fn write_png(path: &Path, img: &Image, range: Option<(f64, f64)>) -> Result<()> {
    let (lo, hi) = range.unwrap_or_else(|| {
        img.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = img.dim();
    let data: Vec<u8> = img
        .iter()
        .map(|&v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    image::GrayImage::from_raw(w as u32, h as u32, data)
        .expect("buffer size")
        .save(path)
        .map_err(|e| Error::decode(path, e))
}

/// Reads a file by extension: TIFF (all pages), PNG or array container.
pub fn read_any(path: &Path) -> Result<Vec<Image>> {
    match extension(path).as_deref() {
        Some("tif") | Some("tiff") => read_tiff_stack(path),
        Some("png") => Ok(vec![read_png(path)?]),
        _ => read_array(path),
    }
}

/// Reads every PNG/TIFF file in a directory, ordered by file name.
pub fn read_image_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(extension(p).as_deref(), Some("png" | "tif" | "tiff")))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_any(&f)?);
    }
    Ok(out)
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

pub fn encode_array(images: &[Image]) -> Result<Vec<u8>> {
    let (h, w) = images
        .first()
        .map(|i| i.dim())
        .ok_or_else(|| Error::Input("cannot encode an empty image list".into()))?;
    if images.iter().any(|i| i.dim() != (h, w)) {
        return Err(Error::Dimension("array container images must share one shape".into()));
    }
    let mut out = Vec::with_capacity(4 + 2 + 1 + 24 + 4 * images.len() * h * w);
    out.extend_from_slice(ARRAY_MAGIC);
    out.extend_from_slice(&ARRAY_VERSION.to_le_bytes());
    out.push(3);
    for d in [images.len(), h, w] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for img in images {
        for &v in img.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_array(bytes: &[u8]) -> Result<Vec<Image>> {
    let bad = |m: &str| Error::Format(format!("array container: {m}"));
    if bytes.len() < 7 || &bytes[..4] != ARRAY_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != ARRAY_VERSION {
        return Err(bad(&format!("version {version} unsupported")));
    }
    let ndim = bytes[6] as usize;
    if !(2..=3).contains(&ndim) {
        return Err(bad(&format!("{ndim} dimensions (expected 2 or 3)")));
    }
    let header = 7 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u64::from_le_bytes(bytes[7 + 8 * i..15 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    let (n, h, w) = if ndim == 3 { (dims[0], dims[1], dims[2]) } else { (1, dims[0], dims[1]) };
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() - header != 4 * count {
        return Err(bad(&format!("payload holds {} bytes, shape needs {}", bytes.len() - header, 4 * count)));
    }
    let values: Vec<f64> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(values
        .chunks_exact((h * w).max(1))
        .take(n)
        .map(|c| Image::from_shape_vec((h, w), c.to_vec()).expect("chunk size"))
        .collect())
}

pub fn write_array(path: &Path, images: &[Image]) -> Result<()> {
    std::fs::write(path, encode_array(images)?).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<Vec<Image>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::decode(path, m),
        other => other,
    })
}
