//! Binary noise-model container.
//!
//! Layout (little-endian):
//!
//! | field          | type            |
//! |----------------|-----------------|
//! | magic          | `b"DNNM"`       |
//! | version        | u16             |
//! | kind           | u8 (0 gaussian, 1 gmm, 2 linear variance) |
//! | n_coefficients | u32             |
//! | coefficients   | f64 x n         |
//! | metadata_len   | u32             |
//! | metadata       | UTF-8 JSON      |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GaussianNoiseModel, GmmNoiseModel, LinearVarianceModel, PixelNoiseModel};
use crate::{Error, Result};

pub const NOISE_MAGIC: &[u8; 4] = b"DNNM";
pub const NOISE_VERSION: u16 = 1;

#[derive(Debug, Default, Serialize, Deserialize)]
struct Metadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    signal_range: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_coeffs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
}

pub fn serialize(model: &PixelNoiseModel) -> Vec<u8> {
    let (kind, coeffs, meta) = match model {
        PixelNoiseModel::Gaussian(g) => (0u8, vec![g.sigma], Metadata::default()),
        PixelNoiseModel::Gmm(g) => (
            1u8,
            g.coefficients(),
            Metadata {
                signal_range: Some(g.signal_range),
                n_components: Some(g.n_components),
                n_coeffs: Some(g.n_coeffs),
                scale: Some(g.scale),
            },
        ),
        PixelNoiseModel::LinearVariance(l) => (2u8, vec![l.a, l.b, l.sigma_min], Metadata::default()),
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(4 + 2 + 1 + 4 + 8 * coeffs.len() + 4 + meta.len());
    out.extend_from_slice(NOISE_MAGIC);
    out.extend_from_slice(&NOISE_VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(coeffs.len() as u32).to_le_bytes());
    for c in &coeffs {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "noise model stream truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<PixelNoiseModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != NOISE_MAGIC {
        return Err(Error::Format("not a noise model container (bad magic)".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != NOISE_VERSION {
        return Err(Error::Format(format!(
            "noise model container version {version} unsupported (expected {NOISE_VERSION})"
        )));
    }
    let kind = r.take(1)?[0];
    let n = r.u32()? as usize;
    let coeffs: Vec<f64> = r
        .take(8 * n)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let meta_len = r.u32()? as usize;
    let meta: Metadata =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Format(format!("noise model metadata: {e}")))?;
    let want = |expected: usize| -> Result<()> {
        if n != expected {
            return Err(Error::Format(format!("expected {expected} coefficients, found {n}")));
        }
        Ok(())
    };
    match kind {
        0 => {
            want(1)?;
            Ok(GaussianNoiseModel::new(coeffs[0])?.into())
        }
        1 => {
            let missing = || Error::Format("gmm metadata incomplete".into());
            let k = meta.n_components.ok_or_else(missing)?;
            let j = meta.n_coeffs.ok_or_else(missing)?;
            want(3 * k * j)?;
            if k == 0 || j == 0 || k > 16 {
                return Err(Error::Format(format!("invalid gmm shape {k} x {j}")));
            }
            let mut g = GmmNoiseModel::identity(k, j, meta.signal_range.ok_or_else(missing)?, meta.scale.ok_or_else(missing)?);
            g.set_coefficients(&coeffs);
            Ok(g.into())
        }
        2 => {
            want(3)?;
            Ok(LinearVarianceModel::new(coeffs[0], coeffs[1], coeffs[2])?.into())
        }
        other => Err(Error::Format(format!("unknown noise model kind tag {other}"))),
    }
}

pub fn write_noise_model(path: &Path, model: &PixelNoiseModel) -> Result<()> {
    std::fs::write(path, serialize(model)).map_err(|e| Error::io(path, e))
}

pub fn read_noise_model(path: &Path) -> Result<PixelNoiseModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize(&bytes)
}
