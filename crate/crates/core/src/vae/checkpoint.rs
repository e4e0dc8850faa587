//! Binary model checkpoint.
//!
//! Layout (little-endian):
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | `b"DNCK"`                              |
//! | version          | u16                                    |
//! | arch_len, arch   | u32, UTF-8 JSON `ArchitectureConfig`   |
//! | data mean, std   | f64, f64                               |
//! | likelihood       | u8 (0 noise model, 1 co-learned, 2 learned), f64 sigma_min |
//! | n_blocks         | u32                                    |
//! | per block        | u32 name_len, name, u64 count, f32 x count |
//! | has_noise_model  | u8, then u32 len + embedded `DNNM` container |

use std::path::Path;

use super::{ArchitectureConfig, Likelihood, VaeModel};
use crate::data::DataStats;
use crate::nn::Real;
use crate::noise;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DNCK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<T: Real>(model: &VaeModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let arch = serde_json::to_vec(model.arch()).expect("arch serializes");
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(&arch);
    let stats = model.data_stats();
    out.extend_from_slice(&stats.mean.to_le_bytes());
    out.extend_from_slice(&stats.std.to_le_bytes());
    let (tag, sigma_min) = match model.likelihood() {
        Likelihood::Noise { .. } => (0u8, 0.0),
        Likelihood::Colearned { sigma_min } => (1u8, *sigma_min),
        Likelihood::Learned => (2u8, 0.0),
    };
    out.push(tag);
    out.extend_from_slice(&sigma_min.to_le_bytes());
    let blocks = model.param_blocks();
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, data) in blocks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    match model.noise_model() {
        Some(nm) => {
            let bytes = noise::serialize(nm);
            out.push(1);
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() - self.pos {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<T: Real>(bytes: &[u8]) -> Result<VaeModel<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = r.u32()? as usize;
    let arch: ArchitectureConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
    let stats = DataStats {
        mean: r.f64()?,
        std: r.f64()?,
    };
    let tag = r.take(1)?[0];
    let sigma_min = r.f64()?;
    let n_blocks = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks.min(1024));
    for _ in 0..n_blocks {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("block name is not UTF-8".into()))?;
        let count = r.u64()? as usize;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("block too large".into()))?)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        blocks.push((name, data));
    }
    let nm = match r.take(1)?[0] {
        0 => None,
        1 => {
            let len = r.u32()? as usize;
            Some(noise::deserialize(r.take(len)?)?)
        }
        other => return Err(Error::Format(format!("invalid noise-model flag {other}"))),
    };
    let likelihood = match (tag, nm) {
        (0, Some(model)) => Likelihood::Noise { model },
        (1, None) => Likelihood::Colearned { sigma_min },
        (2, None) => Likelihood::Learned,
        (t, nm) => {
            return Err(Error::Format(format!(
                "likelihood tag {t} inconsistent with embedded noise model (present: {})",
                nm.is_some()
            )))
        }
    };
    let mut model = VaeModel::new(arch, stats, likelihood, 0)?;
    model.load_blocks(&blocks)?;
    Ok(model)
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &VaeModel<T>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, write_checkpoint(model)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<VaeModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::GaussianNoiseModel;
    use crate::vae::Mode;

    fn model(mode: Mode) -> VaeModel<f32> {
        let arch = ArchitectureConfig {
            depth: 2,
            base_features: 4,
            latent_dims_per_position: 3,
            mode,
            ..Default::default()
        };
        let lik = match mode {
            Mode::Divnoising => Likelihood::Noise {
                model: GaussianNoiseModel::new(3.0).unwrap().into(),
            },
            Mode::UnsupervisedDivnoising => Likelihood::Colearned { sigma_min: 0.5 },
            Mode::Vanilla => Likelihood::Learned,
        };
        VaeModel::new(arch, DataStats { mean: 1.5, std: 2.0 }, lik, 11).unwrap()
    }

    #[test]
    fn round_trip_all_modes() {
        for mode in [Mode::Divnoising, Mode::Vanilla, Mode::UnsupervisedDivnoising] {
            let m = model(mode);
            let back: VaeModel<f32> = read_checkpoint(&write_checkpoint(&m)).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn truncation_and_magic_are_rejected() {
        let bytes = write_checkpoint(&model(Mode::Divnoising));
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_checkpoint::<f32>(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint::<f32>(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dnck");
        let m = model(Mode::UnsupervisedDivnoising);
        save_checkpoint(&p, &m).unwrap();
        assert_eq!(load_checkpoint::<f32>(&p).unwrap(), m);
    }
}
