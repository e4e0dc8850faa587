//! Run configuration: one TOML file per experiment plus `DIVNOISE_*`
//! environment overrides and `--set section.key=value` flags.

use std::path::{Path, PathBuf};

use divnoise_core::data::{CorruptionSpec, StackFormat};
use divnoise_core::eval::{PsnrConfig, RangeMode};
use divnoise_core::inference::MeanShiftConfig;
use divnoise_core::noise::GmmFitConfig;
use divnoise_core::seg::SegPipelineConfig;
use divnoise_core::train::TrainConfig;
use divnoise_core::vae::ArchitectureConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENV_PREFIX: &str = "DIVNOISE_";
/// Environment variables with the prefix that are not config overrides.
const ENV_RESERVED: &[&str] = &["DIVNOISE_FONT", "DIVNOISE_LOG"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of all randomness; subsystems derive labeled child seeds.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    /// Synthetic corruption applied to `data.path`, which then holds clean
    /// images that double as ground truth.
    pub corruption: Option<CorruptionSpec>,
    pub noise_model: Option<NoiseModelSpec>,
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
    pub seg: SegConfig,
    pub study: StudyConfig,
    pub generate: GenerateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            corruption: None,
            noise_model: None,
            arch: ArchitectureConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            eval: EvalConfig::default(),
            seg: SegConfig::default(),
            study: StudyConfig::default(),
            generate: GenerateConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    /// Inferred from the path when absent.
    pub format: Option<StackFormat>,
    pub ground_truth: Option<PathBuf>,
    pub patch_size: usize,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { path: None, format: None, ground_truth: None, patch_size: 128, val_fraction: 0.15 }
    }
}

/// Exactly one way of obtaining the pixel noise model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModelSpec {
    Gaussian {
        sigma: f64,
    },
    /// Fit to a calibration stack of repeated acquisitions.
    Gmm {
        calibration: PathBuf,
        #[serde(default)]
        fit: GmmFitConfig,
    },
    /// Linear variance learned jointly with the network.
    Colearn {
        #[serde(default = "default_sigma_min")]
        sigma_min: f64,
    },
    /// Co-learn first, then refit a GMM on (noisy, MMSE) pairs.
    BootstrapSelf {
        #[serde(default = "default_sigma_min")]
        sigma_min: f64,
        #[serde(default = "default_bootstrap_samples")]
        samples: usize,
        #[serde(default)]
        fit: GmmFitConfig,
    },
    /// A previously written noise-model container.
    File {
        path: PathBuf,
    },
    /// No external model; the decoder predicts the variance (vanilla VAE).
    Learned,
}

fn default_sigma_min() -> f64 {
    1.0
}

fn default_bootstrap_samples() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub k: usize,
    pub tile: Option<usize>,
    pub margin: usize,
    pub map: bool,
    /// Write every sample, not only the estimates.
    pub write_samples: bool,
    pub meanshift: MeanShiftConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { k: 1000, tile: None, margin: 32, map: false, write_samples: true, meanshift: MeanShiftConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub range_mode: RangeMode,
    /// Sample counts of the PSNR-vs-K curve.
    pub ks: Vec<usize>,
    /// Prediction stack scored directly instead of running a model.
    pub prediction: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { range_mode: RangeMode::default(), ks: vec![1, 10, 100, 1000], prediction: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub mean_filter_radius: usize,
    pub connectivity: u8,
    /// `avg` or `none`.
    pub consensus: String,
    pub k: usize,
    pub ground_truth_labels: Option<PathBuf>,
}

impl Default for SegConfig {
    fn default() -> Self {
        let p = SegPipelineConfig::default();
        SegConfig { mean_filter_radius: p.mean_filter_radius, connectivity: p.connectivity, consensus: "avg".into(), k: 30, ground_truth_labels: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub betas: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Posterior samples per image in the studies.
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub k: usize,
    pub shape: Vec<usize>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { k: 16, shape: vec![128, 128] }
    }
}

impl EvalConfig {
    pub fn psnr(&self) -> PsnrConfig {
        PsnrConfig { range_mode: self.range_mode }
    }
}

impl SegConfig {
    pub fn pipeline(&self) -> SegPipelineConfig {
        SegPipelineConfig { mean_filter_radius: self.mean_filter_radius, connectivity: self.connectivity }
    }
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig { betas: vec![0.1, 1.0, 10.0], sigmas: vec![30.0, 50.0, 70.0], samples: 100 }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads the optional file, then applies environment and flag overrides.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>, sets: &[String]) -> Result<Self, CliError> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && !ENV_RESERVED.contains(&k.as_str()))
            .collect();
        env.sort();
        for (k, v) in env {
            let key: Vec<String> = k[ENV_PREFIX.len()..].split("__").map(str::to_ascii_lowercase).collect();
            set_path(&mut tree, &key, &v)?;
        }
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got {s:?}")))?;
            let key: Vec<String> = k.trim().split('.').map(str::to_string).collect();
            set_path(&mut tree, &key, v.trim())?;
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<(), CliError> {
        let mut paths: Vec<(&str, &Path)> = [
            ("data.path", &self.data.path),
            ("data.ground_truth", &self.data.ground_truth),
            ("eval.prediction", &self.eval.prediction),
            ("seg.ground_truth_labels", &self.seg.ground_truth_labels),
        ]
        .into_iter()
        .filter_map(|(w, p)| p.as_deref().map(|p| (w, p)))
        .collect();
        match &self.noise_model {
            Some(NoiseModelSpec::Gmm { calibration, .. }) => paths.push(("noise_model.calibration", calibration)),
            Some(NoiseModelSpec::File { path }) => paths.push(("noise_model.path", path)),
            _ => {}
        }
        match paths.iter().find(|(_, p)| !p.exists()) {
            Some((what, p)) => Err(CliError::Config(format!("{what}: {} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    /// Structural checks plus existence of every referenced input path.
    pub fn validate(&self) -> Result<(), CliError> {
        let core = |e: divnoise_core::Error| CliError::Config(e.to_string());
        self.arch.validate().map_err(core)?;
        self.train.validate().map_err(core)?;
        self.inference.meanshift.validate().map_err(core)?;
        self.seg.pipeline().validate().map_err(core)?;
        if let Some(c) = &self.corruption {
            c.validate().map_err(core)?;
        }
        if self.inference.k == 0 {
            return Err(CliError::Config("inference.k must be at least 1".into()));
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return Err(CliError::Config("data.val_fraction must lie in (0, 1)".into()));
        }
        if !matches!(self.seg.consensus.as_str(), "avg" | "none") {
            return Err(CliError::Config(format!("seg.consensus must be avg or none, got {:?}", self.seg.consensus)));
        }
        self.check_paths()?;
        match &self.noise_model {
            Some(NoiseModelSpec::Gaussian { sigma }) if !(*sigma > 0.0) => {
                return Err(CliError::Config(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            Some(NoiseModelSpec::Colearn { sigma_min } | NoiseModelSpec::BootstrapSelf { sigma_min, .. }) if !(*sigma_min > 0.0) => {
                return Err(CliError::Config("sigma_min must be > 0".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parses an override value as TOML, falling back to a plain string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Table, key: &[String], raw: &str) -> Result<(), CliError> {
    let (last, parents) = key.split_last().filter(|(l, _)| !l.is_empty()).ok_or_else(|| CliError::Config("empty override key".into()))?;
    let mut node = tree;
    for p in parents {
        let entry = node.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {} descends into non-table {p:?}", key.join("."))))?;
    }
    node.insert(last.clone(), parse_value(raw));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 3\n[train]\nbeta = 2.0\n[noise_model]\nkind = \"gaussian\"\nsigma = 25\n").unwrap();
        let env = vec![
            ("DIVNOISE_TRAIN__BETA".to_string(), "0.5".to_string()),
            ("DIVNOISE_FONT".to_string(), "/x.ttf".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let c = RunConfig::load(Some(&p), env, &["arch.depth=3".into(), "output_dir=out/x".into()]).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.beta, 0.5);
        assert_eq!(c.arch.depth, 3);
        assert_eq!(c.output_dir, PathBuf::from("out/x"));
        assert_eq!(c.noise_model, Some(NoiseModelSpec::Gaussian { sigma: 25.0 }));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = RunConfig::load(None, vec![], &["train.betta=1".into()]).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(RunConfig::from_toml("[noise_model]\nkind = \"gaussian\"\nsigma = 1\nextra = 2\n").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = RunConfig::default();
        c.noise_model = Some(NoiseModelSpec::Gaussian { sigma: 0.0 });
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.seg.consensus = "bic".into();
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn config_round_trips(seed in any::<u32>(), beta in 0.0f64..20.0, k in 1usize..5000, sigma in 0.1f64..300.0, depth in 1usize..5, map in any::<bool>(), spec in 0usize..4) {
            let mut c = RunConfig::default();
            c.seed = seed as u64;
            c.train.beta = beta;
            c.inference.k = k;
            c.inference.map = map;
            c.arch.depth = depth;
            c.noise_model = Some(match spec {
                0 => NoiseModelSpec::Gaussian { sigma },
                1 => NoiseModelSpec::Colearn { sigma_min: sigma },
                2 => NoiseModelSpec::Gmm { calibration: "calib.tif".into(), fit: GmmFitConfig::default() },
                _ => NoiseModelSpec::Learned,
            });
            c.corruption = Some(CorruptionSpec::gaussian(sigma, seed as u64));
            let back = RunConfig::from_toml(&c.to_toml()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
