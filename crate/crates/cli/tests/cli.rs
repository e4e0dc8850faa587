use std::path::{Path, PathBuf};
use std::process::Command;

use divnoise_core::io::{read_any, write_tiff_stack};
use divnoise_core::synthetic::phantom_set;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_divnoise"));
    c.env_remove("DIVNOISE_LOG");
    c
}

fn run(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    (out.status.code().unwrap_or(-1), text)
}

/// A tiny clean dataset plus a config that corrupts it and trains a minute model.
fn workspace(output: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<_> = phantom_set(6, 32, 10.0, 1).into_iter().map(|p| p.image).collect();
    write_tiff_stack(&dir.path().join("clean.tif"), &images).unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"seed = 5
output_dir = "{output}"

[data]
path = "clean.tif"
patch_size = 16
val_fraction = 0.3

[corruption]
gaussian_sigma = 20.0
rng_seed = 9

[noise_model]
kind = "gaussian"
sigma = 20.0

[arch]
base_features = 4
latent_dims_per_position = 4

[train]
batch_size = 4
max_epochs = 2

[inference]
k = 4

[eval]
ks = [1, 4]

[seg]
k = 2
mean_filter_radius = 5
"#
        ),
    )
    .unwrap();
    (dir, cfg)
}

#[test]
fn missing_dataset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = run(dir.path(), &["--data", "nope.tif", "--set", "noise_model.kind=\"learned\"", "--set", "arch.mode=\"vanilla\"", "train"]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("does not exist"), "{text}");
}

#[test]
fn unknown_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = run(dir.path(), &["--set", "train.betta=2", "train"]);
    assert_eq!(code, 2, "{text}");
}

#[test]
fn fit_noise_writes_gaussian_container() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = run(dir.path(), &["--set", "noise_model.kind=\"gaussian\"", "--set", "noise_model.sigma=12", "fit-noise", "--out", "nm.dnnm"]);
    assert_eq!(code, 0, "{text}");
    let nm = divnoise_core::noise::read_noise_model(&dir.path().join("nm.dnnm")).unwrap();
    assert_eq!(nm.kind_name(), "gaussian");
}

#[test]
fn locked_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    std::fs::write(dir.path().join("out/.divnoise.lock"), "1").unwrap();
    let (code, text) = run(dir.path(), &["--output-dir", "out", "fit-noise"]);
    assert_eq!(code, 3, "{text}");
    assert!(text.contains("locked"), "{text}");
}

#[test]
fn bad_tiling_is_a_config_error() {
    let (dir, cfg) = workspace("run");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(run(dir.path(), &["--config", cfg, "train"]).0, 0);
    let (code, text) = run(dir.path(), &["--config", cfg, "denoise", "--tile", "10", "--margin", "3"]);
    assert_eq!(code, 2, "{text}");
}

#[test]
fn end_to_end_pipeline() {
    let (dir, cfg) = workspace("run");
    let d = dir.path();
    let cfg = cfg.to_str().unwrap();
    let (code, text) = run(d, &["--config", cfg, "train"]);
    assert_eq!(code, 0, "{text}");
    for f in ["best.dnck", "config.toml"] {
        assert!(d.join("run").join(f).exists(), "missing {f}");
    }

    let (code, text) = run(d, &["--config", cfg, "denoise", "--map"]);
    assert_eq!(code, 0, "{text}");
    let mmse = read_any(&d.join("run/denoise/mmse.tif")).unwrap();
    assert_eq!(mmse.len(), 6);
    assert_eq!(mmse[0].dim(), (32, 32));
    assert_eq!(read_any(&d.join("run/denoise/samples_0000.tif")).unwrap().len(), 4);
    assert!(d.join("run/denoise/map.tif").exists());

    let (code, text) = run(d, &["--config", cfg, "evaluate"]);
    assert_eq!(code, 0, "{text}");
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/evaluate/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["k"], 4);
    assert!(summary["psnr"].as_f64().unwrap().is_finite());

    let (code, text) = run(d, &["--config", cfg, "evaluate", "--prediction", "run/denoise/mmse.tif"]);
    assert_eq!(code, 0, "{text}");

    let (code, text) = run(d, &["--config", cfg, "generate", "--k", "3", "--shape", "16", "24"]);
    assert_eq!(code, 0, "{text}");
    let gen = read_any(&d.join("run/generate/samples.tif")).unwrap();
    assert_eq!((gen.len(), gen[0].dim()), (3, (16, 24)));

    let (code, text) = run(d, &["--config", cfg, "segment"]);
    assert_eq!(code, 0, "{text}");
    assert!(d.join("run/segment/labels_0005.tif").exists());
    assert!(!d.join("run/.divnoise.lock").exists());
}

#[test]
fn same_seed_gives_identical_outputs() {
    let (dir, cfg) = workspace("a");
    let d = dir.path();
    let cfg = cfg.to_str().unwrap();
    for out in ["a", "b"] {
        for cmd in ["train", "denoise"] {
            let (code, text) = run(d, &["--config", cfg, "--output-dir", out, cmd]);
            assert_eq!(code, 0, "{text}");
        }
    }
    let a = std::fs::read(d.join("a/denoise/mmse.tif")).unwrap();
    let b = std::fs::read(d.join("b/denoise/mmse.tif")).unwrap();
    assert_eq!(a, b);
    let (code, _) = run(d, &["--config", cfg, "--output-dir", "c", "--seed", "6", "train"]);
    assert_eq!(code, 0);
    run(d, &["--config", cfg, "--output-dir", "c", "--seed", "6", "denoise"]);
    assert_ne!(a, std::fs::read(d.join("c/denoise/mmse.tif")).unwrap());
}

fn calibration(dir: &Path, frames: usize) {
    use divnoise_core::Image;
    let imgs: Vec<Image> = (0..frames)
        .map(|f| Image::from_shape_fn((16, 16), |(y, x)| 50.0 + 10.0 * x as f64 + ((y * 7 + x * 3 + f * 11) % 9) as f64))
        .collect();
    write_tiff_stack(&dir.join("calib.tif"), &imgs).unwrap();
}

#[test]
fn gmm_fit_noise_reports_likelihood() {
    let dir = tempfile::tempdir().unwrap();
    calibration(dir.path(), 4);
    let base = ["--set", "noise_model.kind=\"gmm\"", "--set", "noise_model.calibration=\"calib.tif\"", "--set", "noise_model.fit.iterations=50"];
    let (code, text) = run(dir.path(), &[&base[..], &["fit-noise", "--out", "g.dnnm"]].concat());
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("log-likelihood"), "{text}");
    assert_eq!(divnoise_core::noise::read_noise_model(&dir.path().join("g.dnnm")).unwrap().kind_name(), "gmm");

    calibration(dir.path(), 1);
    let (code, text) = run(dir.path(), &[&base[..], &["fit-noise"]].concat());
    assert_eq!(code, 2, "{text}");
}

#[test]
fn vanilla_training_without_noise_model() {
    let (dir, cfg) = workspace("v");
    std::fs::write(&cfg, std::fs::read_to_string(&cfg).unwrap().replace("kind = \"gaussian\"\nsigma = 20.0", "kind = \"learned\"")).unwrap();
    let cfg = cfg.to_str().unwrap();
    let (code, text) = run(dir.path(), &["--config", cfg, "--set", "arch.mode=\"vanilla\"", "train"]);
    assert_eq!(code, 0, "{text}");
    let (code, text) = run(dir.path(), &["--config", cfg, "denoise", "--K", "2"]);
    assert_eq!(code, 0, "{text}");
}
