//! PNG charts for training curves and study results.
//!
//! Text needs a TrueType font. One is looked up at `DIVNOISE_FONT` or in the
//! usual system locations; without one the charts are drawn unlabeled.

use std::path::Path;
use std::sync::OnceLock;

use plotters::prelude::*;
use plotters::style::FontStyle;

use crate::eval::{BetaRow, NoiseRow};
use crate::train::TrainReport;
use crate::{Error, Result};

const FONT_FAMILY: &str = "sans-serif";
const FONT_CANDIDATES: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/truetype/liberation/LiberationSans-Regular.ttf",
    "/Library/Fonts/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

/// Registers a font once per process; returns whether text can be drawn.
pub fn fonts_available() -> bool {
    static READY: OnceLock<bool> = OnceLock::new();
    *READY.get_or_init(|| {
        let env = std::env::var("DIVNOISE_FONT").ok();
        for path in env.iter().map(String::as_str).chain(FONT_CANDIDATES.iter().copied()) {
            if let Ok(bytes) = std::fs::read(path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font(FONT_FAMILY, FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        log::warn!("no usable font found; plots will have no text");
        false
    })
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("plotting failed: {e}"))
}

/// A named polyline.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series]) -> Result<((f64, f64), (f64, f64))> {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(Error::Input("nothing to plot".into()));
    }
    let pad = |lo: f64, hi: f64| {
        let d = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
        (lo - d, hi + d)
    };
    Ok((pad(x0, x1), pad(y0, y1)))
}

pub fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let text = fonts_available();
    let ((x0, x1), (y0, y1)) = bounds(series)?;
    let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(15);
    if text {
        builder.caption(title, (FONT_FAMILY, 22)).x_label_area_size(45).y_label_area_size(60);
    }
    let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(plot_err)?;
    if text {
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).label_style((FONT_FAMILY, 14)).draw().map_err(plot_err)?;
    } else {
        chart.configure_mesh().x_labels(0).y_labels(0).draw().map_err(plot_err)?;
    }
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        let drawn = chart.draw_series(LineSeries::new(pts.clone(), color.stroke_width(2))).map_err(plot_err)?;
        if text {
            drawn.label(s.name.clone()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
    }
    if text && series.len() > 1 {
        chart
            .configure_series_labels()
            .label_font((FONT_FAMILY, 14))
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

pub fn bar_plot(path: &Path, title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<()> {
    if bars.is_empty() || bars.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::Input("bar values must be finite and non-empty".into()));
    }
    let text = fonts_available();
    let top = bars.iter().map(|b| b.1).fold(0.0f64, f64::max);
    let bottom = bars.iter().map(|b| b.1).fold(0.0f64, f64::min);
    let span = (top - bottom).max(1e-12);
    let root = BitMapBackend::new(path, (700, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(15);
    if text {
        builder.caption(title, (FONT_FAMILY, 22)).x_label_area_size(40).y_label_area_size(60);
    }
    let n = bars.len();
    let mut chart = builder
        .build_cartesian_2d(-0.5..n as f64 - 0.5, bottom - 0.05 * span..top + 0.1 * span)
        .map_err(plot_err)?;
    let names: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    let fmt = move |x: &f64| {
        let i = x.round();
        if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < names.len() {
            names[i as usize].clone()
        } else {
            String::new()
        }
    };
    if text {
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n * 2 + 1)
            .x_label_formatter(&fmt)
            .y_desc(y_label)
            .label_style((FONT_FAMILY, 14))
            .draw()
            .map_err(plot_err)?;
    } else {
        chart.configure_mesh().x_labels(0).y_labels(0).draw().map_err(plot_err)?;
    }
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, v))| {
            let c = Palette99::pick(i).to_rgba();
            Rectangle::new([(i as f64 - 0.35, 0.0), (i as f64 + 0.35, *v)], c.filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Training and validation loss per epoch.
pub fn plot_training(path: &Path, report: &TrainReport) -> Result<()> {
    let pick = |f: fn(&crate::train::EpochRecord) -> f64| report.records.iter().map(|r| (r.epoch as f64, f(r))).collect();
    line_plot(
        path,
        "Training curves",
        "epoch",
        "loss per pixel",
        &[
            Series { name: "train".into(), points: pick(|r| r.train_total) },
            Series { name: "validation".into(), points: pick(|r| r.val_total) },
        ],
    )
}

/// MMSE PSNR and sample diversity against log10 beta.
pub fn plot_beta_sweep(path: &Path, rows: &[BetaRow]) -> Result<()> {
    let pts = |f: fn(&BetaRow) -> f64| rows.iter().map(|r| (r.beta.log10(), f(r))).collect();
    line_plot(
        path,
        "Beta sweep",
        "log10 beta",
        "dB",
        &[
            Series { name: "MMSE PSNR".into(), points: pts(|r| r.mmse_psnr) },
            Series { name: "std of sample PSNR".into(), points: pts(|r| r.diversity) },
        ],
    )
}

pub fn plot_diversity(path: &Path, rows: &[NoiseRow]) -> Result<()> {
    let bars: Vec<(String, f64)> = rows.iter().map(|r| (format!("sigma {}", r.sigma), r.diversity)).collect();
    bar_plot(path, "Sample diversity by noise level", "std of sample PSNR (dB)", &bars)
}

pub fn plot_psnr_vs_k(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let points = curve.iter().map(|&(k, p)| ((k as f64).log10(), p)).collect();
    line_plot(path, "MMSE PSNR vs samples", "log10 K", "PSNR (dB)", &[Series { name: "MMSE".into(), points }])
}
