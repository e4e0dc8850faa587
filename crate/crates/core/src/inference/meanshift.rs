//! Flat-kernel mean shift over sample vectors: windowed MAP estimation and
//! clustering of diverse solutions.

use ndarray::s;
use serde::{Deserialize, Serialize};

use super::SampleSet;
use crate::{Error, Image, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanShiftConfig {
    pub window: usize,
    pub overlap: usize,
    pub initial_bandwidth: f64,
    pub decay: f64,
    pub final_bandwidth: f64,
    pub cluster_bandwidth: f64,
    pub cluster_max_iters: usize,
    pub cluster_seeds: usize,
    /// Iteration cap per bandwidth round of the MAP search.
    pub max_iters: usize,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        Self {
            window: 10,
            overlap: 3,
            initial_bandwidth: 200.0,
            decay: 0.9,
            final_bandwidth: 100.0,
            cluster_bandwidth: 800.0,
            cluster_max_iters: 20,
            cluster_seeds: 100,
            max_iters: 100,
        }
    }
}

impl MeanShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1), got {}", self.decay)));
        }
        if !(self.final_bandwidth > 0.0 && self.final_bandwidth < self.initial_bandwidth) {
            return Err(Error::Config("need 0 < final_bandwidth < initial_bandwidth".into()));
        }
        if self.window == 0 || self.overlap >= self.window {
            return Err(Error::Config("need window >= 1 and overlap < window".into()));
        }
        if !(self.cluster_bandwidth > 0.0) || self.cluster_seeds == 0 {
            return Err(Error::Config("cluster bandwidth and seed count must be positive".into()));
        }
        Ok(())
    }
}

/// Bandwidths of the MAP search: `initial * decay^n`, continuing until the
/// first value below `final_bandwidth` has been used.
pub fn bandwidth_schedule(cfg: &MeanShiftConfig) -> Vec<f64> {
    let mut out = Vec::new();
    let mut bw = cfg.initial_bandwidth;
    loop {
        out.push(bw);
        if bw < cfg.final_bandwidth || out.len() > 10_000 {
            break;
        }
        bw *= cfg.decay;
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean of the selected points, accumulated relative to the first one so
/// that identical points reproduce themselves exactly.
fn mean_of(points: &[f64], dim: usize, members: &[usize]) -> Vec<f64> {
    let first = &points[members[0] * dim..(members[0] + 1) * dim];
    let mut acc = vec![0.0; dim];
    for &i in &members[1..] {
        for (a, (&p, &f)) in acc.iter_mut().zip(points[i * dim..(i + 1) * dim].iter().zip(first)) {
            *a += p - f;
        }
    }
    let n = members.len() as f64;
    first.iter().zip(acc).map(|(&f, a)| f + a / n).collect()
}

/// Flat-kernel mean shift from `start` over `points` (row-major, `dim`
/// columns): repeatedly moves to the mean of the points within `bandwidth`
/// until the neighbourhood stops changing. Returns the mode and the number
/// of its neighbours.
pub fn mean_shift(points: &[f64], dim: usize, start: &[f64], bandwidth: f64, max_iters: usize) -> (Vec<f64>, usize) {
    let n = points.len() / dim;
    let r2 = bandwidth * bandwidth;
    let mut m = start.to_vec();
    let mut prev: Vec<usize> = Vec::new();
    for _ in 0..max_iters.max(1) {
        let members: Vec<usize> = (0..n)
            .filter(|&i| dist2(&points[i * dim..(i + 1) * dim], &m) <= r2)
            .collect();
        if members.is_empty() {
            // Nothing in reach: jump to the nearest point and continue from there.
            let nearest = (0..n)
                .min_by(|&a, &b| {
                    dist2(&points[a * dim..(a + 1) * dim], &m).total_cmp(&dist2(&points[b * dim..(b + 1) * dim], &m))
                })
                .expect("non-empty point set");
            m = points[nearest * dim..(nearest + 1) * dim].to_vec();
            prev.clear();
            continue;
        }
        if members == prev {
            return (m, members.len());
        }
        m = mean_of(points, dim, &members);
        prev = members;
    }
    let count = (0..n)
        .filter(|&i| dist2(&points[i * dim..(i + 1) * dim], &m) <= r2)
        .count();
    (m, count)
}

/// Mode estimate of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct TileMode {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
    /// Row-major `h * w` mode vector.
    pub mode: Vec<f64>,
    /// Bandwidth of the last round.
    pub bandwidth: f64,
}

fn tile_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    if n <= window {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + window < n).collect();
    v.push(n - window);
    v.dedup();
    v
}

fn crop_vectors(set: &SampleSet, y: usize, x: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(set.len() * h * w);
    for s in &set.samples {
        out.extend(s.slice(s![y..y + h, x..x + w]).iter().copied());
    }
    out
}

/// Runs the decreasing-bandwidth mean shift in every window.
pub fn tile_modes(set: &SampleSet, cfg: &MeanShiftConfig) -> Result<Vec<TileMode>> {
    cfg.validate()?;
    let (h, w) = set.dim();
    let (wh, ww) = (cfg.window.min(h), cfg.window.min(w));
    let stride = cfg.window - cfg.overlap;
    let schedule = bandwidth_schedule(cfg);
    let k = set.len();
    let mut out = Vec::new();
    for &y in &tile_starts(h, wh, stride) {
        for &x in &tile_starts(w, ww, stride) {
            let dim = wh * ww;
            let pts = crop_vectors(set, y, x, wh, ww);
            let all: Vec<usize> = (0..k).collect();
            let mut m = mean_of(&pts, dim, &all);
            for &bw in &schedule {
                m = mean_shift(&pts, dim, &m, bw, cfg.max_iters).0;
            }
            out.push(TileMode {
                y,
                x,
                h: wh,
                w: ww,
                mode: m,
                bandwidth: *schedule.last().expect("non-empty schedule"),
            });
        }
    }
    Ok(out)
}

fn ramp(i: usize, len: usize, overlap: usize) -> f64 {
    let o = overlap as f64 + 1.0;
    ((i + 1).min(len - i) as f64).min(o) / o
}

/// Approximate MAP image: per-window modes blended with linear feathering
/// across the window overlaps.
pub fn map_estimate(set: &SampleSet, cfg: &MeanShiftConfig) -> Result<Image> {
    if set.len() == 1 {
        log::warn!("MAP estimate from a single sample returns that sample");
        return Ok(set.samples[0].clone());
    }
    let (h, w) = set.dim();
    let tiles = tile_modes(set, cfg)?;
    // Blend as offsets from the first covering tile so equal modes stay exact.
    let mut first = Image::from_elem((h, w), f64::NAN);
    let mut num = Image::zeros((h, w));
    let mut den = Image::zeros((h, w));
    for t in &tiles {
        for i in 0..t.h {
            for j in 0..t.w {
                let (y, x) = (t.y + i, t.x + j);
                let v = t.mode[i * t.w + j];
                if first[[y, x]].is_nan() {
                    first[[y, x]] = v;
                }
                let wgt = ramp(i, t.h, cfg.overlap) * ramp(j, t.w, cfg.overlap);
                num[[y, x]] += wgt * (v - first[[y, x]]);
                den[[y, x]] += wgt;
            }
        }
    }
    Ok(Image::from_shape_fn((h, w), |(y, x)| first[[y, x]] + num[[y, x]] / den[[y, x]]))
}

/// Rectangle `[y, y + h) x [x, x + w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    /// Converged mode of the cluster, cropped to the region.
    pub center: Image,
    /// Number of seeds that converged to this center.
    pub members: usize,
}

/// Mean-shift clustering of region crops, seeded with the first
/// `cluster_seeds` samples. Centers closer than half the bandwidth are
/// merged; clusters are ordered by descending member count.
pub fn cluster_solutions(set: &SampleSet, region: Region, cfg: &MeanShiftConfig) -> Result<Vec<Cluster>> {
    cfg.validate()?;
    let (h, w) = set.dim();
    if region.h == 0 || region.w == 0 || region.y + region.h > h || region.x + region.w > w {
        return Err(Error::Input(format!("region {region:?} is outside the {h}x{w} image")));
    }
    let dim = region.h * region.w;
    let pts = crop_vectors(set, region.y, region.x, region.h, region.w);
    let seeds = cfg.cluster_seeds.min(set.len());
    if seeds < cfg.cluster_seeds {
        log::warn!("only {} samples available for {} cluster seeds", set.len(), cfg.cluster_seeds);
    }
    let merge2 = (cfg.cluster_bandwidth / 2.0).powi(2);
    let mut centers: Vec<(Vec<f64>, usize)> = Vec::new();
    for s in 0..seeds {
        let (c, _) = mean_shift(&pts, dim, &pts[s * dim..(s + 1) * dim], cfg.cluster_bandwidth, cfg.cluster_max_iters);
        match centers.iter_mut().find(|(e, _)| dist2(e, &c) < merge2) {
            Some((_, n)) => *n += 1,
            None => centers.push((c, 1)),
        }
    }
    centers.sort_by(|a, b| b.1.cmp(&a.1));
    Ok(centers
        .into_iter()
        .map(|(c, members)| Cluster {
            center: Image::from_shape_vec((region.h, region.w), c).expect("region size"),
            members,
        })
        .collect())
}
