//! Instance segmentation of membrane-stained images: local mean
//! thresholding, thinning of the space between masks, and connected
//! components; plus average-consensus fusion over many samples.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Image, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegPipelineConfig {
    pub mean_filter_radius: usize,
    /// Connectivity of instances; only 4 is supported since the skeleton is
    /// 8-connected.
    pub connectivity: u8,
}

impl Default for SegPipelineConfig {
    fn default() -> Self {
        SegPipelineConfig { mean_filter_radius: 15, connectivity: 4 }
    }
}

impl SegPipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mean_filter_radius < 1 {
            return Err(Error::Config("mean_filter_radius must be at least 1".into()));
        }
        if self.connectivity != 4 {
            return Err(Error::Config(format!("connectivity {} unsupported, use 4", self.connectivity)));
        }
        Ok(())
    }
}

/// Instance labels: 0 is boundary/background, instances are `1..=count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    labels: Array2<u32>,
    count: u32,
}

impl LabelMap {
    /// Renumbers arbitrary ids to `1..=n` in raster order of first appearance.
    pub fn from_raw(raw: &Array2<u32>) -> Self {
        let mut ids = HashMap::new();
        let labels = raw.mapv(|v| {
            if v == 0 {
                0
            } else {
                let next = ids.len() as u32 + 1;
                *ids.entry(v).or_insert(next)
            }
        });
        LabelMap { labels, count: ids.len() as u32 }
    }

    pub fn labels(&self) -> &Array2<u32> {
        &self.labels
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    pub binary: Array2<bool>,
    pub skeleton: Array2<bool>,
    pub labels: LabelMap,
    /// Set when the threshold produced no foreground at all.
    pub degenerate: bool,
}

/// Sum and pixel count of the disk of radius `r` around every pixel,
/// restricted to the image.
fn disk_sums(img: &Image, r: usize) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let mut prefix = Array2::<f64>::zeros((h, w + 1));
    for y in 0..h {
        for x in 0..w {
            prefix[[y, x + 1]] = prefix[[y, x]] + img[[y, x]];
        }
    }
    let ri = r as isize;
    let half: Vec<usize> = (-ri..=ri).map(|d| (((r * r) as isize - d * d) as f64).sqrt().floor() as usize).collect();
    let mut sums = Array2::<f64>::zeros((h, w));
    let mut counts = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut n) = (0.0, 0usize);
            for (i, d) in (-ri..=ri).enumerate() {
                let yy = y as isize + d;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let lo = x.saturating_sub(half[i]);
                let hi = (x + half[i] + 1).min(w);
                s += prefix[[yy as usize, hi]] - prefix[[yy as usize, lo]];
                n += hi - lo;
            }
            sums[[y, x]] = s;
            counts[[y, x]] = n as f64;
        }
    }
    (sums, counts)
}

/// Foreground where a pixel exceeds the mean of its disk neighbourhood.
/// Compared as `v * n > sum` so integer images threshold exactly.
pub fn local_mean_threshold(img: &Image, radius: usize) -> Array2<bool> {
    let (sums, counts) = disk_sums(img, radius);
    Array2::from_shape_fn(img.dim(), |p| img[p] * counts[p] > sums[p])
}

/// Zhang-Suen thinning; pixels outside the image count as 0 and pixels on
/// the image border are never removed, so structures reaching the edge stay
/// attached to it.
pub fn thin(mask: &Array2<bool>) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut m = mask.clone();
    let at = |m: &Array2<bool>, y: isize, x: isize| -> bool {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m[[y as usize, x as usize]]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let edge = y == 0 || x == 0 || y + 1 == h as isize || x + 1 == w as isize;
                    if edge || !m[[y as usize, x as usize]] {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&m, y - 1, x),
                        at(&m, y - 1, x + 1),
                        at(&m, y, x + 1),
                        at(&m, y + 1, x + 1),
                        at(&m, y + 1, x),
                        at(&m, y + 1, x - 1),
                        at(&m, y, x - 1),
                        at(&m, y - 1, x - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (n, e, s, wv) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        !(n && e && s) && !(e && s && wv)
                    } else {
                        !(n && e && wv) && !(n && s && wv)
                    };
                    if ok {
                        remove.push((y as usize, x as usize));
                    }
                }
            }
            changed |= !remove.is_empty();
            for q in remove {
                m[q] = false;
            }
        }
        if !changed {
            return m;
        }
    }
}

/// 4-connected components of the `true` pixels.
pub fn components4(mask: &Array2<bool>) -> LabelMap {
    let (h, w) = mask.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut next = 0u32;
    let mut stack = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask[[y0, x0]] || labels[[y0, x0]] != 0 {
                continue;
            }
            next += 1;
            labels[[y0, x0]] = next;
            stack.push((y0, x0));
            while let Some((y, x)) = stack.pop() {
                let mut visit = |yy: usize, xx: usize| {
                    if mask[[yy, xx]] && labels[[yy, xx]] == 0 {
                        labels[[yy, xx]] = next;
                        stack.push((yy, xx));
                    }
                };
                if y > 0 {
                    visit(y - 1, x);
                }
                if y + 1 < h {
                    visit(y + 1, x);
                }
                if x > 0 {
                    visit(y, x - 1);
                }
                if x + 1 < w {
                    visit(y, x + 1);
                }
            }
        }
    }
    LabelMap { labels, count: next }
}

fn check_size(img: &Image, cfg: &SegPipelineConfig) -> Result<()> {
    cfg.validate()?;
    let d = 2 * cfg.mean_filter_radius + 1;
    let (h, w) = img.dim();
    if h < d || w < d {
        return Err(Error::Input(format!("image {h}x{w} is smaller than the {d}-pixel mean filter")));
    }
    Ok(())
}

fn threshold_and_thin(img: &Image, cfg: &SegPipelineConfig) -> (Array2<bool>, Array2<bool>, bool) {
    let binary = local_mean_threshold(img, cfg.mean_filter_radius);
    let degenerate = !binary.iter().any(|&b| b);
    let skeleton = if degenerate {
        Array2::from_elem(img.dim(), false)
    } else {
        thin(&binary.mapv(|b| !b))
    };
    (binary, skeleton, degenerate)
}

pub fn segment(img: &Image, cfg: &SegPipelineConfig) -> Result<Segmentation> {
    check_size(img, cfg)?;
    let (binary, skeleton, degenerate) = threshold_and_thin(img, cfg);
    let labels = if degenerate {
        LabelMap { labels: Array2::zeros(img.dim()), count: 0 }
    } else {
        components4(&skeleton.mapv(|s| !s))
    };
    Ok(Segmentation { binary, skeleton, labels, degenerate })
}

/// Averages the per-sample non-skeleton maps and segments the average.
pub fn consensus_avg(samples: &[Image], cfg: &SegPipelineConfig) -> Result<LabelMap> {
    if samples.len() < 2 {
        return Err(Error::Input(format!("consensus needs at least 2 samples, got {}", samples.len())));
    }
    let dim = samples[0].dim();
    let mut avg = Image::zeros(dim);
    for s in samples {
        if s.dim() != dim {
            return Err(Error::Dimension(format!("sample shape {:?} differs from {:?}", s.dim(), dim)));
        }
        check_size(s, cfg)?;
        let (_, skeleton, _) = threshold_and_thin(s, cfg);
        avg.zip_mut_with(&skeleton, |a, &k| *a += if k { 0.0 } else { 1.0 });
    }
    avg /= samples.len() as f64;
    Ok(segment(&avg, cfg)?.labels)
}

/// Mean over ground-truth instances of the IoU of its match, with pairs
/// matched one-to-one greedily by descending IoU.
pub fn seg_score(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::Dimension(format!("prediction {:?} vs ground truth {:?}", pred.dim(), gt.dim())));
    }
    if gt.count == 0 {
        return Ok(if pred.count == 0 { 1.0 } else { 0.0 });
    }
    let mut area_p = vec![0usize; pred.count as usize + 1];
    let mut area_g = vec![0usize; gt.count as usize + 1];
    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &g) in pred.labels.iter().zip(gt.labels.iter()) {
        area_p[p as usize] += 1;
        area_g[g as usize] += 1;
        if p != 0 && g != 0 {
            *inter.entry((g, p)).or_default() += 1;
        }
    }
    let mut pairs: Vec<(f64, u32, u32)> = inter
        .into_iter()
        .map(|((g, p), i)| (i as f64 / (area_g[g as usize] + area_p[p as usize] - i) as f64, g, p))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_g = vec![false; gt.count as usize + 1];
    let mut used_p = vec![false; pred.count as usize + 1];
    let mut total = 0.0;
    for (iou, g, p) in pairs {
        if !used_g[g as usize] && !used_p[p as usize] {
            used_g[g as usize] = true;
            used_p[p as usize] = true;
            total += iou;
        }
    }
    Ok(total / gt.count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{cell_phantom, grid_phantom};
    use proptest::prelude::*;

    fn cfg() -> SegPipelineConfig {
        SegPipelineConfig::default()
    }

    #[test]
    fn constant_image_is_degenerate() {
        let s = segment(&Image::from_elem((40, 40), 7.0), &cfg()).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.labels.count(), 0);
        assert!(s.labels.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn grid_gives_four_instances() {
        let s = segment(&grid_phantom(20, 3), &cfg()).unwrap();
        assert!(!s.degenerate);
        assert_eq!(s.labels.count(), 4);
    }

    #[test]
    fn too_small_is_an_error() {
        assert!(matches!(segment(&Image::zeros((30, 64)), &cfg()), Err(Error::Input(_))));
    }

    #[test]
    fn offset_invariance() {
        let p = cell_phantom(48, 48, 18.0, 3.0, 2).image.mapv(f64::round);
        let a = segment(&p, &cfg()).unwrap();
        let b = segment(&(&p + 1000.0), &cfg()).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn instances_avoid_skeleton() {
        let p = cell_phantom(64, 64, 20.0, 3.0, 9).image;
        let s = segment(&p, &cfg()).unwrap();
        for (l, k) in s.labels.labels().iter().zip(s.skeleton.iter()) {
            assert!(!(*k && *l != 0));
        }
        assert!(s.labels.count() >= 6);
    }

    #[test]
    fn consensus_of_copies_equals_single() {
        let p = cell_phantom(64, 64, 20.0, 3.0, 3).image;
        let single = segment(&p, &cfg()).unwrap().labels;
        let fused = consensus_avg(&vec![p.clone(); 5], &cfg()).unwrap();
        assert_eq!(single, fused);
        assert!(consensus_avg(&[p], &cfg()).is_err());
    }

    #[test]
    fn consensus_follows_the_majority_split() {
        // Two cells side by side; the dividing membrane is erased in a
        // minority of the samples.
        let split = Image::from_shape_fn((40, 64), |(_, x)| if (31..34).contains(&x) { 40.0 } else { 190.0 });
        let merged = Image::from_elem((40, 64), 190.0);
        let frame = |img: &Image| {
            let mut f = img.clone();
            for ((y, x), v) in f.indexed_iter_mut() {
                if y < 3 || y >= 37 || x < 3 || x >= 61 {
                    *v = 40.0;
                }
            }
            f
        };
        let (split, merged) = (frame(&split), frame(&merged));
        let mut samples = vec![split.clone(); 18];
        samples.extend(vec![merged.clone(); 12]);
        let single_merged = segment(&merged, &cfg()).unwrap().labels;
        let fused = consensus_avg(&samples, &cfg()).unwrap();
        assert_eq!(single_merged.count(), 1);
        assert_eq!(fused.count(), 2);
    }

    #[test]
    fn score_examples() {
        let gt = LabelMap::from_raw(&Array2::from_shape_fn((4, 4), |(y, _)| if y < 2 { 1 } else { 2 }));
        assert_eq!(seg_score(&gt, &gt).unwrap(), 1.0);
        let empty = LabelMap::from_raw(&Array2::zeros((4, 4)));
        assert_eq!(seg_score(&empty, &gt).unwrap(), 0.0);
        let half = LabelMap::from_raw(&Array2::from_shape_fn((4, 4), |(y, _)| if y < 2 { 5 } else { 0 }));
        assert_eq!(seg_score(&half, &gt).unwrap(), 0.5);
        assert!(seg_score(&LabelMap::from_raw(&Array2::zeros((3, 4))), &gt).is_err());
    }

    proptest! {
        #[test]
        fn score_is_relabeling_invariant(raw in proptest::collection::vec(0u32..5, 36), pr in proptest::collection::vec(0u32..5, 36), shift in 1u32..50) {
            let g = LabelMap::from_raw(&Array2::from_shape_vec((6, 6), raw.clone()).unwrap());
            let p = LabelMap::from_raw(&Array2::from_shape_vec((6, 6), pr.clone()).unwrap());
            let relabeled = LabelMap::from_raw(&Array2::from_shape_vec((6, 6), pr.iter().map(|&v| if v == 0 { 0 } else { v * 1000 + shift }).collect()).unwrap());
            let a = seg_score(&p, &g).unwrap();
            let b = seg_score(&relabeled, &g).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn thinning_is_idempotent(bits in proptest::collection::vec(any::<bool>(), 100)) {
            let m = Array2::from_shape_vec((10, 10), bits).unwrap();
            let t = thin(&m);
            prop_assert_eq!(thin(&t), t.clone());
            prop_assert!(t.iter().zip(m.iter()).all(|(a, b)| !*a || *b));
        }
    }
}
