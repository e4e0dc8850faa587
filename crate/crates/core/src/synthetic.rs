//! Synthetic clean datasets with known ground truth: stroke digits on a
//! 28x28 canvas and membrane-stained cell phantoms with instance labels.

use ndarray::Array2;
use rand::Rng;

use crate::rng::rng_from_seed;
use crate::Image;

type Stroke = &'static [(f64, f64)];

const ZERO: Stroke = &[
    (0.5, 0.15), (0.66, 0.2), (0.72, 0.35), (0.72, 0.65), (0.66, 0.8), (0.5, 0.85),
    (0.34, 0.8), (0.28, 0.65), (0.28, 0.35), (0.34, 0.2), (0.5, 0.15),
];
const ONE: Stroke = &[(0.36, 0.3), (0.52, 0.15), (0.52, 0.85)];
const TWO: Stroke = &[(0.3, 0.3), (0.4, 0.18), (0.6, 0.18), (0.7, 0.3), (0.65, 0.45), (0.3, 0.85), (0.72, 0.85)];
const THREE: Stroke = &[(0.3, 0.2), (0.66, 0.2), (0.46, 0.47), (0.68, 0.6), (0.62, 0.8), (0.3, 0.82)];
const FOUR: Stroke = &[(0.62, 0.85), (0.62, 0.15), (0.27, 0.6), (0.76, 0.6)];
const FIVE: Stroke = &[(0.7, 0.17), (0.36, 0.17), (0.33, 0.45), (0.6, 0.45), (0.71, 0.62), (0.61, 0.82), (0.3, 0.8)];
const SIX: Stroke = &[(0.66, 0.17), (0.42, 0.38), (0.32, 0.64), (0.44, 0.83), (0.62, 0.8), (0.67, 0.62), (0.52, 0.5), (0.34, 0.6)];
const SEVEN: Stroke = &[(0.28, 0.18), (0.72, 0.18), (0.46, 0.85)];
const EIGHT: Stroke = &[
    (0.5, 0.5), (0.34, 0.38), (0.36, 0.2), (0.5, 0.15), (0.64, 0.2), (0.66, 0.38), (0.5, 0.5),
    (0.31, 0.64), (0.36, 0.82), (0.5, 0.86), (0.64, 0.82), (0.69, 0.64), (0.5, 0.5),
];
const NINE: Stroke = &[
    (0.67, 0.38), (0.52, 0.5), (0.36, 0.44), (0.33, 0.28), (0.45, 0.16), (0.62, 0.18), (0.67, 0.38), (0.6, 0.86),
];

const GLYPHS: [Stroke; 10] = [ZERO, ONE, TWO, THREE, FOUR, FIVE, SIX, SEVEN, EIGHT, NINE];

/// Side length of the digit canvas.
pub const DIGIT_SIZE: usize = 28;

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one anti-aliased stroke digit (class `digit % 10`) with a random
/// affine jitter and stroke width; background 0, ink 255.
pub fn render_digit(digit: usize, rng: &mut impl Rng) -> Image {
    let n = DIGIT_SIZE as f64;
    let scale = rng.random_range(0.85..1.1) * n;
    let angle: f64 = rng.random_range(-0.25..0.25);
    let shear = rng.random_range(-0.2..0.2);
    let (tx, ty) = (rng.random_range(-0.08..0.08) * n, rng.random_range(-0.08..0.08) * n);
    let radius = rng.random_range(1.0..1.7);
    let (c, s) = (angle.cos(), angle.sin());
    let pts: Vec<(f64, f64)> = GLYPHS[digit % 10]
        .iter()
        .map(|&(x, y)| {
            let (x, y) = ((x - 0.5) + shear * (y - 0.5), y - 0.5);
            (n / 2.0 + tx + scale * (c * x - s * y), n / 2.0 + ty + scale * (s * x + c * y))
        })
        .collect();
    Image::from_shape_fn((DIGIT_SIZE, DIGIT_SIZE), |(y, x)| {
        let p = (x as f64 + 0.5, y as f64 + 0.5);
        let d = pts
            .windows(2)
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min);
        255.0 * (radius + 0.5 - d).clamp(0.0, 1.0)
    })
}

/// `n` digit images cycling through the ten classes.
pub fn digit_images(n: usize, seed: u64) -> Vec<Image> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|i| render_digit(i % 10, &mut rng)).collect()
}

/// Clean cell image and its ground-truth instance labels (0 on boundaries).
#[derive(Clone, Debug, PartialEq)]
pub struct CellPhantom {
    pub image: Image,
    pub labels: Array2<u32>,
}

/// Intensities used by [`cell_phantom`].
pub const CELL_INTENSITY: f64 = 190.0;
pub const MEMBRANE_INTENSITY: f64 = 40.0;

/// Voronoi tiling with bright cells and dark membranes of width
/// `membrane_width`, seeds on a jittered grid of the given spacing.
pub fn cell_phantom(h: usize, w: usize, spacing: f64, membrane_width: f64, seed: u64) -> CellPhantom {
    let mut rng = rng_from_seed(seed);
    let mut seeds = Vec::new();
    let rows = (h as f64 / spacing).ceil() as i64 + 1;
    let cols = (w as f64 / spacing).ceil() as i64 + 1;
    for r in -1..=rows {
        for c in -1..=cols {
            let jy = rng.random_range(-0.3..0.3) * spacing;
            let jx = rng.random_range(-0.3..0.3) * spacing;
            let brightness = CELL_INTENSITY + rng.random_range(-20.0..20.0);
            seeds.push(((r as f64 + 0.5) * spacing + jy, (c as f64 + 0.5) * spacing + jx, brightness));
        }
    }
    let mut image = Image::zeros((h, w));
    let mut owner = Array2::<usize>::zeros((h, w));
    let mut boundary = Array2::from_elem((h, w), false);
    let half = membrane_width / 2.0;
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut best = (f64::INFINITY, 0usize);
            let mut second = (f64::INFINITY, 0usize);
            for (i, &(sy, sx, _)) in seeds.iter().enumerate() {
                let d = (py - sy).powi(2) + (px - sx).powi(2);
                if d < best.0 {
                    second = best;
                    best = (d, i);
                } else if d < second.0 {
                    second = (d, i);
                }
            }
            let (a, b) = (seeds[best.1], seeds[second.1]);
            let sep = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            // Distance from the pixel to the bisector of its two nearest seeds.
            let bis = (second.0 - best.0) / (2.0 * sep);
            let t = (bis - (half - 0.5)).clamp(0.0, 1.0);
            image[[y, x]] = MEMBRANE_INTENSITY + t * (a.2 - MEMBRANE_INTENSITY);
            owner[[y, x]] = best.1;
            boundary[[y, x]] = bis < 0.5;
        }
    }
    let mut ids = std::collections::HashMap::new();
    let mut labels = Array2::<u32>::zeros((h, w));
    for ((y, x), &o) in owner.indexed_iter() {
        if !boundary[[y, x]] {
            let next = ids.len() as u32 + 1;
            labels[[y, x]] = *ids.entry(o).or_insert(next);
        }
    }
    CellPhantom { image, labels }
}

/// `n` independent phantoms of one size.
pub fn phantom_set(n: usize, size: usize, spacing: f64, seed: u64) -> Vec<CellPhantom> {
    (0..n)
        .map(|i| cell_phantom(size, size, spacing, 3.0, crate::rng::derive_indexed(seed, "phantom", i as u64)))
        .collect()
}

/// Four bright square cells separated by a dark cross of the given width.
pub fn grid_phantom(cell: usize, membrane: usize) -> Image {
    let n = 2 * cell + membrane;
    Image::from_shape_fn((n, n), |(y, x)| {
        let on_membrane = (cell..cell + membrane).contains(&y) || (cell..cell + membrane).contains(&x);
        if on_membrane {
            MEMBRANE_INTENSITY
        } else {
            CELL_INTENSITY
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_are_deterministic_and_inked() {
        let a = digit_images(20, 1);
        assert_eq!(a, digit_images(20, 1));
        for img in &a {
            assert_eq!(img.dim(), (28, 28));
            let ink = img.iter().filter(|&&v| v > 128.0).count();
            assert!((20..400).contains(&ink), "{ink}");
            assert!(img.iter().all(|&v| (0.0..=255.0).contains(&v)));
        }
    }

    #[test]
    fn phantom_labels_are_contiguous_and_cells_bright() {
        let p = cell_phantom(64, 64, 20.0, 3.0, 4);
        let n = *p.labels.iter().max().unwrap();
        assert!(n >= 9, "{n}");
        for id in 1..=n {
            assert!(p.labels.iter().any(|&l| l == id));
        }
        for (l, v) in p.labels.iter().zip(p.image.iter()) {
            if *l == 0 {
                assert!(*v < 120.0);
            }
        }
        assert!(p.image.iter().any(|&v| v > 160.0));
    }

    #[test]
    fn grid_phantom_layout() {
        let g = grid_phantom(20, 3);
        assert_eq!(g.dim(), (43, 43));
        assert_eq!(g[[21, 5]], MEMBRANE_INTENSITY);
        assert_eq!(g[[5, 5]], CELL_INTENSITY);
    }
}
