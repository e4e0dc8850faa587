use ndarray::s;

use super::{eps_field, pad_to_multiple, sample_posterior, SampleSet};
use crate::nn::{Real, Tensor};
use crate::rng::rng_from_seed;
use crate::vae::VaeModel;
use crate::{Error, Image, Result};

const WINDOW_BATCH: usize = 4;

/// Posterior sampling of a large image window by window.
///
/// The image is cut into `tile x tile` blocks; each block is predicted from a
/// window extended by `margin` pixels of context (shifted inward at the
/// borders) and only the block itself is kept. Latent noise is drawn once
/// per sample over the whole latent grid, exactly as [`sample_posterior`]
/// draws it, so windows agree wherever their contexts are sufficient.
pub fn denoise_tiled<T: Real>(model: &VaeModel<T>, x: &Image, k: usize, tile: usize, margin: usize, seed: u64) -> Result<SampleSet> {
    if k == 0 {
        return Err(Error::Input("K must be at least 1".into()));
    }
    if tile == 0 || margin >= tile {
        return Err(Error::Input(format!("margin ({margin}) must be smaller than tile ({tile})")));
    }
    let f = model.arch().downsampling();
    if tile % f != 0 || (tile + 2 * margin) % f != 0 {
        return Err(Error::Dimension(format!(
            "tile ({tile}) and tile + 2*margin ({}) must be multiples of {f}",
            tile + 2 * margin
        )));
    }
    let (h, w) = x.dim();
    if h <= tile && w <= tile {
        return sample_posterior(model, x, k, seed);
    }
    let xp = pad_to_multiple(x, f);
    let (hp, wp) = xp.dim();
    let (win_h, win_w) = ((tile + 2 * margin).min(hp), (tile + 2 * margin).min(wp));
    let lead = margin / f * f;
    let place = |t: usize, win: usize, total: usize| t.saturating_sub(lead).min(total - win);

    // (window origin, block origin, block size) for every block.
    let mut blocks = Vec::new();
    for ty in (0..h).step_by(tile) {
        for tx in (0..w).step_by(tile) {
            let origin = (place(ty, win_h, hp), place(tx, win_w, wp));
            blocks.push((origin, (ty, tx), (tile.min(h - ty), tile.min(w - tx))));
        }
    }

    let latent = model.arch().latent_dims_per_position;
    let (lh, lw) = (win_h / f, win_w / f);
    let mut mus = Vec::with_capacity(blocks.len());
    let mut sds = Vec::with_capacity(blocks.len());
    for chunk in blocks.chunks(WINDOW_BATCH) {
        let crops: Vec<Image> = chunk
            .iter()
            .map(|&((wy, wx), _, _)| xp.slice(s![wy..wy + win_h, wx..wx + win_w]).to_owned())
            .collect();
        let views: Vec<_> = crops.iter().map(|c| c.view()).collect();
        let (mu, lv) = model.encode_tensor(&model.input_tensor(&views, true)?);
        for n in 0..chunk.len() {
            let mut m = Vec::with_capacity(latent * lh * lw);
            let mut sd = Vec::with_capacity(latent * lh * lw);
            for c in 0..latent {
                m.extend(mu.plane_of(c, n).iter().map(|v| v.as_f64()));
                sd.extend(lv.plane_of(c, n).iter().map(|v| (0.5 * v.as_f64()).exp()));
            }
            mus.push(m);
            sds.push(sd);
        }
    }

    let (glh, glw) = (hp / f, wp / f);
    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::with_capacity(k);
    for _ in 0..k {
        let eps = eps_field(&mut rng, latent * glh * glw);
        let mut out = Image::zeros((h, w));
        for (ci, chunk) in blocks.chunks(WINDOW_BATCH).enumerate() {
            let mut z = Tensor::<T>::zeros(latent, chunk.len(), lh, lw);
            for (n, &((wy, wx), _, _)) in chunk.iter().enumerate() {
                let bi = ci * WINDOW_BATCH + n;
                let (oy, ox) = (wy / f, wx / f);
                for c in 0..latent {
                    let dst = z.plane_of_mut(c, n);
                    for yy in 0..lh {
                        for xx in 0..lw {
                            let j = (c * lh + yy) * lw + xx;
                            let e = eps[(c * glh + oy + yy) * glw + ox + xx];
                            dst[yy * lw + xx] = T::from_f64_lossy(mus[bi][j] + sds[bi][j] * e);
                        }
                    }
                }
            }
            let dec = model.decode_tensor(&z);
            for (n, &((wy, wx), (ty, tx), (bh, bw))) in chunk.iter().enumerate() {
                let sig = model.output_signal(&dec, n);
                out.slice_mut(s![ty..ty + bh, tx..tx + bw])
                    .assign(&sig.slice(s![ty - wy..ty - wy + bh, tx - wx..tx - wx + bw]));
            }
        }
        samples.push(out);
    }
    SampleSet::new(samples, "posterior_tiled", seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::tests::toy_model;

    fn image(h: usize, w: usize) -> Image {
        Image::from_shape_fn((h, w), |(y, x)| 100.0 + 50.0 * ((y as f64 * 0.11).sin() * (x as f64 * 0.07).cos()))
    }

    #[test]
    fn small_image_matches_untiled() {
        let m = toy_model();
        let x = image(24, 20);
        assert_eq!(denoise_tiled(&m, &x, 3, 32, 8, 5).unwrap().samples, sample_posterior(&m, &x, 3, 5).unwrap().samples);
    }

    #[test]
    fn shape_and_seams_match_untiled_run() {
        let m = toy_model();
        let x = image(100, 76);
        let tiled = denoise_tiled(&m, &x, 2, 32, 16, 8).unwrap();
        assert_eq!(tiled.dim(), (100, 76));
        let full = sample_posterior(&m, &x, 2, 8).unwrap();
        let range = 100.0;
        for (a, b) in tiled.samples.iter().zip(&full.samples) {
            let d = (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            assert!(d < 0.02 * range, "{d}");
        }
    }

    #[test]
    fn argument_errors() {
        let m = toy_model();
        let x = image(64, 64);
        assert!(matches!(denoise_tiled(&m, &x, 1, 16, 16, 0), Err(Error::Input(_))));
        assert!(matches!(denoise_tiled(&m, &x, 1, 18, 4, 0), Err(Error::Dimension(_))));
        assert!(denoise_tiled(&m, &x, 0, 16, 4, 0).is_err());
    }
}
