use super::{RawScoreMap, ScoreMap};
use crate::features::{bilinear_resize, Grid};
use crate::{Error, Result};

/// Unnormalized Gaussian taps `exp(-t^2 / 2 sigma^2)` for
/// `t in -r..=r`, `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    (-radius..=radius)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// One separable pass along rows (`horizontal`) or columns; taps that fall
/// outside the image are dropped and the remaining weights renormalized.
fn pass(src: &[f64], height: usize, width: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let (pos, len) = if horizontal { (x as isize, width as isize) } else { (y as isize, height as isize) };
            let lo = (pos - radius).max(0);
            let hi = (pos + radius).min(len - 1);
            let (mut acc, mut norm) = (0.0, 0.0);
            for p in lo..=hi {
                let weight = kernel[(p - pos + radius) as usize];
                let idx = if horizontal { y * width + p as usize } else { p as usize * width + x };
                acc += weight * src[idx];
                norm += weight;
            }
            out[y * width + x] = acc / norm;
        }
    }
    out
}

/// Border-renormalized Gaussian blur of a `height x width` map.
pub fn gaussian_smooth(values: &[f32], height: usize, width: usize, sigma: f64) -> Result<Vec<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    if values.len() != height * width {
        return Err(Error::InvalidShape(format!(
            "{height}x{width} map needs {} values, got {}",
            height * width,
            values.len()
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let src: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let horizontal = pass(&src, height, width, &kernel, true);
    let both = pass(&horizontal, height, width, &kernel, false);
    Ok(both.into_iter().map(|v| v as f32).collect())
}

/// Bilinear upsampling to `(height, width)` followed by Gaussian smoothing.
/// The returned map's image score is the plain maximum patch score.
pub fn upsample_and_smooth(raw: &RawScoreMap, out: (usize, usize), sigma: f64) -> Result<ScoreMap> {
    let (height, width) = out;
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape("output size must be nonzero".into()));
    }
    let grid = Grid::new(raw.height, raw.width, 1, raw.scores.clone())?;
    let up = bilinear_resize(&grid, height, width);
    let pixels = gaussian_smooth(&up.values, height, width, sigma)?;
    Ok(ScoreMap {
        image_id: raw.image_id.clone(),
        height,
        width,
        pixels,
        image_score: raw.max_score() as f64,
        max_patch_score: raw.max_score(),
    })
}
