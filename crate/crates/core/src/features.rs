//! Multi-scale, locally aware patch features.
//!
//! Backbone stages arrive as separate `H x W x C` grids. They are resized to
//! the finest grid, concatenated channel-wise, and then smoothed with a
//! local box average so every patch vector sees its neighbors.

use std::path::Path;

use crate::io::read_f32;
use crate::{Error, Result};

/// A dense `height x width` grid of `channels`-dimensional vectors,
/// row-major with the channel axis innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidShape(format!(
                "grid dims must be nonzero, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::InvalidShape(format!(
                "{height}x{width}x{channels} grid needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(Grid {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Grid {
            height,
            width,
            channels,
            values: vec![value; height * width * channels],
        }
    }

    /// Number of grid locations.
    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    /// Vector at row `y`, column `x`.
    pub fn at(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Sampling position along one axis under corner-aligned bilinear
/// interpolation: `(lower index, upper index, fraction)`.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|i| {
            let src = if output > 1 {
                i as f64 * (input - 1) as f64 / (output - 1) as f64
            } else {
                0.0
            };
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Corner-aligned bilinear resize of every channel.
///
/// Values are interpolated in `f64` and rounded once, so outputs never leave
/// the `[min, max]` range of the input.
pub fn bilinear_resize(grid: &Grid, out_height: usize, out_width: usize) -> Grid {
    assert!(out_height > 0 && out_width > 0, "output grid must be nonempty");
    if (out_height, out_width) == (grid.height, grid.width) {
        return grid.clone();
    }
    let rows = axis_taps(grid.height, out_height);
    let cols = axis_taps(grid.width, out_width);
    let c = grid.channels;
    let mut values = Vec::with_capacity(out_height * out_width * c);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let (a, b) = (grid.at(y0, x0), grid.at(y0, x1));
            let (d, e) = (grid.at(y1, x0), grid.at(y1, x1));
            for ch in 0..c {
                let top = lerp(a[ch] as f64, b[ch] as f64, fx);
                let bottom = lerp(d[ch] as f64, e[ch] as f64, fx);
                values.push(lerp(top, bottom, fy) as f32);
            }
        }
    }
    Grid {
        height: out_height,
        width: out_width,
        channels: c,
        values,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatureMap {
    pub stage_id: u32,
    pub grid: Grid,
}

impl LayerFeatureMap {
    /// Reads a 3-D `H x W x C` feature tensor.
    pub fn load(path: impl AsRef<Path>, stage_id: u32) -> Result<Self> {
        let path = path.as_ref();
        let (dims, values) = read_f32(path)?;
        let &[height, width, channels] = dims.as_slice() else {
            return Err(Error::InvalidShape(format!(
                "{}: feature map must be 3-D, got dims {dims:?}",
                path.display()
            )));
        };
        let grid = Grid::new(height, width, channels, values)?;
        if !grid.is_finite() {
            return Err(Error::InvalidShape(format!(
                "{}: feature map contains non-finite values",
                path.display()
            )));
        }
        Ok(LayerFeatureMap { stage_id, grid })
    }
}

/// One image's patch features on the finest backbone grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureMap {
    pub image_id: String,
    pub grid: Grid,
}

impl PatchFeatureMap {
    pub fn dim(&self) -> usize {
        self.grid.channels
    }
}

/// Resizes every layer to the first layer's grid and concatenates channels
/// in input order.
pub fn align_and_concat(image_id: impl Into<String>, layers: &[LayerFeatureMap]) -> Result<PatchFeatureMap> {
    let first = layers
        .first()
        .ok_or_else(|| Error::InvalidShape("no feature layers given".into()))?;
    let (height, width) = (first.grid.height, first.grid.width);
    if let Some(bigger) = layers
        .iter()
        .find(|l| l.grid.height > height || l.grid.width > width)
    {
        return Err(Error::InvalidShape(format!(
            "layers must be ordered finest first; stage {} ({}x{}) is larger than stage {} ({height}x{width})",
            bigger.stage_id, bigger.grid.height, bigger.grid.width, first.stage_id
        )));
    }
    let aligned: Vec<Grid> = layers
        .iter()
        .map(|l| bilinear_resize(&l.grid, height, width))
        .collect();
    let dim: usize = aligned.iter().map(|g| g.channels).sum();
    let mut values = Vec::with_capacity(height * width * dim);
    for y in 0..height {
        for x in 0..width {
            for g in &aligned {
                values.extend_from_slice(g.at(y, x));
            }
        }
    }
    Ok(PatchFeatureMap {
        image_id: image_id.into(),
        grid: Grid {
            height,
            width,
            channels: dim,
            values,
        },
    })
}

/// Replaces each vector with the mean of the in-bounds vectors of the
/// `patch_size x patch_size` window centered on it.
pub fn local_average_pool(map: &PatchFeatureMap, patch_size: usize) -> Result<PatchFeatureMap> {
    if patch_size == 0 || patch_size.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "patch_size must be odd and positive, got {patch_size}"
        )));
    }
    if patch_size == 1 {
        return Ok(map.clone());
    }
    let g = &map.grid;
    let r = patch_size / 2;
    let mut acc = vec![0f64; g.channels];
    let mut values = Vec::with_capacity(g.values.len());
    for y in 0..g.height {
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(g.height - 1));
        for x in 0..g.width {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(g.width - 1));
            acc.iter_mut().for_each(|a| *a = 0.0);
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    for (a, &v) in acc.iter_mut().zip(g.at(yy, xx)) {
                        *a += v as f64;
                    }
                }
            }
            let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
            values.extend(acc.iter().map(|a| (a / count) as f32));
        }
    }
    Ok(PatchFeatureMap {
        image_id: map.image_id.clone(),
        grid: Grid {
            values,
            ..g.clone_shape()
        },
    })
}

impl Grid {
    fn clone_shape(&self) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            values: Vec::new(),
        }
    }
}

/// Loads every stage of one image and produces its pooled patch features.
pub fn patch_features_from_files<P: AsRef<Path>>(
    image_id: &str,
    feature_paths: &[P],
    patch_size: usize,
) -> Result<PatchFeatureMap> {
    let layers = feature_paths
        .iter()
        .enumerate()
        .map(|(i, p)| LayerFeatureMap::load(p, i as u32))
        .collect::<Result<Vec<_>>>()?;
    let concatenated = align_and_concat(image_id, &layers)?;
    local_average_pool(&concatenated, patch_size)
}
