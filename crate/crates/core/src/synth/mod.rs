//! Seeded generator of contaminated feature datasets.
//!
//! Every image shares a small set of contextual clusters laid out as
//! vertical stripes, shifted horizontally per image. Normal locations draw a
//! low-rank Gaussian around their cluster center. An anomalous image carries
//! one rectangular defect of one of a few defect types. A defect replaces
//! the cell's appearance: each type sits a small offset away from one of the
//! cluster centers (wherever the defect lands), each image draws its defect
//! center from the type's low-rank spread, and cells inside the
//! defect add only a little texture noise. Defects are therefore near-duplicates within an image,
//! similar across images of the same type, and far from normal features.

pub mod oracle;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::io::{write_mask, write_tensor, DatasetManifest, ImageRecord, Label, Mask, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_images: usize,
    /// Feature grid as `(height, width)`.
    pub grid: (usize, usize),
    pub dim: usize,
    pub num_location_clusters: usize,
    /// Per-dimension spread of normal vectors around their cluster center.
    pub normal_sigma: f64,
    /// Rank of the normal variation; 0 spreads it over every dimension.
    pub normal_rank: usize,
    /// Spread of per-image defect centers around their type's center.
    pub anomaly_sigma: f64,
    /// Per-dimension noise of individual cells inside a defect.
    pub defect_noise: f64,
    /// Rank of the defect spread; 0 spreads it over every dimension.
    pub defect_rank: usize,
    /// Per-dimension scale of the offset from a cluster center to a defect
    /// type's center. Type `t` is anchored at cluster `t mod clusters`.
    pub defect_shift: f64,
    /// Distinct defect types, assigned to anomalous images round-robin.
    pub num_defect_types: usize,
    pub anomaly_image_fraction: f64,
    /// Fraction of an anomalous image covered by its defect.
    pub anomaly_area_fraction: f64,
    /// Largest per-image stripe shift, in grid cells.
    pub jitter: usize,
    /// Pixels per grid cell in the emitted masks.
    pub cell_pixels: usize,
    pub category: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_images: 100,
            grid: (28, 28),
            dim: 64,
            num_location_clusters: 4,
            normal_sigma: 0.1,
            normal_rank: 2,
            anomaly_sigma: 0.02,
            defect_noise: 0.002,
            defect_rank: 2,
            defect_shift: 0.05,
            num_defect_types: 4,
            anomaly_image_fraction: 0.23,
            anomaly_area_fraction: 0.03,
            jitter: 3,
            cell_pixels: 8,
            category: "synthetic".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_images == 0
            || self.grid.0 == 0
            || self.grid.1 == 0
            || self.dim == 0
            || self.cell_pixels == 0
            || self.num_defect_types == 0
        {
            return bad("image count, grid, dim, cell size and defect types must be positive".into());
        }
        if self.num_location_clusters == 0 || self.num_location_clusters > self.grid.1 {
            return bad(format!(
                "num_location_clusters must be in 1..={}, got {}",
                self.grid.1, self.num_location_clusters
            ));
        }
        if !(self.normal_sigma >= 0.0 && self.anomaly_sigma >= 0.0 && self.defect_noise >= 0.0 && self.defect_shift > 0.0) {
            return bad("sigmas must be nonnegative and defect_shift positive".into());
        }
        for (name, f) in [
            ("anomaly_image_fraction", self.anomaly_image_fraction),
            ("anomaly_area_fraction", self.anomaly_area_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {f}"));
            }
        }
        Ok(())
    }

    pub fn num_anomalous(&self) -> usize {
        ((self.anomaly_image_fraction * self.num_images as f64).round() as usize).clamp(1, self.num_images)
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.grid.0 * self.cell_pixels, self.grid.1 * self.cell_pixels)
    }
}

/// Defect rectangle in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Blob {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

impl Blob {
    fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.height).contains(&y) && (self.left..self.left + self.width).contains(&x)
    }
}

fn draw_blob(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Blob {
    let (gh, gw) = cfg.grid;
    let target = (cfg.anomaly_area_fraction * (gh * gw) as f64).max(1.0);
    let aspect: f64 = rng.random_range(0.5..2.0);
    let height = ((target * aspect).sqrt().round() as usize).clamp(1, gh);
    let width = ((target / height as f64).round() as usize).clamp(1, gw);
    Blob {
        top: rng.random_range(0..=gh - height),
        left: rng.random_range(0..=gw - width),
        height,
        width,
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn draw_basis(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> Vec<Vec<f64>> {
    (0..rank).map(|_| gaussian_vector(rng, dim, 1.0 / (rank as f64).sqrt())).collect()
}

/// `sigma` times a standard draw from span(basis), or isotropic when the
/// basis is empty.
fn fill_deviation(out: &mut [f64], basis: &[Vec<f64>], sigma: f64, rng: &mut ChaCha8Rng) {
    if basis.is_empty() {
        for d in out.iter_mut() {
            *d = sigma * Distribution::<f64>::sample(&StandardNormal, rng);
        }
        return;
    }
    out.fill(0.0);
    for b in basis {
        let z = sigma * Distribution::<f64>::sample(&StandardNormal, rng);
        for (d, &bc) in out.iter_mut().zip(b) {
            *d += z * bc;
        }
    }
}

/// Writes `features/`, `masks/`, `manifest.json` and `synth.json` under
/// `out_dir` and returns the manifest. Identical configs give identical
/// bytes.
pub fn generate_bad_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    for sub in ["features", "masks"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (gh, gw) = cfg.grid;
    let clusters = cfg.num_location_clusters;
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| gaussian_vector(&mut rng, cfg.dim, 1.0)).collect();
    let bases: Vec<_> = (0..clusters).map(|_| draw_basis(&mut rng, cfg.dim, cfg.normal_rank)).collect();
    let defect_types: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..cfg.num_defect_types)
        .map(|t| {
            let mut center = gaussian_vector(&mut rng, cfg.dim, cfg.defect_shift);
            for (c, anchor) in center.iter_mut().zip(&centers[t % clusters]) {
                *c += anchor;
            }
            (center, draw_basis(&mut rng, cfg.dim, cfg.defect_rank))
        })
        .collect();
    let mut deviation = vec![0f64; cfg.dim];

    // anomalous images are spread evenly through the id order
    let anomalous = cfg.num_anomalous();
    let is_anomalous = |i: usize| (i * anomalous) / cfg.num_images != ((i + 1) * anomalous) / cfg.num_images;

    let mut manifest = DatasetManifest::new(cfg.category.clone(), cfg.image_size());
    let mut features = vec![0f32; gh * gw * cfg.dim];
    let mut defects_drawn = 0;
    for i in 0..cfg.num_images {
        let id = format!("img_{i:04}");
        let shift = rng.random_range(0..=cfg.jitter);
        let defect = is_anomalous(i).then(|| {
            let (offset, basis) = &defect_types[defects_drawn % cfg.num_defect_types];
            defects_drawn += 1;
            let blob = draw_blob(cfg, &mut rng);
            let mut center = vec![0f64; cfg.dim];
            fill_deviation(&mut center, basis, cfg.anomaly_sigma, &mut rng);
            for (c, o) in center.iter_mut().zip(offset) {
                *c += o;
            }
            (blob, center)
        });

        for y in 0..gh {
            for x in 0..gw {
                let cluster = ((x + shift) * clusters / gw) % clusters;
                let offset = defect.as_ref().filter(|(blob, _)| blob.contains(y, x)).map(|(_, c)| c);
                if offset.is_some() {
                    fill_deviation(&mut deviation, &[], cfg.defect_noise, &mut rng);
                } else {
                    fill_deviation(&mut deviation, &bases[cluster], cfg.normal_sigma, &mut rng);
                }
                let out = &mut features[(y * gw + x) * cfg.dim..(y * gw + x + 1) * cfg.dim];
                for (c, slot) in out.iter_mut().enumerate() {
                    let base = offset.map_or(centers[cluster][c], |o| o[c]);
                    *slot = (base + deviation[c]) as f32;
                }
            }
        }
        let feature_rel = PathBuf::from("features").join(format!("{id}.pcfb"));
        write_tensor(out_dir.join(&feature_rel), &[gh, gw, cfg.dim], &features)?;

        let mut record = ImageRecord {
            id: id.clone(),
            feature_paths: vec![feature_rel],
            mask_path: None,
            image_path: None,
            split: Split::Test,
            label: Label::Normal,
        };
        if let Some((blob, _)) = defect {
            let (ih, iw) = cfg.image_size();
            let mut mask = Mask::zeros(ih, iw);
            for py in 0..ih {
                for px in 0..iw {
                    if blob.contains(py / cfg.cell_pixels, px / cfg.cell_pixels) {
                        mask.data[py * iw + px] = 1;
                    }
                }
            }
            let mask_rel = PathBuf::from("masks").join(format!("{id}.pcfb"));
            write_mask(out_dir.join(&mask_rel), &mask)?;
            record.mask_path = Some(mask_rel);
            record.label = Label::Anomalous;
        }
        manifest.records.push(record);
    }

    let echo = out_dir.join("synth.json");
    let text = serde_json::to_string_pretty(cfg).map_err(|e| Error::json("synth.json", e))?;
    fs::write(&echo, text + "\n").map_err(|e| Error::io(&echo, e))?;
    manifest.save(out_dir.join("manifest.json"))?;
    DatasetManifest::load(out_dir.join("manifest.json"))
}
