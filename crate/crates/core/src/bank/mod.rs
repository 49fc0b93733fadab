//! The patch-feature memory bank: assembly, coreset reduction, exact kNN.

mod coreset;
mod knn;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::PatchFeatureMap;
use crate::io::{read_f32, write_tensor};
use crate::{Error, Result};

pub use coreset::{coreset_subsample, greedy_selection, random_projection};
pub use knn::{query_knn, query_knn_batch, squared_distance, NeighborSet};

pub const BANK_TENSOR_FILE: &str = "bank.pcfb";
pub const BANK_SIDECAR_FILE: &str = "bank.json";
const BANK_SCHEMA_VERSION: u32 = 1;

/// Where a bank row came from: image and grid location (`w` is the column,
/// `h` the row, both 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin<'a> {
    pub image_id: &'a str,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct RowOrigin {
    image: u32,
    w: u32,
    h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub subsample_ratio: f64,
    pub seed: u64,
    pub projection_dim: Option<usize>,
}

impl Default for BankMeta {
    fn default() -> Self {
        BankMeta {
            subsample_ratio: 1.0,
            seed: 0,
            projection_dim: None,
        }
    }
}

/// `N x D` matrix of patch features with per-row provenance. Immutable once
/// built; squared row norms are cached for the distance kernels.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    dim: usize,
    features: Vec<f32>,
    sq_norms: Vec<f64>,
    images: Vec<String>,
    origins: Vec<RowOrigin>,
    pub meta: BankMeta,
}

pub(crate) fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum()
}

impl MemoryBank {
    fn from_parts(
        dim: usize,
        features: Vec<f32>,
        images: Vec<String>,
        origins: Vec<RowOrigin>,
        meta: BankMeta,
    ) -> Result<Self> {
        if dim == 0 || origins.is_empty() {
            return Err(Error::InvalidShape("memory bank needs at least one row of nonzero dim".into()));
        }
        if features.len() != origins.len() * dim {
            return Err(Error::InvalidShape(format!(
                "{} provenance rows do not match {} feature values of dim {dim}",
                origins.len(),
                features.len()
            )));
        }
        if let Some(bad) = origins.iter().find(|o| o.image as usize >= images.len()) {
            return Err(Error::InvalidShape(format!("provenance references unknown image {}", bad.image)));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidShape("memory bank contains non-finite values".into()));
        }
        let sq_norms = features.chunks_exact(dim).map(sq_norm).collect();
        Ok(MemoryBank {
            dim,
            features,
            sq_norms,
            images,
            origins,
            meta,
        })
    }

    /// Bank built from bare rows, all attributed to one image id. Rows are
    /// laid out as a single-row grid (`h = 0`, `w` = row index).
    pub fn from_rows(dim: usize, features: Vec<f32>) -> Result<Self> {
        let n = features.len().checked_div(dim).unwrap_or(0);
        let origins = (0..n as u32).map(|w| RowOrigin { image: 0, w, h: 0 }).collect();
        Self::from_parts(dim, features, vec!["rows".into()], origins, BankMeta::default())
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn sq_norms(&self) -> &[f64] {
        &self.sq_norms
    }

    pub fn origin(&self, i: usize) -> Origin<'_> {
        let o = self.origins[i];
        Origin {
            image_id: &self.images[o.image as usize],
            w: o.w as usize,
            h: o.h as usize,
        }
    }

    /// Bank restricted to `rows`, in the given order.
    pub fn select(&self, rows: &[usize], meta: BankMeta) -> Result<Self> {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        let origins = rows.iter().map(|&r| self.origins[r]).collect();
        Self::from_parts(self.dim, features, self.images.clone(), origins, meta)
    }

    /// Writes `bank.pcfb` (the `N x D` features) and `bank.json` (provenance
    /// and subsampling metadata) into `dir`. `tags` are free-form strings
    /// stored alongside, e.g. the setting the bank was built for.
    pub fn save(&self, dir: impl AsRef<Path>, tags: &BTreeMap<String, String>) -> Result<()> {
        let dir = dir.as_ref();
        write_tensor(dir.join(BANK_TENSOR_FILE), &[self.len(), self.dim], &self.features)?;
        let sidecar = Sidecar {
            schema_version: BANK_SCHEMA_VERSION,
            rows: self.len(),
            dim: self.dim,
            subsample_ratio: self.meta.subsample_ratio,
            seed: self.meta.seed,
            projection_dim: self.meta.projection_dim,
            tags: tags.clone(),
            images: self.images.clone(),
            provenance: self.origins.iter().map(|o| [o.image, o.w, o.h]).collect(),
        };
        let text = serde_json::to_string(&sidecar).map_err(|e| Error::json("bank sidecar", e))?;
        let path = dir.join(BANK_SIDECAR_FILE);
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a bank written by [`MemoryBank::save`]; returns it with its tags.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, BTreeMap<String, String>)> {
        let dir = dir.as_ref();
        let path = dir.join(BANK_SIDECAR_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json("bank sidecar", e))?;
        if sidecar.schema_version != BANK_SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported bank schema_version {}",
                sidecar.schema_version
            )));
        }
        let (dims, features) = read_f32(dir.join(BANK_TENSOR_FILE))?;
        if dims != [sidecar.rows, sidecar.dim] || sidecar.provenance.len() != sidecar.rows {
            return Err(Error::InvalidShape(format!(
                "bank tensor dims {dims:?} disagree with sidecar ({} x {}, {} provenance rows)",
                sidecar.rows,
                sidecar.dim,
                sidecar.provenance.len()
            )));
        }
        let origins = sidecar
            .provenance
            .iter()
            .map(|&[image, w, h]| RowOrigin { image, w, h })
            .collect();
        let meta = BankMeta {
            subsample_ratio: sidecar.subsample_ratio,
            seed: sidecar.seed,
            projection_dim: sidecar.projection_dim,
        };
        let bank = Self::from_parts(sidecar.dim, features, sidecar.images, origins, meta)?;
        Ok((bank, sidecar.tags))
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    schema_version: u32,
    rows: usize,
    dim: usize,
    subsample_ratio: f64,
    seed: u64,
    projection_dim: Option<usize>,
    #[serde(default)]
    tags: BTreeMap<String, String>,
    images: Vec<String>,
    provenance: Vec<[u32; 3]>,
}

/// Stacks every patch vector of every map: maps in input order, locations
/// row-major (`w` fastest) within each map.
pub fn assemble(maps: &[PatchFeatureMap]) -> Result<MemoryBank> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidShape("cannot assemble a bank from zero feature maps".into()))?;
    let dim = first.dim();
    let total: usize = maps.iter().map(|m| m.grid.locations()).sum();
    let mut features = Vec::with_capacity(total * dim);
    let mut origins = Vec::with_capacity(total);
    let mut images = Vec::with_capacity(maps.len());
    for (i, map) in maps.iter().enumerate() {
        if map.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: map.dim(),
            });
        }
        images.push(map.image_id.clone());
        features.extend_from_slice(&map.grid.values);
        for h in 0..map.grid.height as u32 {
            for w in 0..map.grid.width as u32 {
                origins.push(RowOrigin { image: i as u32, w, h });
            }
        }
    }
    MemoryBank::from_parts(dim, features, images, origins, BankMeta::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Grid;

    fn map(id: &str, h: usize, w: usize, d: usize, offset: f32) -> PatchFeatureMap {
        let values = (0..h * w * d).map(|v| v as f32 + offset).collect();
        PatchFeatureMap {
            image_id: id.into(),
            grid: Grid::new(h, w, d, values).unwrap(),
        }
    }

    #[test]
    fn assemble_enumerates_row_major() {
        let bank = assemble(&[map("id", 2, 2, 3, 0.0)]).unwrap();
        assert_eq!(bank.len(), 4);
        let origins: Vec<_> = (0..4).map(|i| bank.origin(i)).map(|o| (o.image_id, o.w, o.h)).collect();
        assert_eq!(origins, [("id", 0, 0), ("id", 1, 0), ("id", 0, 1), ("id", 1, 1)]);
    }

    #[test]
    fn provenance_points_back_to_source_vectors() {
        let maps = [map("a", 3, 2, 4, 0.0), map("b", 2, 3, 4, 1000.0)];
        let bank = assemble(&maps).unwrap();
        assert_eq!(bank.len(), 12);
        for i in 0..bank.len() {
            let o = bank.origin(i);
            let source = maps.iter().find(|m| m.image_id == o.image_id).unwrap();
            assert_eq!(bank.row(i), source.grid.at(o.h, o.w));
        }
    }

    #[test]
    fn assemble_errors() {
        assert!(assemble(&[]).is_err());
        let err = assemble(&[map("a", 2, 2, 3, 0.0), map("b", 2, 2, 4, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 4 }));
    }

    #[test]
    fn mvtec_scale_row_count() {
        let maps: Vec<_> = (0..114)
            .map(|i| PatchFeatureMap {
                image_id: format!("img{i:03}"),
                grid: Grid::filled(28, 28, 1, i as f32),
            })
            .collect();
        assert_eq!(assemble(&maps).unwrap().len(), 89_376);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = assemble(&[map("a", 2, 3, 2, 0.5), map("b", 1, 2, 2, -3.0)]).unwrap();
        bank.meta = BankMeta {
            subsample_ratio: 0.25,
            seed: 9,
            projection_dim: Some(4),
        };
        let tags = BTreeMap::from([("setting".to_string(), "test".to_string())]);
        bank.save(dir.path(), &tags).unwrap();
        let (back, back_tags) = MemoryBank::load(dir.path()).unwrap();
        assert_eq!(back_tags, tags);
        assert_eq!(back.features(), bank.features());
        assert_eq!(back.meta, bank.meta);
        for i in 0..bank.len() {
            assert_eq!(back.origin(i), bank.origin(i));
        }
    }

    #[test]
    fn non_finite_rows_rejected() {
        assert!(MemoryBank::from_rows(2, vec![0.0, f32::NAN]).is_err());
        assert!(MemoryBank::from_rows(2, vec![]).is_err());
    }
}
