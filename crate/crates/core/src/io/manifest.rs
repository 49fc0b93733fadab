use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::read_mask;
use crate::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    /// One feature tensor per backbone stage, finest grid first.
    pub feature_paths: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
    pub split: Split,
    pub label: Label,
}

impl ImageRecord {
    pub fn is_anomalous(&self) -> bool {
        self.label == Label::Anomalous
    }
}

/// One category of images. `image_size` is `(height, width)` in pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub category: String,
    pub image_size: (usize, usize),
    pub records: Vec<ImageRecord>,
}

/// The three blind-detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BadSetting {
    /// Train and test images together.
    Mix,
    /// Test images only.
    Test,
    /// Anomalous test images only.
    Ano,
}

impl DatasetManifest {
    pub fn new(category: impl Into<String>, image_size: (usize, usize)) -> Self {
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            category: category.into(),
            image_size,
            records: Vec::new(),
        }
    }

    /// Loads and validates a manifest. Relative paths are resolved against
    /// the manifest's directory, and labels are re-derived from masks.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::from_json(&text, base)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut manifest: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::json("manifest", e))?;
        manifest.resolve_paths(base_dir);
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes the manifest as pretty JSON, paths as stored.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for record in &mut self.records {
            record.feature_paths.iter_mut().for_each(resolve);
            record.mask_path.as_mut().map(resolve);
            record.image_path.as_mut().map(resolve);
        }
    }

    /// Checks ids, file existence, and mask geometry; relabels every record
    /// from its mask.
    pub fn validate(&mut self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let (height, width) = self.image_size;
        if height == 0 || width == 0 {
            return Err(Error::Manifest("image_size must be nonzero".into()));
        }
        let mut seen = HashSet::new();
        for record in &mut self.records {
            if !seen.insert(record.id.clone()) {
                return Err(Error::Manifest(format!("duplicate record id {:?}", record.id)));
            }
            let missing = record
                .feature_paths
                .iter()
                .chain(record.image_path.iter())
                .chain(record.mask_path.iter())
                .find(|p| !p.exists());
            if let Some(p) = missing {
                return Err(Error::Manifest(format!(
                    "record {:?} references missing file {}",
                    record.id,
                    p.display()
                )));
            }
            record.label = match &record.mask_path {
                Some(mask_path) => {
                    let mask = read_mask(mask_path)?;
                    if (mask.height, mask.width) != (height, width) {
                        return Err(Error::Manifest(format!(
                            "mask of {:?} is {}x{}, manifest image_size is {height}x{width}",
                            record.id, mask.height, mask.width
                        )));
                    }
                    if mask.is_anomalous() {
                        Label::Anomalous
                    } else {
                        Label::Normal
                    }
                }
                None if record.label == Label::Anomalous => {
                    return Err(Error::Manifest(format!(
                        "record {:?} is labelled anomalous but has no mask",
                        record.id
                    )))
                }
                None => Label::Normal,
            };
        }
        Ok(())
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

fn sorted_by_id(mut records: Vec<ImageRecord>) -> Vec<ImageRecord> {
    records.sort_by(|a, b| a.id.cmp(&b.id));
    records
}

/// Selects the records of one blind-detection setting, sorted by id.
pub fn build_bad_setting(manifest: &DatasetManifest, setting: BadSetting) -> Result<Vec<ImageRecord>> {
    let records: Vec<ImageRecord> = manifest
        .records
        .iter()
        .filter(|r| match setting {
            BadSetting::Mix => true,
            BadSetting::Test => r.split == Split::Test,
            BadSetting::Ano => r.split == Split::Test && r.label == Label::Anomalous,
        })
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::EmptySetting(format!(
            "{setting:?} setting of category {:?} has no records",
            manifest.category
        )));
    }
    Ok(sorted_by_id(records))
}

/// Conventional one-class split: `(train records, test records)`, each sorted
/// by id. The bank is built from the first, scoring runs on the second.
pub fn one_class_split(manifest: &DatasetManifest) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    let (train, test): (Vec<_>, Vec<_>) = manifest
        .records
        .iter()
        .cloned()
        .partition(|r| r.split == Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySetting(format!(
            "one-class mode needs train records; category {:?} has none",
            manifest.category
        )));
    }
    if test.is_empty() {
        return Err(Error::EmptySetting(format!(
            "category {:?} has no test records",
            manifest.category
        )));
    }
    Ok((sorted_by_id(train), sorted_by_id(test)))
}
