//! MVTec AD directory import.
//!
//! Expected tree per category: `train/good/*.png`, `test/<defect>/*.png` and
//! `ground_truth/<defect>/<stem>_mask.png` for every defect except `good`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use image::imageops::FilterType;
use patchcluster::io::{write_mask, DatasetManifest, ImageRecord, Label, Mask, Split};
use serde_json::json;

use crate::error::CliError;

/// Images are resized so the short side is `RESIZE`, then center-cropped.
pub const RESIZE: u32 = 256;
pub const CROP: u32 = 224;

#[derive(Args)]
pub struct ImportArgs {
    /// Dataset root containing one directory per category
    #[arg(long)]
    pub root: PathBuf,
    /// Output root; each category gets <out>/<category>/manifest.json
    #[arg(long)]
    pub out: PathBuf,
    /// Import a single category [default: every category under --root]
    #[arg(long)]
    pub category: Option<String>,
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let keep = if want_dirs {
            path.is_dir()
        } else {
            path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
        };
        if keep {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

fn file_name(path: &Path) -> String {
    path.file_name().unwrap_or_default().to_string_lossy().into_owned()
}

/// Same geometry as the image preprocessing: resize then center-crop.
pub fn resize_and_crop(img: &image::DynamicImage, filter: FilterType) -> image::DynamicImage {
    let resized = img.resize_exact(RESIZE, RESIZE, filter);
    let off = (RESIZE - CROP) / 2;
    resized.crop_imm(off, off, CROP, CROP)
}

fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| CliError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = resize_and_crop(&img, FilterType::Nearest).to_luma8();
    Ok(Mask {
        height: CROP as usize,
        width: CROP as usize,
        data: gray.pixels().map(|p| u8::from(p.0[0] >= 128)).collect(),
    })
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("resolving {}", path.display()))
}

fn import_category(root: &Path, category: &str, out: &Path) -> Result<serde_json::Value> {
    let cat_dir = root.join(category);
    let missing: Vec<PathBuf> = ["train/good", "test", "ground_truth"]
        .iter()
        .map(|p| cat_dir.join(p))
        .filter(|p| !p.is_dir())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Layout(missing).into());
    }

    let out_dir = out.join(category);
    let mut manifest = DatasetManifest::new(category, (CROP as usize, CROP as usize));
    for image in sorted_entries(&cat_dir.join("train/good"), false)? {
        manifest.records.push(ImageRecord {
            id: format!("train/good/{}", stem(&image)),
            feature_paths: vec![],
            mask_path: None,
            image_path: Some(absolute(&image)?),
            split: Split::Train,
            label: Label::Normal,
        });
    }
    for defect_dir in sorted_entries(&cat_dir.join("test"), true)? {
        let defect = file_name(&defect_dir);
        for image in sorted_entries(&defect_dir, false)? {
            let stem = stem(&image);
            let mask_path = if defect == "good" {
                None
            } else {
                let src = cat_dir.join("ground_truth").join(&defect).join(format!("{stem}_mask.png"));
                if !src.is_file() {
                    return Err(CliError::Layout(vec![src]).into());
                }
                let rel = PathBuf::from(format!("masks/{defect}/{stem}.pcfb"));
                write_mask(out_dir.join(&rel), &load_mask(&src)?)?;
                Some(rel)
            };
            manifest.records.push(ImageRecord {
                id: format!("test/{defect}/{stem}"),
                feature_paths: vec![],
                label: if mask_path.is_some() { Label::Anomalous } else { Label::Normal },
                mask_path,
                image_path: Some(absolute(&image)?),
                split: Split::Test,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    // Round-trip through the loader so labels are checked against masks.
    let loaded = DatasetManifest::load(&manifest_path)?;
    let anomalous = loaded.records.iter().filter(|r| r.is_anomalous()).count();
    if let Some(empty) = loaded
        .records
        .iter()
        .zip(&manifest.records)
        .find(|(l, m)| l.label != m.label)
    {
        eprintln!("warning: {} has an empty mask and is treated as normal", empty.0.id);
    }
    Ok(json!({
        "category": category,
        "manifest": manifest_path,
        "images": loaded.records.len(),
        "anomalous": anomalous,
    }))
}

pub fn run(args: &ImportArgs) -> Result<serde_json::Value> {
    if !args.root.is_dir() {
        return Err(CliError::Layout(vec![args.root.clone()]).into());
    }
    let categories = match &args.category {
        Some(c) => vec![c.clone()],
        None => sorted_entries(&args.root, true)?
            .iter()
            .filter(|d| d.join("train").is_dir() && d.join("test").is_dir())
            .map(|d| file_name(d))
            .collect(),
    };
    if categories.is_empty() {
        return Err(CliError::Layout(vec![args.root.join("<category>/train")]).into());
    }
    let imported = categories
        .iter()
        .map(|c| import_category(&args.root, c, &args.out))
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({ "categories": imported }))
}
