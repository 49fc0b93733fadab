use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use patchcluster::io::DatasetManifest;
use rayon::prelude::*;
use serde_json::json;

use crate::error::CliError;
use crate::mvtec::resize_and_crop;
use crate::pipeline::{load_scores, read_score_map};

#[derive(Args)]
pub struct HeatmapArgs {
    /// Manifest whose image paths are used as backgrounds
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Scoring output directory (or its scores.json)
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only render these image ids
    #[arg(long = "id")]
    pub ids: Vec<String>,
    /// Heatmap opacity over the source image
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f32,
}

fn colorize(pixels: &[f32], width: usize, height: usize) -> RgbImage {
    let (lo, hi) = pixels
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let v = pixels[y as usize * width + x as usize];
        let t = if span > 0.0 { ((v - lo) / span) as f64 } else { 0.0 };
        let c = colorous::VIRIDIS.eval_continuous(t);
        Rgb([c.r, c.g, c.b])
    })
}

fn blend(heat: &mut RgbImage, background: &RgbImage, alpha: f32) {
    for (h, b) in heat.pixels_mut().zip(background.pixels()) {
        for c in 0..3 {
            h.0[c] = (alpha * h.0[c] as f32 + (1.0 - alpha) * b.0[c] as f32).round() as u8;
        }
    }
}

pub fn run(args: &HeatmapArgs) -> Result<serde_json::Value> {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(CliError::InvalidArgument(format!("alpha must be in [0, 1], got {}", args.alpha)).into());
    }
    let (dir, scores) = load_scores(&args.scores)?;
    let manifest = args.manifest.as_ref().map(DatasetManifest::load).transpose()?;
    let ids: Vec<&String> = if args.ids.is_empty() {
        scores.images.keys().collect()
    } else {
        args.ids.iter().collect()
    };
    let written = ids
        .par_iter()
        .map(|id| {
            let entry = scores
                .images
                .get(*id)
                .ok_or_else(|| CliError::MissingInput(format!("no score map for {id:?}")))?;
            let map = read_score_map(&dir, id, entry)?;
            let mut heat = colorize(&map.pixels, map.width, map.height);
            let source = manifest
                .as_ref()
                .and_then(|m| m.record(id))
                .and_then(|r| r.image_path.as_ref());
            if let Some(path) = source {
                let img = image::open(path).map_err(|e| CliError::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let background = resize_and_crop(&img, FilterType::Triangle).to_rgb8();
                if background.dimensions() == heat.dimensions() {
                    blend(&mut heat, &background, args.alpha);
                }
            }
            let out = args.out.join(format!("{id}.png"));
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            heat.save(&out).map_err(|e| CliError::Image {
                path: out.clone(),
                message: e.to_string(),
            })?;
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(json!({ "heatmaps": written.len(), "out": args.out }))
}
