//! Bank construction, scoring and evaluation over a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use patchcluster::bank::{assemble, coreset_subsample, MemoryBank};
use patchcluster::eval::{evaluate_run, render_table, EvalReport};
use patchcluster::features::{patch_features_from_files, PatchFeatureMap};
use patchcluster::io::{
    build_bad_setting, one_class_split, read_f32, write_tensor, BadSetting, DatasetManifest, ImageRecord,
};
use patchcluster::scoring::{default_k_for_ratio, PatchScorer, Scorer, ScoreMap, ScorerConfig};
use patchcluster::synth::{generate_bad_dataset, SynthConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;
use crate::{BankOpts, RunArgs, ScoreOpts, Setting};

pub const SCORES_FILE: &str = "scores.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.csv";

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with generator parameters; omitted keys keep their defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_images: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Scoring output directory (or its scores.json)
    #[arg(long)]
    pub scores: PathBuf,
    /// Directory for report.json and report.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TableArgs {
    /// report.json files, or directories containing one
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Per-image entry of scores.json. `map` is relative to the scores directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_score: f64,
    pub max_patch_score: f32,
    pub map: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoresFile {
    pub category: String,
    pub setting: String,
    pub image_size: (usize, usize),
    pub config: serde_json::Value,
    pub images: BTreeMap<String, ImageEntry>,
}

pub fn synth(args: &SynthArgs) -> Result<serde_json::Value> {
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::InvalidArgument(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.num_images {
        cfg.num_images = n;
    }
    let manifest = generate_bad_dataset(&cfg, &args.out)?;
    let anomalous = manifest.records.iter().filter(|r| r.is_anomalous()).count();
    Ok(json!({
        "manifest": args.out.join("manifest.json"),
        "images": manifest.records.len(),
        "anomalous": anomalous,
    }))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(CliError::MissingInput(format!("manifest {} does not exist", path.display())).into());
    }
    Ok(DatasetManifest::load(path)?)
}

/// Records the bank is built from and records that get scored.
fn setting_records(manifest: &DatasetManifest, setting: Setting) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    let bad = match setting {
        Setting::Mix => BadSetting::Mix,
        Setting::Test => BadSetting::Test,
        Setting::Ano => BadSetting::Ano,
        Setting::OneClass => return Ok(one_class_split(manifest)?),
    };
    let records = build_bad_setting(manifest, bad)?;
    Ok((records.clone(), records))
}

fn load_features(records: &[ImageRecord], patch_size: usize) -> Result<Vec<PatchFeatureMap>> {
    if let Some(r) = records.iter().find(|r| r.feature_paths.is_empty()) {
        return Err(CliError::MissingInput(format!(
            "record {:?} has no feature tensors; run the feature extractor first",
            r.id
        ))
        .into());
    }
    records
        .par_iter()
        .map(|r| {
            patch_features_from_files(&r.id, &r.feature_paths, patch_size)
                .with_context(|| format!("loading features of {:?}", r.id))
        })
        .collect()
}

fn build_bank(opts: &BankOpts) -> Result<(DatasetManifest, MemoryBank, BTreeMap<String, String>)> {
    let manifest = load_manifest(&opts.manifest)?;
    let (bank_records, _) = setting_records(&manifest, opts.setting)?;
    let maps = load_features(&bank_records, opts.patch_size)?;
    let full = assemble(&maps)?;
    let bank = coreset_subsample(&full, opts.ratio, opts.seed, opts.projection_dim)?;
    let tags = BTreeMap::from([
        ("category".to_string(), manifest.category.clone()),
        ("setting".to_string(), opts.setting.name().to_string()),
        ("patch_size".to_string(), opts.patch_size.to_string()),
        ("images".to_string(), bank_records.len().to_string()),
    ]);
    Ok((manifest, bank, tags))
}

pub fn bank(opts: &BankOpts, out: &Path) -> Result<serde_json::Value> {
    let (_, bank, tags) = build_bank(opts)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    bank.save(out, &tags)?;
    Ok(json!({ "bank": out, "rows": bank.len(), "dim": bank.dim(), "tags": tags }))
}

fn scorer_config(opts: &ScoreOpts, setting: Setting, ratio: f64) -> Result<ScorerConfig> {
    let scorer = Scorer::from(opts.scorer);
    let k = match (scorer, opts.k) {
        (Scorer::PatchCore, Some(k)) if k != 1 => {
            return Err(CliError::ConfigConflict(format!("patchcore uses a single neighbor, got --k {k}")).into())
        }
        (Scorer::PatchCore, _) => 1,
        (_, Some(k)) => k,
        (_, None) => default_k_for_ratio(ratio),
    };
    let start_index = opts
        .start_index
        .unwrap_or(if setting == Setting::OneClass { 1 } else { 2 });
    Ok(ScorerConfig {
        k,
        start_index,
        scorer,
        b: opts.b,
        gaussian_sigma: opts.sigma,
        clamp_weight: opts.clamp_weight,
    })
}

fn tag<'a>(tags: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    tags.get(key)
        .map(String::as_str)
        .ok_or_else(|| CliError::MissingInput(format!("bank is missing the {key:?} tag")).into())
}

fn score_with_bank(
    manifest: &DatasetManifest,
    bank: &MemoryBank,
    tags: &BTreeMap<String, String>,
    setting: Option<Setting>,
    opts: &ScoreOpts,
    out: &Path,
) -> Result<serde_json::Value> {
    let bank_setting = Setting::parse(tag(tags, "setting")?)
        .ok_or_else(|| CliError::ConfigConflict(format!("bank has unknown setting {:?}", tags["setting"])))?;
    let setting = setting.unwrap_or(bank_setting);
    if setting != bank_setting {
        return Err(CliError::ConfigConflict(format!(
            "bank was built for the {} setting, asked to score {}",
            bank_setting.name(),
            setting.name()
        ))
        .into());
    }
    let bank_category = tag(tags, "category")?;
    if bank_category != manifest.category {
        return Err(CliError::ConfigConflict(format!(
            "bank belongs to category {bank_category:?}, manifest to {:?}",
            manifest.category
        ))
        .into());
    }
    let patch_size: usize = tag(tags, "patch_size")?
        .parse()
        .map_err(|_| CliError::InvalidArgument("bank patch_size tag is not a number".into()))?;

    let cfg = scorer_config(opts, setting, bank.meta.subsample_ratio)?;
    let scorer = PatchScorer::new(bank, cfg.clone())?;
    let (_, records) = setting_records(manifest, setting)?;
    let maps = load_features(&records, patch_size)?;

    let mut images = BTreeMap::new();
    for map in &maps {
        let raw = scorer.score_map(map)?;
        let scored = scorer.finalize(&raw, manifest.image_size)?;
        let rel = format!("maps/{}.pcfb", map.image_id);
        write_tensor(out.join(&rel), &[scored.height, scored.width], &scored.pixels)?;
        images.insert(
            map.image_id.clone(),
            ImageEntry {
                image_score: scored.image_score,
                max_patch_score: scored.max_patch_score,
                map: rel,
            },
        );
    }
    let file = ScoresFile {
        category: manifest.category.clone(),
        setting: setting.name().to_string(),
        image_size: manifest.image_size,
        config: json!({
            "scorer": cfg,
            "bank": { "rows": bank.len(), "meta": bank.meta, "tags": tags },
        }),
        images,
    };
    let path = out.join(SCORES_FILE);
    fs::write(&path, serde_json::to_string_pretty(&file)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(json!({ "scores": path, "images": file.images.len(), "k": cfg.k }))
}

pub fn score(
    manifest: &Path,
    bank_dir: &Path,
    setting: Option<Setting>,
    opts: &ScoreOpts,
    out: &Path,
) -> Result<serde_json::Value> {
    let manifest = load_manifest(manifest)?;
    if !bank_dir.is_dir() {
        return Err(CliError::MissingInput(format!("bank directory {} does not exist", bank_dir.display())).into());
    }
    let (bank, tags) = MemoryBank::load(bank_dir)?;
    score_with_bank(&manifest, &bank, &tags, setting, opts, out)
}

pub fn load_scores(path: &Path) -> Result<(PathBuf, ScoresFile)> {
    let file = if path.is_dir() { path.join(SCORES_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file)
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", file.display())))?;
    let scores: ScoresFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, scores))
}

pub fn read_score_map(dir: &Path, id: &str, entry: &ImageEntry) -> Result<ScoreMap> {
    let (dims, pixels) = read_f32(dir.join(&entry.map))?;
    let [height, width] = dims[..] else {
        return Err(CliError::InvalidArgument(format!("score map of {id:?} has shape {dims:?}")).into());
    };
    Ok(ScoreMap {
        image_id: id.to_string(),
        height,
        width,
        pixels,
        image_score: entry.image_score,
        max_patch_score: entry.max_patch_score,
    })
}

fn evaluate(manifest: &DatasetManifest, scores_dir: &Path, scores: &ScoresFile, out: &Path) -> Result<EvalReport> {
    let setting = Setting::parse(&scores.setting)
        .ok_or_else(|| CliError::ConfigConflict(format!("unknown setting {:?}", scores.setting)))?;
    if scores.category != manifest.category {
        return Err(CliError::ConfigConflict(format!(
            "scores belong to category {:?}, manifest to {:?}",
            scores.category, manifest.category
        ))
        .into());
    }
    let (_, records) = setting_records(manifest, setting)?;
    let maps = records
        .iter()
        .filter_map(|r| scores.images.get(&r.id).map(|e| read_score_map(scores_dir, &r.id, e)))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_run(
        &manifest.category,
        &scores.setting,
        manifest.image_size,
        &records,
        &maps,
        scores.config.clone(),
    )?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report.save(out.join(REPORT_FILE))?;
    fs::write(out.join(TABLE_FILE), render_table(std::slice::from_ref(&report)))?;
    Ok(report)
}

fn summary(report: &EvalReport) -> serde_json::Value {
    json!({
        "category": report.category,
        "setting": report.setting,
        "image_auroc": report.image_auroc,
        "pixel_auroc": report.pixel_auroc,
        "pro": report.pro,
    })
}

pub fn eval(args: &EvalArgs) -> Result<serde_json::Value> {
    let manifest = load_manifest(&args.manifest)?;
    let (dir, scores) = load_scores(&args.scores)?;
    Ok(summary(&evaluate(&manifest, &dir, &scores, &args.out)?))
}

pub fn run(args: &RunArgs) -> Result<serde_json::Value> {
    let (manifest, bank, tags) = build_bank(&args.bank)?;
    let bank_dir = args.out.join("bank");
    fs::create_dir_all(&bank_dir).with_context(|| format!("creating {}", bank_dir.display()))?;
    bank.save(&bank_dir, &tags)?;
    let scores_dir = args.out.join("scores");
    score_with_bank(&manifest, &bank, &tags, Some(args.bank.setting), &args.score, &scores_dir)?;
    let (dir, scores) = load_scores(&scores_dir)?;
    Ok(summary(&evaluate(&manifest, &dir, &scores, &args.out)?))
}

pub fn report_table(args: &TableArgs) -> Result<serde_json::Value> {
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join(REPORT_FILE) } else { p.clone() };
            if !file.exists() {
                return Err(CliError::MissingInput(format!("{} does not exist", file.display())).into());
            }
            Ok(EvalReport::load(&file)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = render_table(&reports);
    match &args.out {
        Some(path) => {
            fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
            Ok(json!({ "table": path, "reports": reports.len() }))
        }
        None => {
            print!("{table}");
            Ok(serde_json::Value::Null)
        }
    }
}
