use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{auroc, pixel_auroc, pro_score, LabeledScores, DEFAULT_FPR_LIMIT, DEFAULT_PRO_THRESHOLDS};
use crate::io::{read_mask, ImageRecord, Mask};
use crate::scoring::ScoreMap;
use crate::{Error, Result};

/// Metrics of one scoring run over one category and setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub category: String,
    pub setting: String,
    /// Absent when the run holds only one image class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_auroc: Option<f64>,
    pub pixel_auroc: f64,
    pub pro: f64,
    pub image_scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path.display().to_string(), e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Evaluates the score maps of `records`. Records without a mask count as
/// fully normal at `image_size`.
pub fn evaluate_run(
    category: &str,
    setting: &str,
    image_size: (usize, usize),
    records: &[ImageRecord],
    maps: &[ScoreMap],
    config: serde_json::Value,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::EmptySetting(format!("{category}/{setting}: nothing to evaluate")));
    }
    let by_id: HashMap<&str, &ScoreMap> = maps.iter().map(|m| (m.image_id.as_str(), m)).collect();
    let mut ordered = Vec::with_capacity(records.len());
    let mut masks = Vec::with_capacity(records.len());
    for record in records {
        let map = by_id
            .get(record.id.as_str())
            .ok_or_else(|| Error::MissingScore(record.id.clone()))?;
        ordered.push((*map).clone());
        masks.push(match &record.mask_path {
            Some(path) => read_mask(path)?,
            None => Mask::zeros(image_size.0, image_size.1),
        });
    }

    let labels: Vec<bool> = masks.iter().map(Mask::is_anomalous).collect();
    let image_auroc = if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
        let scores = ordered.iter().map(|m| m.image_score).collect();
        Some(auroc(&LabeledScores::new(scores, labels))?)
    } else {
        None
    };

    Ok(EvalReport {
        category: category.to_string(),
        setting: setting.to_string(),
        image_auroc,
        pixel_auroc: pixel_auroc(&ordered, &masks)?,
        pro: pro_score(&ordered, &masks, DEFAULT_FPR_LIMIT, DEFAULT_PRO_THRESHOLDS)?,
        image_scores: ordered.iter().map(|m| (m.image_id.clone(), m.image_score)).collect(),
        config,
    })
}

const SETTING_ORDER: [&str; 4] = ["mix", "test", "ano", "one-class"];

/// CSV with one row per (setting, metric) and one column per category plus
/// the average, values in percent.
pub fn render_table(reports: &[EvalReport]) -> String {
    let categories: BTreeSet<&str> = reports.iter().map(|r| r.category.as_str()).collect();
    let mut settings: Vec<&str> = reports.iter().map(|r| r.setting.as_str()).collect();
    settings.sort_by_key(|s| (SETTING_ORDER.iter().position(|o| o == s).unwrap_or(usize::MAX), s.to_string()));
    settings.dedup();

    let mut out = String::from("setting,metric");
    for c in &categories {
        write!(out, ",{c}").unwrap();
    }
    out.push_str(",Avg\n");

    type Pick = fn(&EvalReport) -> Option<f64>;
    let metrics: [(&str, Pick); 3] = [
        ("image_auroc", |r| r.image_auroc),
        ("pixel_auroc", |r| Some(r.pixel_auroc)),
        ("pro", |r| Some(r.pro)),
    ];
    for setting in settings {
        for (name, pick) in metrics {
            let row: Vec<Option<f64>> = categories
                .iter()
                .map(|c| {
                    reports
                        .iter()
                        .find(|r| r.setting == setting && r.category == *c)
                        .and_then(pick)
                })
                .collect();
            if row.iter().all(Option::is_none) {
                continue;
            }
            write!(out, "{setting},{name}").unwrap();
            for v in &row {
                match v {
                    Some(v) => write!(out, ",{:.1}", v * 100.0).unwrap(),
                    None => out.push(','),
                }
            }
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            let avg = present.iter().sum::<f64>() / present.len() as f64;
            writeln!(out, ",{:.1}", avg * 100.0).unwrap();
        }
    }
    out
}
