//! Patch- and image-level anomaly scores and score-map postprocessing.

mod lof;
mod smooth;

use serde::{Deserialize, Serialize};

use crate::bank::{query_knn, query_knn_batch, squared_distance, MemoryBank, NeighborSet};
use crate::features::PatchFeatureMap;
use crate::{Error, Result};

pub use lof::{lof_score, LofTable};
pub use smooth::{gaussian_kernel, gaussian_smooth, upsample_and_smooth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    /// Mean distance to the K nearest bank neighbors.
    PatchCluster,
    /// Distance to the nearest bank neighbor.
    PatchCore,
    /// Local outlier factor over the K-neighborhood.
    Lof,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub k: usize,
    /// 1-based rank of the first neighbor used; 2 skips the query itself
    /// when it is part of the bank.
    pub start_index: usize,
    pub scorer: Scorer,
    /// Neighborhood size for the image-score reweighting; `None` means `k`.
    pub b: Option<usize>,
    pub gaussian_sigma: f64,
    pub clamp_weight: bool,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            k: 100,
            start_index: 2,
            scorer: Scorer::PatchCluster,
            b: None,
            gaussian_sigma: 4.0,
            clamp_weight: false,
        }
    }
}

/// Neighbor count paired with a coreset ratio: 100% -> 100, 25% -> 25,
/// 10% -> 10, 1% -> 5.
pub fn default_k_for_ratio(ratio: f64) -> usize {
    ((100.0 * ratio).round() as usize).max(5)
}

impl ScorerConfig {
    pub fn effective_b(&self) -> usize {
        self.b.unwrap_or(self.k)
    }

    /// Neighbors fetched per patch query.
    fn query_k(&self) -> usize {
        match self.scorer {
            Scorer::PatchCore => 1,
            Scorer::PatchCluster | Scorer::Lof => self.k,
        }
    }

    pub fn validate(&self, bank: &MemoryBank) -> Result<()> {
        if self.k == 0 || self.effective_b() == 0 || self.start_index == 0 {
            return Err(Error::InvalidConfig(format!(
                "K, b and start_index must be at least 1 (K={}, b={}, start_index={})",
                self.k,
                self.effective_b(),
                self.start_index
            )));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gaussian sigma must be positive, got {}",
                self.gaussian_sigma
            )));
        }
        let needed = (self.start_index - 1 + self.query_k()).max(self.effective_b());
        let needed = if self.scorer == Scorer::Lof { needed.max(self.k + 1) } else { needed };
        if needed > bank.len() {
            return Err(Error::InsufficientBankSize {
                needed,
                k: self.k,
                start_index: self.start_index,
                available: bank.len(),
            });
        }
        Ok(())
    }
}

/// Mean of the neighbor distances.
pub fn patch_score(neighbors: &NeighborSet) -> Result<f32> {
    if neighbors.is_empty() {
        return Err(Error::InvalidConfig("patch score needs at least one neighbor".into()));
    }
    let sum: f64 = neighbors.distances.iter().map(|&d| d as f64).sum();
    Ok((sum / neighbors.len() as f64) as f32)
}

/// Scores on the feature grid, before upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScoreMap {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    /// Row-major scores.
    pub scores: Vec<f32>,
    /// Flat index of the highest score (lowest index on ties).
    pub max_index: usize,
    /// Feature vector at the highest-scoring location.
    pub max_query: Vec<f32>,
    pub max_neighbors: NeighborSet,
}

impl RawScoreMap {
    pub fn max_score(&self) -> f32 {
        self.scores[self.max_index]
    }

    /// Builds a map from per-location scores and neighbor sets.
    pub fn from_scores(
        map: &PatchFeatureMap,
        scores: Vec<f32>,
        mut neighbors: Vec<NeighborSet>,
    ) -> Result<Self> {
        let locations = map.grid.locations();
        if scores.len() != locations || neighbors.len() != locations {
            return Err(Error::InvalidShape(format!(
                "{} scores / {} neighbor sets for {locations} locations",
                scores.len(),
                neighbors.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidShape(format!("patch score {bad} is not a finite nonnegative value")));
        }
        let max_index = scores
            .iter()
            .enumerate()
            .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best });
        let (h, w) = (max_index / map.grid.width, max_index % map.grid.width);
        Ok(RawScoreMap {
            image_id: map.image_id.clone(),
            height: map.grid.height,
            width: map.grid.width,
            max_index,
            max_query: map.grid.at(h, w).to_vec(),
            max_neighbors: neighbors.swap_remove(max_index),
            scores,
        })
    }

    /// PatchCluster scores from precomputed neighbor sets, using only the
    /// first `k` neighbors of each. `k = 1` is the PatchCore score.
    pub fn from_neighbors(map: &PatchFeatureMap, neighbors: &[NeighborSet], k: usize) -> Result<Self> {
        if neighbors.iter().any(|n| n.len() < k) {
            return Err(Error::InvalidConfig(format!("neighbor sets hold fewer than {k} entries")));
        }
        let truncated: Vec<NeighborSet> = neighbors.iter().map(|n| n.truncated(k)).collect();
        let scores = truncated.iter().map(patch_score).collect::<Result<Vec<_>>>()?;
        Self::from_scores(map, scores, truncated)
    }
}

/// Image-resolution score map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    /// Image-level score (reweighted maximum patch score).
    pub image_score: f64,
    /// Maximum raw patch score.
    pub max_patch_score: f32,
}

/// Scores feature maps against one bank. Construction validates the
/// configuration and, for LoF, precomputes the bank's local densities.
pub struct PatchScorer<'a> {
    bank: &'a MemoryBank,
    cfg: ScorerConfig,
    lof: Option<LofTable>,
}

impl<'a> PatchScorer<'a> {
    pub fn new(bank: &'a MemoryBank, cfg: ScorerConfig) -> Result<Self> {
        cfg.validate(bank)?;
        let lof = match cfg.scorer {
            Scorer::Lof => Some(LofTable::build(bank, cfg.k)?),
            _ => None,
        };
        Ok(PatchScorer { bank, cfg, lof })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.cfg
    }

    pub fn score_map(&self, map: &PatchFeatureMap) -> Result<RawScoreMap> {
        if map.dim() != self.bank.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.bank.dim(),
                found: map.dim(),
            });
        }
        let neighbors = query_knn_batch(
            self.bank,
            &map.grid.values,
            self.cfg.query_k(),
            self.cfg.start_index,
        )?;
        match (&self.lof, self.cfg.scorer) {
            (Some(table), Scorer::Lof) => {
                let scores = neighbors.iter().map(|n| table.score(n) as f32).collect();
                RawScoreMap::from_scores(map, scores, neighbors)
            }
            _ => RawScoreMap::from_neighbors(map, &neighbors, self.cfg.query_k()),
        }
    }

    pub fn image_score(&self, raw: &RawScoreMap) -> Result<f64> {
        image_score(raw, self.bank, &self.cfg)
    }

    /// Upsamples, smooths, and attaches the image score.
    pub fn finalize(&self, raw: &RawScoreMap, image_size: (usize, usize)) -> Result<ScoreMap> {
        let mut out = upsample_and_smooth(raw, image_size, self.cfg.gaussian_sigma)?;
        out.image_score = self.image_score(raw)?;
        Ok(out)
    }
}

pub fn score_feature_map(bank: &MemoryBank, map: &PatchFeatureMap, cfg: &ScorerConfig) -> Result<RawScoreMap> {
    PatchScorer::new(bank, cfg.clone())?.score_map(map)
}

/// Reweighted image score
/// `a = (1 - exp(a*) / sum_{f in N(f*)} exp(dist(q*, f))) * a*`, where `a*` is
/// the maximum patch score, `q*` the patch that produced it, `f*` its nearest
/// retained bank neighbor and `N(f*)` the `b` nearest bank rows to `f*`
/// (including `f*`).
pub fn image_score(raw: &RawScoreMap, bank: &MemoryBank, cfg: &ScorerConfig) -> Result<f64> {
    // The weight cancels badly when exp(a*) is close to the sum, so a* is
    // re-evaluated in f64 rather than taken from the f32 map.
    let best = match cfg.scorer {
        Scorer::Lof => raw.max_score() as f64,
        _ => {
            let hood = &raw.max_neighbors.indices;
            hood.iter()
                .map(|&j| squared_distance(&raw.max_query, bank.row(j)).sqrt())
                .sum::<f64>()
                / hood.len() as f64
        }
    };
    let nearest = *raw
        .max_neighbors
        .indices
        .first()
        .ok_or_else(|| Error::InvalidShape("maximum patch has no neighbors".into()))?;
    let hood = query_knn(bank, bank.row(nearest), cfg.effective_b(), 1)?;
    let distances: Vec<f64> = hood
        .indices
        .iter()
        .map(|&j| squared_distance(&raw.max_query, bank.row(j)).sqrt())
        .collect();
    Ok(reweight(best, &distances, cfg.clamp_weight))
}

/// `(1 - exp(best) / sum exp(d)) * best`, evaluated with a max shift. The
/// shifted exponent is capped so the result stays finite.
pub fn reweight(best: f64, distances: &[f64], clamp: bool) -> f64 {
    let shift = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = distances.iter().map(|d| (d - shift).exp()).sum();
    // denom >= 1, so only the numerator can overflow
    let ratio = (best - shift).min(700.0).exp() / denom;
    let mut weight = 1.0 - ratio;
    if clamp {
        weight = weight.clamp(0.0, 1.0);
    }
    weight * best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::assemble;
    use crate::features::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn neighbors(d: &[f32]) -> NeighborSet {
        NeighborSet {
            distances: d.to_vec(),
            indices: (0..d.len()).collect(),
            start_index: 1,
        }
    }

    #[test]
    fn patch_score_examples() {
        assert_eq!(patch_score(&neighbors(&[0.7])).unwrap(), 0.7);
        assert_eq!(patch_score(&neighbors(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(patch_score(&neighbors(&[1.0, 2.0, 6.0])).unwrap(), 3.0);
        assert!(patch_score(&neighbors(&[])).is_err());
    }

    #[test]
    fn default_k_table() {
        assert_eq!(default_k_for_ratio(1.0), 100);
        assert_eq!(default_k_for_ratio(0.25), 25);
        assert_eq!(default_k_for_ratio(0.10), 10);
        assert_eq!(default_k_for_ratio(0.01), 5);
    }

    fn random_map(id: &str, h: usize, w: usize, d: usize, seed: u64) -> PatchFeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatchFeatureMap {
            image_id: id.into(),
            grid: Grid::new(h, w, d, (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        }
    }

    #[test]
    fn self_bank_excludes_self_match() {
        let map = random_map("a", 4, 4, 3, 1);
        let bank = assemble(std::slice::from_ref(&map)).unwrap();
        let cfg = ScorerConfig {
            k: 3,
            ..ScorerConfig::default()
        };
        let raw = score_feature_map(&bank, &map, &cfg).unwrap();
        assert!(raw.scores.iter().all(|&s| s > 0.0));
        let with_self = ScorerConfig { start_index: 1, k: 1, ..cfg };
        let raw = score_feature_map(&bank, &map, &with_self).unwrap();
        assert!(raw.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn patchcluster_k1_is_patchcore() {
        let map = random_map("a", 5, 4, 6, 2);
        let bank = assemble(&[random_map("b", 6, 6, 6, 3), map.clone()]).unwrap();
        let cluster = ScorerConfig {
            k: 1,
            ..ScorerConfig::default()
        };
        let core = ScorerConfig {
            scorer: Scorer::PatchCore,
            k: 17,
            ..ScorerConfig::default()
        };
        let a = score_feature_map(&bank, &map, &cluster).unwrap();
        let b = score_feature_map(&bank, &map, &core).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn planted_outlier_gets_max_score() {
        let mut map = random_map("a", 8, 8, 4, 4);
        for v in map.grid.values.iter_mut() {
            *v *= 0.05;
        }
        let at = (3 * 8 + 5) * 4;
        map.grid.values[at..at + 4].copy_from_slice(&[3.0, -3.0, 3.0, -3.0]);
        let bank = assemble(std::slice::from_ref(&map)).unwrap();
        let cfg = ScorerConfig {
            k: 8,
            ..ScorerConfig::default()
        };
        let raw = score_feature_map(&bank, &map, &cfg).unwrap();
        assert_eq!(raw.max_index, 3 * 8 + 5);
        assert_eq!(raw.max_query, vec![3.0, -3.0, 3.0, -3.0]);
    }

    #[test]
    fn reweight_symmetric_case_is_exact() {
        for b in [1usize, 2, 3, 7, 100] {
            let best = 2.375;
            let got = reweight(best, &vec![best; b], false);
            assert_eq!(got, (1.0 - 1.0 / b as f64) * best);
        }
    }

    #[test]
    fn reweight_single_neighbor_collapses() {
        assert_eq!(reweight(1.7, &[1.7], false), 0.0);
    }

    #[test]
    fn reweight_weight_below_one_and_clamped_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let best: f64 = rng.random_range(0.0..50.0);
            let d: Vec<f64> = (0..rng.random_range(1..10)).map(|_| rng.random_range(0.0..50.0)).collect();
            let raw = reweight(best, &d, false);
            assert!(raw.is_finite());
            if best > 0.0 {
                assert!(raw / best <= 1.0);
            }
            let clamped = reweight(best, &d, true);
            assert!((0.0..=best).contains(&clamped));
        }
        // an enormous gap stays finite instead of overflowing
        assert!(reweight(5000.0, &[1.0], false).is_finite());
    }

    #[test]
    fn config_validation() {
        let bank = MemoryBank::from_rows(1, vec![0.0, 1.0, 2.0]).unwrap();
        let cfg = ScorerConfig {
            k: 2,
            ..ScorerConfig::default()
        };
        assert!(cfg.validate(&bank).is_ok());
        let big = ScorerConfig { k: 3, ..cfg.clone() };
        assert!(matches!(big.validate(&bank), Err(Error::InsufficientBankSize { .. })));
        let sigma = ScorerConfig {
            gaussian_sigma: 0.0,
            ..cfg.clone()
        };
        assert!(sigma.validate(&bank).is_err());
        let b0 = ScorerConfig { b: Some(0), ..cfg };
        assert!(b0.validate(&bank).is_err());
    }
}
