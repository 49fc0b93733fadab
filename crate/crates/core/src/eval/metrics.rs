use super::regions::connected_components;
use crate::io::Mask;
use crate::scoring::ScoreMap;
use crate::{Error, Result};

pub const DEFAULT_FPR_LIMIT: f64 = 0.3;
pub const DEFAULT_PRO_THRESHOLDS: usize = 200;

/// Scores with binary labels (`true` = anomalous).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Self {
        LabeledScores { scores, labels }
    }
}

/// Area under the ROC curve as the normalized Mann-Whitney statistic; tied
/// scores count one half.
pub fn auroc(data: &LabeledScores) -> Result<f64> {
    if data.scores.len() != data.labels.len() {
        return Err(Error::InvalidShape(format!(
            "{} scores but {} labels",
            data.scores.len(),
            data.labels.len()
        )));
    }
    if data.scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("AUROC of NaN scores".into()));
    }
    let positives = data.labels.iter().filter(|&&l| l).count();
    let negatives = data.labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({positives} anomalous, {negatives} normal)"
        )));
    }
    let mut order: Vec<usize> = (0..data.scores.len()).collect();
    order.sort_unstable_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]));

    // Sum of midranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && data.scores[order[j + 1]] == data.scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let tied_positives = order[i..=j].iter().filter(|&&k| data.labels[k]).count();
        rank_sum += midrank * tied_positives as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn check_pairs(maps: &[ScoreMap], masks: &[Mask]) -> Result<()> {
    if maps.len() != masks.len() {
        return Err(Error::InvalidShape(format!("{} score maps but {} masks", maps.len(), masks.len())));
    }
    for (map, mask) in maps.iter().zip(masks) {
        if (map.height, map.width) != (mask.height, mask.width) || map.pixels.len() != mask.data.len() {
            return Err(Error::InvalidShape(format!(
                "score map {:?} is {}x{} but its mask is {}x{}",
                map.image_id, map.height, map.width, mask.height, mask.width
            )));
        }
    }
    Ok(())
}

/// AUROC over the pooled pixels of all maps.
pub fn pixel_auroc(maps: &[ScoreMap], masks: &[Mask]) -> Result<f64> {
    check_pairs(maps, masks)?;
    let mut data = LabeledScores::default();
    for (map, mask) in maps.iter().zip(masks) {
        data.scores.extend(map.pixels.iter().map(|&v| v as f64));
        data.labels.extend(mask.data.iter().map(|&v| v != 0));
    }
    auroc(&data)
}

/// Pixel scores paired with the global region index of each pixel.
struct Pooled {
    scores: Vec<f64>,
    region: Vec<Option<u32>>,
    region_sizes: Vec<usize>,
    normal: usize,
}

fn pool(maps: &[ScoreMap], masks: &[Mask]) -> Result<Pooled> {
    check_pairs(maps, masks)?;
    let total: usize = maps.iter().map(|m| m.pixels.len()).sum();
    let mut pooled = Pooled {
        scores: Vec::with_capacity(total),
        region: Vec::with_capacity(total),
        region_sizes: Vec::new(),
        normal: 0,
    };
    for (map, mask) in maps.iter().zip(masks) {
        let offset = pooled.region.len();
        pooled.scores.extend(map.pixels.iter().map(|&v| v as f64));
        pooled.region.resize(offset + map.pixels.len(), None);
        for region in connected_components(mask) {
            let id = pooled.region_sizes.len() as u32;
            pooled.region_sizes.push(region.len());
            for p in region.pixels {
                pooled.region[offset + p] = Some(id);
            }
        }
        pooled.normal += mask.data.iter().filter(|&&v| v == 0).count();
    }
    if pooled.region_sizes.is_empty() {
        return Err(Error::UndefinedMetric("PRO needs at least one anomalous region".into()));
    }
    if pooled.normal == 0 {
        return Err(Error::UndefinedMetric("PRO needs at least one normal pixel".into()));
    }
    if pooled.scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("PRO of NaN scores".into()));
    }
    Ok(pooled)
}

/// `count` thresholds at evenly spaced ranks of the sorted scores, from the
/// minimum to the maximum.
pub fn quantile_thresholds(scores: &[f64], count: usize) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    if sorted.is_empty() || count == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![sorted[0]];
    }
    let last = (sorted.len() - 1) as f64;
    (0..count)
        .map(|j| sorted[(j as f64 * last / (count - 1) as f64).round() as usize])
        .collect()
}

/// `(fpr, pro)` points for each threshold (a pixel is flagged when its score
/// is at least the threshold), ordered by decreasing threshold and preceded
/// by the `(0, 0)` anchor.
pub fn pro_curve(maps: &[ScoreMap], masks: &[Mask], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    let pooled = pool(maps, masks)?;
    Ok(curve(&pooled, thresholds))
}

fn curve(pooled: &Pooled, thresholds: &[f64]) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..pooled.scores.len()).collect();
    order.sort_unstable_by(|&a, &b| pooled.scores[b].total_cmp(&pooled.scores[a]));
    let mut levels = thresholds.to_vec();
    levels.sort_unstable_by(|a, b| b.total_cmp(a));

    let regions = pooled.region_sizes.len() as f64;
    let mut points = Vec::with_capacity(levels.len() + 1);
    points.push((0.0, 0.0));
    let (mut next, mut false_pos, mut overlap) = (0, 0usize, 0.0f64);
    for t in levels {
        while next < order.len() && pooled.scores[order[next]] >= t {
            match pooled.region[order[next]] {
                Some(r) => overlap += 1.0 / pooled.region_sizes[r as usize] as f64,
                None => false_pos += 1,
            }
            next += 1;
        }
        points.push((false_pos as f64 / pooled.normal as f64, overlap / regions));
    }
    points
}

/// Trapezoid area under `points` (sorted by x) up to `limit`, the last
/// segment cut by linear interpolation.
pub(crate) fn area_up_to(points: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for pair in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y) / 2.0;
            break;
        }
    }
    area
}

/// Per-region overlap integrated over FPR in `[0, fpr_limit]` at explicit
/// thresholds, normalized by `fpr_limit`.
pub fn pro_score_at(maps: &[ScoreMap], masks: &[Mask], fpr_limit: f64, thresholds: &[f64]) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::InvalidConfig(format!("fpr_limit must be in (0, 1], got {fpr_limit}")));
    }
    let pooled = pool(maps, masks)?;
    Ok(area_up_to(&curve(&pooled, thresholds), fpr_limit) / fpr_limit)
}

/// PRO with `thresholds` quantile-spaced levels over the pooled scores.
pub fn pro_score(maps: &[ScoreMap], masks: &[Mask], fpr_limit: f64, thresholds: usize) -> Result<f64> {
    if thresholds < 2 {
        return Err(Error::InvalidConfig("PRO needs at least two thresholds".into()));
    }
    let pooled: Vec<f64> = maps.iter().flat_map(|m| m.pixels.iter().map(|&v| v as f64)).collect();
    let levels = quantile_thresholds(&pooled, thresholds);
    pro_score_at(maps, masks, fpr_limit, &levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracle::{auroc_oracle, pro_oracle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labeled(scores: &[f64], labels: &[u8]) -> LabeledScores {
        LabeledScores::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect())
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&labeled(&[0.1, 0.9], &[0, 1])).unwrap(), 1.0);
        assert_eq!(auroc(&labeled(&[0.3; 6], &[0, 1, 0, 1, 1, 0])).unwrap(), 0.5);
        assert_eq!(auroc(&labeled(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])).unwrap(), 0.75);
        assert_eq!(auroc_oracle(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), 0.75);
    }

    #[test]
    fn auroc_single_class_is_undefined() {
        assert!(matches!(auroc(&labeled(&[0.1, 0.2], &[1, 1])), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auroc(&labeled(&[0.1, 0.2], &[0, 0])), Err(Error::UndefinedMetric(_))));
        assert!(auroc(&labeled(&[0.1], &[0, 1])).is_err());
    }

    #[test]
    fn auroc_matches_pairwise_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(2..60);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.5).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let got = auroc(&LabeledScores::new(scores.clone(), labels.clone())).unwrap();
            assert!((got - auroc_oracle(&scores, &labels)).abs() < 1e-9);
        }
    }

    fn map_from(pixels: Vec<f32>, h: usize, w: usize) -> ScoreMap {
        ScoreMap {
            image_id: "m".into(),
            height: h,
            width: w,
            pixels,
            image_score: 0.0,
            max_patch_score: 0.0,
        }
    }

    fn mask_from(bits: &[u8], h: usize, w: usize) -> Mask {
        Mask {
            height: h,
            width: w,
            data: bits.to_vec(),
        }
    }

    #[test]
    fn pixel_auroc_perfect_and_inverted() {
        let bits = [0, 1, 1, 0, 0, 0, 1, 0, 0];
        let mask = mask_from(&bits, 3, 3);
        let perfect = map_from(bits.iter().map(|&b| b as f32).collect(), 3, 3);
        let inverted = map_from(bits.iter().map(|&b| 1.0 - b as f32).collect(), 3, 3);
        assert_eq!(pixel_auroc(&[perfect], &[mask.clone()]).unwrap(), 1.0);
        assert_eq!(pixel_auroc(&[inverted], &[mask.clone()]).unwrap(), 0.0);
        assert!(pixel_auroc(&[map_from(vec![0.0; 4], 2, 2)], &[mask]).is_err());
    }

    #[test]
    fn pro_perfect_predictor_is_one() {
        let bits = [0, 1, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0];
        let mask = mask_from(&bits, 4, 4);
        let map = map_from(bits.iter().map(|&b| b as f32).collect(), 4, 4);
        assert_eq!(pro_score(&[map], &[mask], 0.3, 200).unwrap(), 1.0);
    }

    #[test]
    fn pro_constant_scores_match_oracle() {
        let bits = [0, 1, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0];
        let mask = mask_from(&bits, 4, 4);
        let map = map_from(vec![0.5; 16], 4, 4);
        let got = pro_score(&[map.clone()], &[mask.clone()], 0.3, 200).unwrap();
        // one operating point at FPR 1, PRO 1: the line from the origin
        // gives area 0.3^2 / 2, normalized by 0.3
        assert!((got - 0.15).abs() < 1e-12);
        let oracle = pro_oracle(&[map], &[mask], 0.3, None);
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn pro_hand_set_instance_matches_dense_sweep() {
        let bits = [0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0];
        let scores = [0.1, 0.2, 0.15, 0.05, 0.3, 0.9, 0.7, 0.25, 0.35, 0.6, 0.4, 0.12, 0.0, 0.22, 0.18, 0.08];
        let mask = mask_from(&bits, 4, 4);
        let map = map_from(scores.to_vec(), 4, 4);
        let every: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
        let got = pro_score_at(&[map.clone()], &[mask.clone()], 0.3, &every).unwrap();
        let oracle = pro_oracle(&[map], &[mask], 0.3, None);
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn pro_errors() {
        let map = map_from(vec![0.1; 4], 2, 2);
        assert!(matches!(
            pro_score(&[map.clone()], &[mask_from(&[0; 4], 2, 2)], 0.3, 200),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            pro_score(&[map.clone()], &[mask_from(&[1; 4], 2, 2)], 0.3, 200),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(pro_score(&[map], &[mask_from(&[1; 6], 2, 3)], 0.3, 200).is_err());
    }

    #[test]
    fn quantile_levels_span_range() {
        let scores: Vec<f64> = (0..1000).map(|v| v as f64).collect();
        let levels = quantile_thresholds(&scores, 200);
        assert_eq!(levels.len(), 200);
        assert_eq!(levels[0], 0.0);
        assert_eq!(levels[199], 999.0);
        assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn area_cuts_last_segment() {
        let pts = [(0.0, 0.0), (0.2, 1.0), (1.0, 1.0)];
        assert!((area_up_to(&pts, 0.3) - (0.1 + 0.1)).abs() < 1e-12);
        assert_eq!(area_up_to(&[(0.0, 0.0), (0.1, 1.0)], 0.3), 0.05);
    }
}
