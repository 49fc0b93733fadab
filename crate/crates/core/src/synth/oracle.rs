//! Quadratic-time reference implementations. They define the semantics the
//! fast paths are tested against and deliberately share no code with them.

use crate::bank::NeighborSet;
use crate::io::Mask;
use crate::scoring::ScoreMap;

fn rows(points: &[f32], dim: usize) -> impl Iterator<Item = &[f32]> {
    points.chunks_exact(dim)
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut total = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        total += d * d;
    }
    total
}

/// Sorts every row by exact distance (then index), drops the first
/// `start_index - 1` and keeps `k`.
pub fn knn_oracle(points: &[f32], dim: usize, query: &[f32], k: usize, start_index: usize) -> NeighborSet {
    let mut all: Vec<(f64, usize)> = rows(points, dim).enumerate().map(|(i, r)| (sq_dist(query, r), i)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let kept = &all[start_index - 1..start_index - 1 + k];
    NeighborSet {
        distances: kept.iter().map(|&(d, _)| d.sqrt() as f32).collect(),
        indices: kept.iter().map(|&(_, i)| i).collect(),
        start_index,
    }
}

/// Farthest-first traversal recomputing every minimum distance from scratch.
pub fn greedy_oracle(points: &[f32], dim: usize, m: usize, seed: u64) -> Vec<usize> {
    let all: Vec<&[f32]> = rows(points, dim).collect();
    let n = all.len();
    let mut chosen = vec![(seed % n as u64) as usize];
    while chosen.len() < m.min(n) {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let nearest = chosen.iter().map(|&c| sq_dist(all[i], all[c])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(d, _)| nearest > d) {
                best = Some((nearest, i));
            }
        }
        chosen.push(best.unwrap().1);
    }
    chosen
}

/// Fraction of (anomalous, normal) pairs ordered correctly, ties counting
/// one half.
pub fn auroc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &p) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &q) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Number of 8-connected components of nonzero pixels, by union-find.
pub fn component_count_oracle(mask: &Mask) -> usize {
    let (h, w) = (mask.height, mask.width);
    let mut parent: Vec<usize> = (0..h * w).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for y in 0..h {
        for x in 0..w {
            if mask.data[y * w + x] == 0 {
                continue;
            }
            for (dy, dx) in [(0i64, 1i64), (1, -1), (1, 0), (1, 1)] {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if mask.data[q] != 0 {
                    let (a, b) = (find(&mut parent, y * w + x), find(&mut parent, q));
                    parent[a] = b;
                }
            }
        }
    }
    (0..h * w).filter(|&p| mask.data[p] != 0 && find(&mut parent, p) == p).count()
}

/// Labels each pixel with its component root (or `None`).
fn component_labels(mask: &Mask) -> Vec<Option<usize>> {
    let (h, w) = (mask.height, mask.width);
    let mut label: Vec<Option<usize>> = vec![None; h * w];
    // repeated relaxation: each pixel takes the smallest label among its
    // 8-neighbors until nothing changes
    for p in 0..h * w {
        if mask.data[p] != 0 {
            label[p] = Some(p);
        }
    }
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let Some(mut l) = label[y * w + x] else { continue };
                for ny in y.saturating_sub(1)..(y + 2).min(h) {
                    for nx in x.saturating_sub(1)..(x + 2).min(w) {
                        if let Some(o) = label[ny * w + nx] {
                            l = l.min(o);
                        }
                    }
                }
                if label[y * w + x] != Some(l) {
                    label[y * w + x] = Some(l);
                    changed = true;
                }
            }
        }
        if !changed {
            return label;
        }
    }
}

/// PRO by direct evaluation at every threshold. With `thresholds = None`
/// every distinct pooled score is a threshold. Each operating point is
/// computed from scratch; the curve starts at the origin and is integrated
/// by trapezoids up to `fpr_limit`.
pub fn pro_oracle(maps: &[ScoreMap], masks: &[Mask], fpr_limit: f64, thresholds: Option<&[f64]>) -> f64 {
    let mut levels: Vec<f64> = match thresholds {
        Some(t) => t.to_vec(),
        None => maps.iter().flat_map(|m| m.pixels.iter().map(|&v| v as f64)).collect(),
    };
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    levels.dedup();

    let labels: Vec<Vec<Option<usize>>> = masks.iter().map(component_labels).collect();
    let mut points = vec![(0.0, 0.0)];
    for &t in &levels {
        let (mut fp, mut normal) = (0usize, 0usize);
        let mut overlaps = Vec::new();
        for (map, lab) in maps.iter().zip(&labels) {
            for (p, l) in lab.iter().enumerate() {
                if l.is_none() {
                    normal += 1;
                    if map.pixels[p] as f64 >= t {
                        fp += 1;
                    }
                }
            }
            let mut roots: Vec<usize> = lab.iter().flatten().copied().collect();
            roots.sort_unstable();
            roots.dedup();
            for r in roots {
                let members: Vec<usize> = (0..lab.len()).filter(|&p| lab[p] == Some(r)).collect();
                let hit = members.iter().filter(|&&p| map.pixels[p] as f64 >= t).count();
                overlaps.push(hit as f64 / members.len() as f64);
            }
        }
        points.push((fp as f64 / normal as f64, overlaps.iter().sum::<f64>() / overlaps.len() as f64));
    }

    let mut area = 0.0;
    for i in 1..points.len() {
        let (x0, y0) = points[i - 1];
        let (x1, y1) = points[i];
        if x0 >= fpr_limit {
            break;
        }
        let (xe, ye) = if x1 > fpr_limit {
            (fpr_limit, y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0))
        } else {
            (x1, y1)
        };
        area += 0.5 * (xe - x0) * (y0 + ye);
    }
    area / fpr_limit
}

/// Brute-force local outlier factor of `query` against the rows of
/// `points`. Row neighborhoods exclude the row itself.
pub fn lof_oracle(points: &[f32], dim: usize, query: &[f32], k: usize, start_index: usize) -> f64 {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let hoods: Vec<NeighborSet> = (0..n).map(|i| knn_oracle(points, dim, row(i), k, 2)).collect();
    let kdist = |o: usize| *hoods[o].distances.last().unwrap() as f64;
    let reach = |hood: &NeighborSet| {
        hood.indices
            .iter()
            .zip(&hood.distances)
            .map(|(&o, &d)| kdist(o).max(d as f64))
            .sum::<f64>()
            / k as f64
    };
    let own = knn_oracle(points, dim, query, k, start_index);
    let q_reach = reach(&own);
    let around: Vec<f64> = own.indices.iter().map(|&o| reach(&hoods[o])).collect();
    if q_reach == 0.0 && around.iter().all(|&r| r == 0.0) {
        return 1.0;
    }
    let lrd = |r: f64| 1.0 / (r + 1e-10);
    around.iter().map(|&r| lrd(r)).sum::<f64>() / k as f64 / lrd(q_reach)
}

/// Mean distance to the `k` neighbors starting at rank `start_index`.
pub fn patch_score_oracle(points: &[f32], dim: usize, query: &[f32], k: usize, start_index: usize) -> f64 {
    let mut d: Vec<f64> = rows(points, dim).map(|r| sq_dist(query, r).sqrt()).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d[start_index - 1..start_index - 1 + k].iter().sum::<f64>() / k as f64
}

/// Reweighted image score of an image given as `patches` (row-major, `dim`
/// columns), evaluated literally without any overflow guard.
pub fn image_score_oracle(points: &[f32], dim: usize, patches: &[f32], k: usize, start_index: usize, b: usize) -> f64 {
    let scores: Vec<f64> = rows(patches, dim)
        .map(|p| patch_score_oracle(points, dim, p, k, start_index))
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let q = &patches[best * dim..(best + 1) * dim];
    let f_star = knn_oracle(points, dim, q, 1, start_index).indices[0];
    let hood = knn_oracle(points, dim, &points[f_star * dim..(f_star + 1) * dim], b, 1);
    let denom: f64 = hood
        .indices
        .iter()
        .map(|&j| sq_dist(q, &points[j * dim..(j + 1) * dim]).sqrt().exp())
        .sum();
    (1.0 - scores[best].exp() / denom) * scores[best]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_oracle_hand_example() {
        let pts = [0.0, 0.0, 1.0, 0.0, 3.0, 0.0];
        assert_eq!(knn_oracle(&pts, 2, &[0.0, 0.0], 2, 2).distances, vec![1.0, 3.0]);
    }

    #[test]
    fn greedy_oracle_hand_example() {
        assert_eq!(greedy_oracle(&[0.0, 1.0, 10.0], 1, 2, 0), vec![0, 2]);
    }

    #[test]
    fn component_oracles_agree() {
        let mask = Mask { height: 3, width: 4, data: vec![1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 1] };
        assert_eq!(component_count_oracle(&mask), 3);
        let labels = component_labels(&mask);
        let mut roots: Vec<usize> = labels.iter().flatten().copied().collect();
        roots.sort_unstable();
        roots.dedup();
        assert_eq!(roots.len(), 3);
    }

    #[test]
    fn symmetric_image_score() {
        // two bank rows equidistant from the query: weight (1 - 1/2)
        let pts = [1.0f32, 0.0, -1.0, 0.0];
        let got = image_score_oracle(&pts, 2, &[0.0, 0.0], 1, 1, 2);
        assert!((got - 0.5).abs() < 1e-12);
    }
}
