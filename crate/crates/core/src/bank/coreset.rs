//! Greedy k-center coreset selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::knn::squared_distance;
use super::{BankMeta, MemoryBank};
use crate::{Error, Result};

const UPDATE_CHUNK: usize = 4096;

/// Farthest-first traversal over the rows of `points` (`dim` columns).
///
/// Starts from `start` and repeatedly picks the unselected row whose
/// distance to the selected set is largest, lower index on ties. Returns the
/// `m` selected rows in selection order.
pub fn greedy_selection(points: &[f32], dim: usize, m: usize, start: usize) -> Vec<usize> {
    let n = points.len() / dim;
    assert!(start < n, "start row {start} out of range for {n} rows");
    let m = m.min(n);
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    // Squared distance to the nearest selected row; selected rows hold -1.
    let mut nearest = vec![f64::INFINITY; n];
    // `approx * shrink` never exceeds the exact distance
    let shrink = 1.0 / (1.0 + 4.0 * (dim as f64 + 4.0) * f32::EPSILON as f64) * (1.0 - 1e-9);
    let mut selected = Vec::with_capacity(m);
    let mut next = start;
    while selected.len() < m {
        selected.push(next);
        nearest[next] = -1.0;
        if selected.len() == m {
            break;
        }
        let center = row(next);
        let best = nearest
            .par_chunks_mut(UPDATE_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let base = c * UPDATE_CHUNK;
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for (j, slot) in chunk.iter_mut().enumerate() {
                    if *slot < 0.0 {
                        continue;
                    }
                    let i = base + j;
                    // the exact distance is needed only when it might
                    // lower the slot
                    let approx = fast_squared_distance(center, row(i));
                    if !(approx.is_finite() && (approx as f64) * shrink - 1e-30 > *slot) {
                        let d = squared_distance(center, row(i));
                        if d < *slot {
                            *slot = d;
                        }
                    }
                    if *slot > best.0 {
                        best = (*slot, i);
                    }
                }
                best
            })
            .reduce(
                || (f64::NEG_INFINITY, usize::MAX),
                |a, b| {
                    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                        b
                    } else {
                        a
                    }
                },
            );
        next = best.1;
    }
    selected
}

/// Squared distance in `f32` with independent lanes. Within a relative
/// `2 (dim + 4) f32::EPSILON` of the exact value, barring underflow.
#[inline]
fn fast_squared_distance(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    let mut acc = [0f32; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut total: f32 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        total += (x - y) * (x - y);
    }
    total
}

/// Projects the rows of `points` onto `projection_dim` seeded Gaussian
/// directions (entries drawn from `N(0, 1 / projection_dim)`).
pub fn random_projection(points: &[f32], dim: usize, projection_dim: usize, seed: u64) -> Vec<f32> {
    let n = points.len() / dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, (1.0 / projection_dim as f32).sqrt()).expect("valid std dev");
    let matrix: Vec<f32> = (0..dim * projection_dim).map(|_| normal.sample(&mut rng)).collect();
    let mut out = vec![0f32; n * projection_dim];
    unsafe {
        matrixmultiply::sgemm(
            n,
            dim,
            projection_dim,
            1.0,
            points.as_ptr(),
            dim as isize,
            1,
            matrix.as_ptr(),
            projection_dim as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            projection_dim as isize,
            1,
        );
    }
    out
}

/// Reduces the bank to `max(1, round(ratio * N))` rows by greedy k-center
/// selection, starting at row `seed mod N`. With `projection_dim`, selection
/// distances are measured after a seeded random projection; returned rows are
/// always the original vectors, in selection order, with provenance.
pub fn coreset_subsample(
    bank: &MemoryBank,
    ratio: f64,
    seed: u64,
    projection_dim: Option<usize>,
) -> Result<MemoryBank> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("coreset ratio must be in (0, 1], got {ratio}")));
    }
    if projection_dim == Some(0) {
        return Err(Error::InvalidConfig("projection_dim must be positive".into()));
    }
    let n = bank.len();
    let m = ((ratio * n as f64).round() as usize).clamp(1, n);
    let meta = BankMeta {
        subsample_ratio: ratio,
        seed,
        projection_dim,
    };
    let start = (seed % n as u64) as usize;
    if m == n {
        let rows: Vec<usize> = (0..n).collect();
        return bank.select(&rows, meta);
    }
    let rows = match projection_dim {
        Some(p) => {
            let projected = random_projection(bank.features(), bank.dim(), p, seed);
            greedy_selection(&projected, p, m, start)
        }
        None => greedy_selection(bank.features(), bank.dim(), m, start),
    };
    bank.select(&rows, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracle::greedy_oracle;
    use rand::Rng;
    use std::collections::BTreeSet;

    #[test]
    fn full_ratio_keeps_every_row() {
        let bank = MemoryBank::from_rows(2, (0..20).map(|v| v as f32).collect()).unwrap();
        let out = coreset_subsample(&bank, 1.0, 3, None).unwrap();
        let rows: BTreeSet<Vec<u32>> = (0..out.len()).map(|i| out.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        let all: BTreeSet<Vec<u32>> = (0..bank.len()).map(|i| bank.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(rows, all);
        assert_eq!(out.meta.subsample_ratio, 1.0);
    }

    #[test]
    fn farthest_point_is_taken_second() {
        let bank = MemoryBank::from_rows(1, vec![0.0, 1.0, 10.0]).unwrap();
        let out = coreset_subsample(&bank, 2.0 / 3.0, 0, None).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.row(0), &[0.0]);
        assert_eq!(out.row(1), &[10.0]);
        assert_eq!(out.origin(1).w, 2);
    }

    #[test]
    fn matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<f32> = (0..200 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        for seed in [0u64, 17, 199, 1234] {
            let start = (seed % 200) as usize;
            assert_eq!(
                greedy_selection(&points, 8, 20, start),
                greedy_oracle(&points, 8, 20, seed)
            );
        }
    }

    #[test]
    fn duplicate_points_do_not_reselect() {
        let points = vec![1.0f32; 5];
        assert_eq!(greedy_selection(&points, 1, 5, 2), vec![2, 0, 1, 3, 4]);
    }

    #[test]
    fn bad_ratio_rejected() {
        let bank = MemoryBank::from_rows(1, vec![0.0, 1.0]).unwrap();
        assert!(coreset_subsample(&bank, 0.0, 0, None).is_err());
        assert!(coreset_subsample(&bank, 1.5, 0, None).is_err());
        assert!(coreset_subsample(&bank, 0.5, 0, Some(0)).is_err());
        assert_eq!(coreset_subsample(&bank, 0.01, 0, None).unwrap().len(), 1);
    }

    #[test]
    fn projection_returns_original_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<f32> = (0..100 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bank = MemoryBank::from_rows(16, rows).unwrap();
        let out = coreset_subsample(&bank, 0.1, 42, Some(4)).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(out.dim(), 16);
        for i in 0..out.len() {
            let source = out.origin(i).w;
            assert_eq!(out.row(i), bank.row(source));
        }
        let again = coreset_subsample(&bank, 0.1, 42, Some(4)).unwrap();
        assert_eq!(again.features(), out.features());
    }

    /// Largest distance from any row to its nearest selected row.
    fn coverage_radius(points: &[f32], dim: usize, selected: &[usize]) -> f64 {
        let n = points.len() / dim;
        (0..n)
            .map(|i| {
                selected
                    .iter()
                    .map(|&s| squared_distance(&points[i * dim..(i + 1) * dim], &points[s * dim..(s + 1) * dim]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn coverage_radius_shrinks_with_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let points: Vec<f32> = (0..300 * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut previous = f64::INFINITY;
        for m in [1, 2, 5, 10, 30, 100, 300] {
            let radius = coverage_radius(&points, 3, &greedy_selection(&points, 3, m, 4));
            assert!(radius <= previous);
            previous = radius;
        }
        assert_eq!(previous, 0.0);
    }
}
