//! Local outlier factor against the memory bank.
//!
//! Bank rows use their own K-neighborhood with the row itself excluded.
//! `lrd(p) = 1 / (mean_{o in N(p)} max(kdist(o), d(p, o)) + 1e-10)` and
//! `LoF(q) = mean_{o in N(q)} lrd(o) / lrd(q)`. A query whose neighborhood
//! and neighbors' neighborhoods are all coincident scores exactly 1.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use crate::bank::{query_knn, query_knn_batch, MemoryBank, NeighborSet};
use crate::{Error, Result};

const LRD_EPS: f64 = 1e-10;

/// Mean reachability distance of a neighborhood.
fn mean_reach(neighbors: &NeighborSet, k_distance: impl Fn(usize) -> f64) -> f64 {
    let total: f64 = neighbors
        .indices
        .iter()
        .zip(&neighbors.distances)
        .map(|(&o, &d)| k_distance(o).max(d as f64))
        .sum();
    total / neighbors.len() as f64
}

fn lof_value(query_reach: f64, neighbor_reach: &[f64]) -> f64 {
    if query_reach == 0.0 && neighbor_reach.iter().all(|&r| r == 0.0) {
        return 1.0;
    }
    let lrd_q = 1.0 / (query_reach + LRD_EPS);
    let mean_lrd: f64 = neighbor_reach.iter().map(|r| 1.0 / (r + LRD_EPS)).sum::<f64>() / neighbor_reach.len() as f64;
    mean_lrd / lrd_q
}

/// Per-row k-distance and mean reachability distance of a bank.
#[derive(Debug, Clone)]
pub struct LofTable {
    k: usize,
    k_distance: Vec<f64>,
    mean_reach: Vec<f64>,
}

impl LofTable {
    pub fn build(bank: &MemoryBank, k: usize) -> Result<Self> {
        let neighborhoods = query_knn_batch(bank, bank.features(), k, 2)?;
        let k_distance: Vec<f64> = neighborhoods
            .iter()
            .map(|n| *n.distances.last().expect("k >= 1") as f64)
            .collect();
        let mean_reach = neighborhoods
            .iter()
            .map(|n| mean_reach(n, |o| k_distance[o]))
            .collect();
        Ok(LofTable {
            k,
            k_distance,
            mean_reach,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// LoF of a query given its neighbor set in the same bank.
    pub fn score(&self, neighbors: &NeighborSet) -> f64 {
        let query = mean_reach(neighbors, |o| self.k_distance[o]);
        let around: Vec<f64> = neighbors.indices.iter().map(|&o| self.mean_reach[o]).collect();
        lof_value(query, &around)
    }
}

/// LoF of a single query, computed on demand without a precomputed table.
pub fn lof_score(bank: &MemoryBank, query: &[f32], k: usize, start_index: usize) -> Result<f64> {
    if k + 1 > bank.len() {
        return Err(Error::InsufficientBankSize {
            needed: k + 1,
            k,
            start_index: 2,
            available: bank.len(),
        });
    }
    let mut hoods: HashMap<usize, NeighborSet> = HashMap::new();
    let mut hood = |row: usize| -> Result<NeighborSet> {
        if let Some(n) = hoods.get(&row) {
            return Ok(n.clone());
        }
        let n = query_knn(bank, bank.row(row), k, 2)?;
        hoods.insert(row, n.clone());
        Ok(n)
    };
    let own = query_knn(bank, query, k, start_index)?;
    let mut k_distance: HashMap<usize, f64> = HashMap::new();
    let mut around = Vec::with_capacity(k);
    for &o in &own.indices {
        let n_o = hood(o)?;
        for &p in n_o.indices.iter().chain(std::iter::once(&o)) {
            if let Entry::Vacant(slot) = k_distance.entry(p) {
                slot.insert(*hood(p)?.distances.last().expect("k >= 1") as f64);
            }
        }
        around.push(mean_reach(&n_o, |p| k_distance[&p]));
    }
    let query_reach = mean_reach(&own, |o| k_distance[&o]);
    Ok(lof_value(query_reach, &around))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracle::lof_oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coincident_points_score_one() {
        let bank = MemoryBank::from_rows(2, vec![1.0; 12]).unwrap();
        assert_eq!(lof_score(&bank, &[1.0, 1.0], 3, 2).unwrap(), 1.0);
        let table = LofTable::build(&bank, 3).unwrap();
        let n = query_knn(&bank, &[1.0, 1.0], 3, 2).unwrap();
        assert_eq!(table.score(&n), 1.0);
    }

    #[test]
    fn lattice_interior_is_inlier() {
        let rows: Vec<f32> = (0..21).map(|v| v as f32).collect();
        let bank = MemoryBank::from_rows(1, rows.clone()).unwrap();
        let got = lof_score(&bank, &[10.0], 2, 2).unwrap();
        assert!((got - 1.0).abs() < 1e-6, "{got}");
        let oracle = lof_oracle(&rows, 1, &[10.0], 2, 2);
        assert!((got - oracle).abs() < 1e-9);
    }

    #[test]
    fn planted_outlier_stands_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rows: Vec<f32> = (0..60).map(|_| rng.random_range(-0.5..0.5)).collect();
        rows.extend_from_slice(&[8.0, 8.0]);
        let bank = MemoryBank::from_rows(2, rows.clone()).unwrap();
        let got = lof_score(&bank, &[8.0, 8.0], 5, 2).unwrap();
        assert!(got > 2.0, "{got}");
        assert!((got - lof_oracle(&rows, 2, &[8.0, 8.0], 5, 2)).abs() < 1e-6 * got);
    }

    #[test]
    fn table_matches_on_demand() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<f32> = (0..150 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bank = MemoryBank::from_rows(3, rows.clone()).unwrap();
        let table = LofTable::build(&bank, 6).unwrap();
        for i in [0usize, 17, 99, 149] {
            let q = bank.row(i);
            let n = query_knn(&bank, q, 6, 2).unwrap();
            let a = table.score(&n);
            let b = lof_score(&bank, q, 6, 2).unwrap();
            assert_eq!(a, b);
            let c = lof_oracle(&rows, 3, q, 6, 2);
            assert!((a - c).abs() <= 1e-6 * c.abs());
        }
    }
}
