//! Exact k-nearest-neighbor search over the memory bank.
//!
//! Candidates are screened with the expansion `|q|^2 + |b|^2 - 2 q.b`, the dot
//! products coming from a blocked `f32` GEMM. Each screened squared distance
//! carries a rigorous rounding bound, so every row that could belong to the
//! answer survives screening. Survivors are re-ranked with the direct
//! `sum((q - b)^2)` accumulated in `f64`, which is the distance of record.
//! Ties are broken by lower row index.

use rayon::prelude::*;

use super::{sq_norm, MemoryBank};
use crate::{Error, Result};

const QUERY_BLOCK: usize = 64;
const ROW_BLOCK: usize = 2048;

/// The `K` neighbors of one query after skipping the first
/// `start_index - 1` entries of the sorted distance list.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    /// Euclidean distances, nondecreasing.
    pub distances: Vec<f32>,
    /// Bank row of each distance.
    pub indices: Vec<usize>,
    /// 1-based rank of the first returned neighbor.
    pub start_index: usize,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// The first `k` neighbors, which equal a fresh query with `k`.
    pub fn truncated(&self, k: usize) -> NeighborSet {
        let k = k.min(self.len());
        NeighborSet {
            distances: self.distances[..k].to_vec(),
            indices: self.indices[..k].to_vec(),
            start_index: self.start_index,
        }
    }
}

/// Direct squared Euclidean distance, accumulated in `f64`.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn check_request(bank: &MemoryBank, k: usize, start_index: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if start_index == 0 {
        return Err(Error::InvalidConfig("start_index must be at least 1".into()));
    }
    let needed = start_index - 1 + k;
    if needed > bank.len() {
        return Err(Error::InsufficientBankSize {
            needed,
            k,
            start_index,
            available: bank.len(),
        });
    }
    Ok(())
}

pub fn query_knn(bank: &MemoryBank, query: &[f32], k: usize, start_index: usize) -> Result<NeighborSet> {
    let mut out = query_knn_batch(bank, query, k, start_index)?;
    out.pop()
        .ok_or_else(|| Error::InvalidShape("query must have one vector".into()))
}

/// Answers `queries.len() / dim` queries laid out row-major. Equivalent to
/// calling [`query_knn`] once per query.
pub fn query_knn_batch(
    bank: &MemoryBank,
    queries: &[f32],
    k: usize,
    start_index: usize,
) -> Result<Vec<NeighborSet>> {
    check_request(bank, k, start_index)?;
    let dim = bank.dim();
    if !queries.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: queries.len() % dim,
        });
    }
    if queries.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidShape("query contains non-finite values".into()));
    }
    let bounds = ErrorBound::new(dim);
    let norms: Vec<f64> = bank.sq_norms().iter().map(|n| n.sqrt()).collect();
    let fast = FastRows::new(bank, &norms, &bounds);
    let mut out: Vec<NeighborSet> = queries
        .par_chunks(QUERY_BLOCK * dim)
        .flat_map_iter(|block| search_block(bank, &norms, &bounds, fast.as_ref(), block, k, start_index))
        .collect();
    out.shrink_to_fit();
    Ok(out)
}

/// Bound on `|screened - exact|` for squared distances.
struct ErrorBound {
    /// Relative bound of an `f32` dot product of length `dim`, doubled.
    dot: f64,
    /// Slack for `f64` rounding in the expansion and in the exact distance.
    slack: f64,
}

impl ErrorBound {
    fn new(dim: usize) -> Self {
        let n = dim as f64;
        ErrorBound {
            dot: 2.0 * n * f32::EPSILON as f64,
            slack: (n + 16.0) * f64::EPSILON,
        }
    }

    #[inline]
    fn margin(&self, q_norm: f64, q_sq: f64, b_norm: f64, b_sq: f64) -> f64 {
        2.0 * self.dot * q_norm * b_norm + self.slack * (q_sq + b_sq) + 1e-30
    }
}

/// Squared norms above this skip the `f32` prefilter.
const FAST_LIMIT: f64 = 1e30;
/// Covers `f32` rounding of the prefilter expression on top of the `f64`
/// slack.
const FAST_SLACK: f32 = 24.0 * f32::EPSILON;

/// Per-row terms of the `f32` prefilter, inflated so that the prefilter's
/// lower bound is at most the `f64` one.
struct FastRows {
    b_sq: Vec<f32>,
    b_coef: Vec<f32>,
}

impl FastRows {
    fn new(bank: &MemoryBank, norms: &[f64], bounds: &ErrorBound) -> Option<Self> {
        if bank.sq_norms().iter().any(|&s| s >= FAST_LIMIT) || bounds.slack > 8.0 * f32::EPSILON as f64 {
            return None;
        }
        Some(FastRows {
            b_sq: bank.sq_norms().iter().map(|&s| s as f32).collect(),
            b_coef: norms.iter().map(|&n| (2.0 * bounds.dot * n * (1.0 + 1e-4)) as f32).collect(),
        })
    }
}

#[inline]
fn round_up(cutoff: f64) -> f32 {
    let c = cutoff as f32;
    if (c as f64) < cutoff {
        c.next_up()
    } else {
        c
    }
}

/// Running screen for one query. Candidates accumulate unsorted; every so
/// often the `m`-th smallest upper bound becomes the cutoff and rows whose
/// lower bound exceeds it are dropped, since `m` rows are certainly closer.
struct Screen {
    m: usize,
    cutoff: f64,
    limit: usize,
    candidates: Vec<(f64, f64, u32)>,
    scratch: Vec<f64>,
}

impl Screen {
    fn new(m: usize) -> Self {
        Screen {
            m,
            cutoff: f64::INFINITY,
            limit: m + 64,
            candidates: Vec::with_capacity(2 * m + 256),
            scratch: Vec::new(),
        }
    }

    #[inline]
    fn offer(&mut self, row: u32, lower: f64, upper: f64) {
        self.candidates.push((lower, upper, row));
        if self.candidates.len() >= self.limit {
            self.tighten();
        }
    }

    fn tighten(&mut self) {
        if self.candidates.len() >= self.m {
            self.scratch.clear();
            self.scratch.extend(self.candidates.iter().map(|c| c.1));
            let (_, nth, _) = self.scratch.select_nth_unstable_by(self.m - 1, f64::total_cmp);
            self.cutoff = self.cutoff.min(*nth);
        }
        let cutoff = self.cutoff;
        self.candidates.retain(|c| c.0 <= cutoff);
        self.limit = self.candidates.len() + (self.m / 2).max(64);
    }
}

fn search_block(
    bank: &MemoryBank,
    norms: &[f64],
    bounds: &ErrorBound,
    fast: Option<&FastRows>,
    block: &[f32],
    k: usize,
    start_index: usize,
) -> Vec<NeighborSet> {
    let dim = bank.dim();
    let nq = block.len() / dim;
    let m = start_index - 1 + k;
    let q_sq: Vec<f64> = block.chunks_exact(dim).map(sq_norm).collect();
    let q_norm: Vec<f64> = q_sq.iter().map(|s| s.sqrt()).collect();
    let mut screens: Vec<Screen> = (0..nq).map(|_| Screen::new(m)).collect();
    let mut dots = vec![0f32; nq * ROW_BLOCK];
    let mut lowers = vec![0f32; ROW_BLOCK];
    let mut survivors = vec![0u32; ROW_BLOCK];
    let n = bank.len();

    for row0 in (0..n).step_by(ROW_BLOCK) {
        let rows = ROW_BLOCK.min(n - row0);
        let chunk = &bank.features()[row0 * dim..(row0 + rows) * dim];
        // dots[q, r] = <block[q], chunk[r]>, chunk read as a dim x rows matrix.
        unsafe {
            matrixmultiply::sgemm(
                nq,
                dim,
                rows,
                1.0,
                block.as_ptr(),
                dim as isize,
                1,
                chunk.as_ptr(),
                1,
                dim as isize,
                0.0,
                dots.as_mut_ptr(),
                rows as isize,
                1,
            );
        }
        let b_sq = &bank.sq_norms()[row0..row0 + rows];
        let b_norm = &norms[row0..row0 + rows];
        let fast_rows = fast.as_ref().map(|f| (&f.b_sq[row0..row0 + rows], &f.b_coef[row0..row0 + rows]));
        for (qi, screen) in screens.iter_mut().enumerate() {
            let (qs, qn) = (q_sq[qi], q_norm[qi]);
            let row_dots = &dots[qi * rows..(qi + 1) * rows];
            let offer = |screen: &mut Screen, r: usize| {
                let margin = bounds.margin(qn, qs, b_norm[r], b_sq[r]);
                let lower = qs + b_sq[r] - 2.0 * row_dots[r] as f64 - margin;
                if lower <= screen.cutoff {
                    screen.offer((row0 + r) as u32, lower, lower + 2.0 * margin);
                }
            };
            match (fast_rows, qs < FAST_LIMIT) {
                (Some((fb_sq, fb_coef)), true) => {
                    // f32 prefilter whose bound never exceeds the f64 one.
                    let (qs32, qn32) = (qs as f32, qn as f32);
                    for r in 0..rows {
                        let margin = qn32 * fb_coef[r] + FAST_SLACK * (qs32 + fb_sq[r]) + 1e-30;
                        lowers[r] = qs32 + fb_sq[r] - 2.0 * row_dots[r] - margin;
                    }
                    let cut = round_up(screen.cutoff);
                    let mut passed = 0;
                    for (r, &lower) in lowers[..rows].iter().enumerate() {
                        // branch-free compaction of the surviving rows
                        survivors[passed] = r as u32;
                        passed += (lower <= cut) as usize;
                    }
                    for &r in &survivors[..passed] {
                        offer(screen, r as usize);
                    }
                }
                _ => {
                    for r in 0..rows {
                        offer(screen, r);
                    }
                }
            }
        }
    }

    screens
        .into_iter()
        .zip(block.chunks_exact(dim))
        .map(|(mut screen, query)| {
            screen.tighten();
            let mut exact: Vec<(f64, usize)> = screen
                .candidates
                .iter()
                .map(|&(_, _, row)| (squared_distance(query, bank.row(row as usize)), row as usize))
                .collect();
            exact.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let picked = &exact[start_index - 1..m];
            NeighborSet {
                distances: picked.iter().map(|&(d, _)| d.sqrt() as f32).collect(),
                indices: picked.iter().map(|&(_, i)| i).collect(),
                start_index,
            }
        })
        .collect()
}
