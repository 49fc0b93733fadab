use std::collections::VecDeque;

use crate::io::Mask;

/// One 8-connected component of nonzero mask pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub id: usize,
    /// Flat row-major pixel indices, in discovery order.
    pub pixels: Vec<usize>,
}

impl Region {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Labels 8-connected components; ids follow row-major order of each
/// component's first pixel.
pub fn connected_components(mask: &Mask) -> Vec<Region> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if seen[start] || mask.data[start] == 0 {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (y, x) = (p / w, p % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if !seen[q] && mask.data[q] != 0 {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        regions.push(Region {
            id: regions.len(),
            pixels,
        });
    }
    regions
}
