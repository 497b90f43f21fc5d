//! Two-subiteration thinning (Guo-Hall and Zhang-Suen).
//!
//! Each subiteration collects the pixels matching the algorithm's deletion
//! rule on the current image, then removes them one by one, skipping any
//! pixel that is no longer simple at the time of removal. The guard keeps the
//! 8-connected component count intact in the configurations where the plain
//! parallel rules are known to split or erase shapes (2x2 squares, two-pixel
//! diagonals). After the fixpoint, any surviving 2x2 block is broken by
//! removing one of its simple pixels, or, when all four are cut pixels, by
//! moving one of them to a neighbouring pixel of the input mask.

use serde::{Deserialize, Serialize};

use crate::exec::{self, Parallelism};
use crate::mask::{BinaryMask, NEIGHBORS8};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinningAlgorithm {
    #[default]
    GuoHall,
    ZhangSuen,
}

/// Neighbourhood bits p2..p9: N, NE, E, SE, S, SW, W, NW.
#[derive(Debug, Clone, Copy)]
struct Ring([bool; 8]);

impl Ring {
    fn of(m: &BinaryMask, x: i64, y: i64) -> Ring {
        Ring([
            m.get(x, y + 1),
            m.get(x + 1, y + 1),
            m.get(x + 1, y),
            m.get(x + 1, y - 1),
            m.get(x, y - 1),
            m.get(x - 1, y - 1),
            m.get(x - 1, y),
            m.get(x - 1, y + 1),
        ])
    }

    fn p(&self, k: usize) -> bool {
        self.0[k - 2]
    }

    fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    /// Number of 0 -> 1 transitions around p2, p3, ..., p9, p2.
    fn transitions(&self) -> usize {
        (0..8).filter(|&i| !self.0[i] && self.0[(i + 1) % 8]).count()
    }

    /// Yokoi connectivity number for 8-connected foreground.
    fn yokoi8(&self) -> usize {
        // x1..x8 counter-clockwise from east: E, NE, N, NW, W, SW, S, SE
        let x = [
            self.p(4),
            self.p(3),
            self.p(2),
            self.p(9),
            self.p(8),
            self.p(7),
            self.p(6),
            self.p(5),
        ];
        let inv = |i: usize| !x[i % 8] as usize;
        [0, 2, 4, 6]
            .iter()
            .map(|&k| inv(k) - inv(k) * inv(k + 1) * inv(k + 2))
            .sum()
    }

    fn is_simple(&self) -> bool {
        self.yokoi8() == 1
    }

    fn guo_hall_deletable(&self, first: bool) -> bool {
        let p = |k| self.p(k) as usize;
        let n = |k| !self.p(k) as usize;
        let c = (n(2) & (p(3) | p(4))) + (n(4) & (p(5) | p(6))) + (n(6) & (p(7) | p(8))) + (n(8) & (p(9) | p(2)));
        let n1 = (p(9) | p(2)) + (p(3) | p(4)) + (p(5) | p(6)) + (p(7) | p(8));
        let n2 = (p(2) | p(3)) + (p(4) | p(5)) + (p(6) | p(7)) + (p(8) | p(9));
        let nn = n1.min(n2);
        let m = if first {
            (p(6) | p(7) | n(9)) & p(8)
        } else {
            (p(2) | p(3) | n(5)) & p(4)
        };
        c == 1 && (2..=3).contains(&nn) && m == 0
    }

    fn zhang_suen_deletable(&self, first: bool) -> bool {
        let b = self.count();
        if !(2..=6).contains(&b) || self.transitions() != 1 {
            return false;
        }
        let p = |k| self.p(k);
        if first {
            !(p(2) && p(4) && p(6)) && !(p(4) && p(6) && p(8))
        } else {
            !(p(2) && p(4) && p(8)) && !(p(2) && p(6) && p(8))
        }
    }
}

fn candidates(m: &BinaryMask, algo: ThinningAlgorithm, first: bool, par: Parallelism) -> Vec<(usize, usize)> {
    let rows = exec::map_indexed(par, m.height, |y| {
        let mut out = Vec::new();
        for x in 0..m.width {
            if !m.data[y * m.width + x] {
                continue;
            }
            let ring = Ring::of(m, x as i64, y as i64);
            let hit = match algo {
                ThinningAlgorithm::GuoHall => ring.guo_hall_deletable(first),
                ThinningAlgorithm::ZhangSuen => ring.zhang_suen_deletable(first),
            };
            if hit {
                out.push((x, y));
            }
        }
        out
    });
    rows.into_iter().flatten().collect()
}

fn delete_guarded(m: &mut BinaryMask, pixels: &[(usize, usize)]) -> bool {
    let mut changed = false;
    for &(x, y) in pixels {
        if Ring::of(m, x as i64, y as i64).is_simple() {
            m.set(x, y, false);
            changed = true;
        }
    }
    changed
}

/// Would setting `(x, y)` complete a 2x2 block?
fn completes_block(m: &BinaryMask, x: i64, y: i64) -> bool {
    [(-1, -1), (0, -1), (-1, 0), (0, 0)].iter().any(|(ox, oy)| {
        let (bx, by) = (x + ox, y + oy);
        [(0, 0), (1, 0), (0, 1), (1, 1)]
            .iter()
            .all(|(dx, dy)| (bx + dx, by + dy) == (x, y) || m.get(bx + dx, by + dy))
    })
}

/// Moves block pixel `p` to a background neighbour `q` of the input mask.
/// Adding a simple `q` and then removing a simple `p` leaves the topology
/// unchanged, and `q` must not close another 2x2 block.
fn shift_pixel(m: &mut BinaryMask, input: &BinaryMask, (px, py): (usize, usize)) -> bool {
    for (dx, dy) in NEIGHBORS8 {
        let (qx, qy) = (px as i64 + dx, py as i64 + dy);
        if !input.get(qx, qy) || m.get(qx, qy) || completes_block(m, qx, qy) {
            continue;
        }
        if !Ring::of(m, qx, qy).is_simple() {
            continue;
        }
        m.set(qx as usize, qy as usize, true);
        if Ring::of(m, px as i64, py as i64).is_simple() {
            m.set(px, py, false);
            return true;
        }
        m.set(qx as usize, qy as usize, false);
    }
    false
}

/// Every step removes at least one 2x2 block and creates none, so repeated
/// calls terminate.
fn break_blocks(m: &mut BinaryMask, input: &BinaryMask) -> bool {
    let mut changed = false;
    for y in 0..m.height.saturating_sub(1) {
        for x in 0..m.width.saturating_sub(1) {
            let block = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)];
            if !block.iter().all(|&(bx, by)| m.get(bx as i64, by as i64)) {
                continue;
            }
            // prefer the pixel with the fewest neighbours: it sits on the outside
            let mut order = block;
            order.sort_by_key(|&(bx, by)| m.neighbor_count(bx as i64, by as i64));
            if let Some(&(bx, by)) = order
                .iter()
                .find(|&&(bx, by)| Ring::of(m, bx as i64, by as i64).is_simple())
            {
                m.set(bx, by, false);
                changed = true;
            } else if order.iter().any(|&p| shift_pixel(m, input, p)) {
                // every pixel is a cut pixel, e.g. two diagonals crossing off-grid
                changed = true;
            }
        }
    }
    changed
}

pub fn thin(mask: &BinaryMask, algo: ThinningAlgorithm, par: Parallelism) -> BinaryMask {
    let mut m = mask.clone();
    loop {
        let mut changed = false;
        for first in [true, false] {
            let cand = candidates(&m, algo, first, par);
            changed |= delete_guarded(&mut m, &cand);
        }
        if !changed {
            changed |= break_blocks(&mut m, mask);
        }
        if !changed {
            return m;
        }
    }
}

pub fn guo_hall(mask: &BinaryMask) -> BinaryMask {
    thin(mask, ThinningAlgorithm::GuoHall, Parallelism::Rayon)
}

pub fn zhang_suen(mask: &BinaryMask) -> BinaryMask {
    thin(mask, ThinningAlgorithm::ZhangSuen, Parallelism::Rayon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ascii(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        // first row printed is the top (highest y)
        BinaryMask::from_fn(w, h, |x, y| rows[h - 1 - y].as_bytes()[x] == b'#')
    }

    #[test]
    fn yokoi_numbers() {
        let m = ascii(&["...", ".#.", "..."]);
        assert_eq!(Ring::of(&m, 1, 1).yokoi8(), 0);
        let m = ascii(&["#..", ".#.", "..#"]);
        assert_eq!(Ring::of(&m, 1, 1).yokoi8(), 2);
        let m = ascii(&["##.", ".#.", "..."]);
        assert_eq!(Ring::of(&m, 1, 1).yokoi8(), 1);
        let m = ascii(&["###", "###", "###"]);
        assert_eq!(Ring::of(&m, 1, 1).yokoi8(), 0);
    }

    #[test]
    fn empty_and_line_are_fixpoints() {
        for algo in [ThinningAlgorithm::GuoHall, ThinningAlgorithm::ZhangSuen] {
            let empty = BinaryMask::new(10, 10);
            assert_eq!(thin(&empty, algo, Parallelism::Sequential), empty);
            let line = BinaryMask::from_fn(30, 5, |x, y| y == 2 && (3..27).contains(&x));
            assert_eq!(thin(&line, algo, Parallelism::Sequential), line);
            let diag = BinaryMask::from_fn(12, 12, |x, y| x == y);
            assert_eq!(thin(&diag, algo, Parallelism::Sequential), diag);
        }
    }

    #[test]
    fn square_keeps_one_pixel() {
        for algo in [ThinningAlgorithm::GuoHall, ThinningAlgorithm::ZhangSuen] {
            let sq = ascii(&["....", ".##.", ".##.", "...."]);
            let t = thin(&sq, algo, Parallelism::Sequential);
            assert_eq!(t.count(), 1, "{algo:?}");
        }
    }

    #[test]
    fn crossing_block_of_cut_pixels_is_broken() {
        // two diagonals crossing between pixel centers; the four center pixels are cut pixels
        let skel = BinaryMask::from_fn(12, 12, |x, y| x == y || x + y == 11);
        let input = skel.dilate_2x2();
        let t = thin(&skel, ThinningAlgorithm::GuoHall, Parallelism::Sequential);
        assert!(t.has_2x2_block(), "without spare input pixels the block stays");
        let t = thin(&input, ThinningAlgorithm::GuoHall, Parallelism::Sequential);
        assert!(!t.has_2x2_block());
        assert_eq!(t.components8().1, 1);
        assert_eq!(thin(&t, ThinningAlgorithm::GuoHall, Parallelism::Sequential), t);
    }

    #[test]
    fn bar_thins_to_reference_line() {
        // reference Guo-Hall fixpoint keeps the middle row minus one pixel at each end
        let bar = BinaryMask::from_fn(26, 7, |x, y| (3..23).contains(&x) && (2..5).contains(&y));
        let t = guo_hall(&bar);
        assert!(!t.has_2x2_block());
        assert_eq!(t.components8().1, 1);
        let ys: std::collections::BTreeSet<usize> = (0..t.data.len()).filter(|i| t.data[*i]).map(|i| i / 26).collect();
        assert_eq!(ys.len(), 1, "skeleton is a single row");
        let xs: Vec<usize> = (0..t.data.len()).filter(|i| t.data[*i]).map(|i| i % 26).collect();
        assert_eq!(ys.into_iter().next(), Some(3));
        assert_eq!(xs, (4..22).collect::<Vec<_>>());
    }
}
