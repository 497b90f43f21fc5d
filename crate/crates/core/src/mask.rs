//! Binary pixel masks and the small morphology toolkit shared by the
//! segmentation loss, the thinning code and the soft F1 metric.

use crate::error::{Error, Result};
use crate::raster::{Channel, RasterTile, TileSpec};

/// 8-neighbourhood offsets, clockwise starting north (y-up).
pub const NEIGHBORS8: [(i64, i64); 8] = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn from_tile(tile: &RasterTile, threshold: f64) -> Self {
        Self {
            width: tile.spec.width,
            height: tile.spec.height,
            data: tile.mask(threshold),
        }
    }

    pub fn to_tile(&self, spec: TileSpec) -> Result<RasterTile> {
        if spec.width != self.width || spec.height != self.height {
            return Err(Error::invalid("mask and tile spec sizes differ"));
        }
        Ok(RasterTile {
            spec,
            channel: Channel::Label,
            values: self.data.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn neighbor_count(&self, x: i64, y: i64) -> usize {
        NEIGHBORS8.iter().filter(|(dx, dy)| self.get(x + dx, y + dy)).count()
    }

    /// True if any 2x2 window is entirely foreground.
    pub fn has_2x2_block(&self) -> bool {
        (0..self.height.saturating_sub(1)).any(|y| {
            (0..self.width.saturating_sub(1)).any(|x| {
                let (x, y) = (x as i64, y as i64);
                self.get(x, y) && self.get(x + 1, y) && self.get(x, y + 1) && self.get(x + 1, y + 1)
            })
        })
    }

    /// Dilation by the 2x2 structuring element anchored at its origin cell:
    /// every foreground pixel also sets its +x, +y and +x+y neighbours.
    pub fn dilate_2x2(&self) -> BinaryMask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.data[y * self.width + x] {
                    continue;
                }
                for (dx, dy) in [(1, 0), (0, 1), (1, 1)] {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < self.width && ny < self.height {
                        out.data[ny * self.width + nx] = true;
                    }
                }
            }
        }
        out
    }

    /// `self AND NOT other`.
    pub fn minus(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && !*b).collect(),
        }
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count()
    }

    /// 8-connected component labels (0 = background) and the component count.
    pub fn components8(&self) -> (Vec<u32>, usize) {
        let mut labels = vec![0u32; self.data.len()];
        let mut next = 0u32;
        let mut stack = Vec::new();
        for start in 0..self.data.len() {
            if !self.data[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = ((i % self.width) as i64, (i / self.width) as i64);
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (x + dx, y + dy);
                    if self.get(nx, ny) {
                        let j = ny as usize * self.width + nx as usize;
                        if labels[j] == 0 {
                            labels[j] = next;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        (labels, next as usize)
    }
}
