//! Georeferenced density rasters: tiling, rasterization of traces and
//! semantic points, log normalization and weighted mosaic merging.
//!
//! Grids are row-major and y-up: `values[iy * width + ix]`, where row 0 is the
//! southern edge of the tile. A point `p` falls into pixel
//! `(floor((p.x - origin.x) / res), floor((p.y - origin.y) / res))`; the
//! half-open convention means a point on the eastern/northern border belongs
//! to the neighbouring tile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GnssTrace, LocalPoint, SemanticClass, SemanticPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TileSpec {
    /// South-west corner.
    pub origin_x: f64,
    pub origin_y: f64,
    /// Meters per pixel.
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            origin_x: 0.0,
            origin_y: 0.0,
            resolution: 1.0,
            width: 1000,
            height: 1000,
        }
    }
}

impl TileSpec {
    pub fn new(origin_x: f64, origin_y: f64, resolution: f64, width: usize, height: usize) -> Result<Self> {
        let spec = Self {
            origin_x,
            origin_y,
            resolution,
            width,
            height,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::invalid(format!("resolution {} must be > 0", self.resolution)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("tile dimensions must be > 0"));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::invalid("tile origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width_m(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn height_m(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    /// Unbounded integer pixel coordinates of a point.
    pub fn pixel_coords(&self, p: &LocalPoint) -> (i64, i64) {
        (
            ((p.x - self.origin_x) / self.resolution).floor() as i64,
            ((p.y - self.origin_y) / self.resolution).floor() as i64,
        )
    }

    pub fn contains_pixel(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    pub fn pixel_of(&self, p: &LocalPoint) -> Option<(usize, usize)> {
        let (ix, iy) = self.pixel_coords(p);
        self.contains_pixel(ix, iy).then_some((ix as usize, iy as usize))
    }

    pub fn pixel_center(&self, ix: usize, iy: usize) -> LocalPoint {
        LocalPoint::xy(
            self.origin_x + (ix as f64 + 0.5) * self.resolution,
            self.origin_y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    pub fn same_grid(&self, other: &TileSpec) -> bool {
        self == other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    TraceDensity,
    LaneMarking,
    RoadBoundary,
    Probability,
    Label,
}

impl Channel {
    pub fn tag(self) -> u8 {
        match self {
            Channel::TraceDensity => 0,
            Channel::LaneMarking => 1,
            Channel::RoadBoundary => 2,
            Channel::Probability => 3,
            Channel::Label => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Channel::TraceDensity,
            1 => Channel::LaneMarking,
            2 => Channel::RoadBoundary,
            3 => Channel::Probability,
            4 => Channel::Label,
            _ => return None,
        })
    }

    pub fn is_unit_interval(self) -> bool {
        matches!(self, Channel::Probability | Channel::Label)
    }

    pub fn for_class(class: SemanticClass) -> Self {
        match class {
            SemanticClass::LaneMarking => Channel::LaneMarking,
            SemanticClass::RoadBoundary => Channel::RoadBoundary,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterTile {
    pub spec: TileSpec,
    pub channel: Channel,
    pub values: Vec<f64>,
}

impl RasterTile {
    pub fn zeros(spec: TileSpec, channel: Channel) -> Self {
        Self {
            spec,
            channel,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn from_values(spec: TileSpec, channel: Channel, values: Vec<f64>) -> Result<Self> {
        let tile = Self { spec, channel, values };
        tile.validate()?;
        Ok(tile)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.values.len() != self.spec.len() {
            return Err(Error::invalid(format!(
                "raster has {} values, expected {}",
                self.values.len(),
                self.spec.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("raster value {v} is negative or non-finite")));
        }
        if self.channel.is_unit_interval() {
            if let Some(v) = self.values.iter().find(|v| **v > 1.0) {
                return Err(Error::invalid(format!("{:?} value {v} exceeds 1", self.channel)));
            }
        }
        Ok(())
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.spec.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        let i = self.spec.index(ix, iy);
        self.values[i] = v;
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    /// Foreground mask (`v >= threshold`).
    pub fn mask(&self, threshold: f64) -> Vec<bool> {
        self.values.iter().map(|v| *v >= threshold).collect()
    }
}

/// Tiles laid out on a half-step lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub tiles: Vec<TileSpec>,
    pub cols: usize,
    pub rows: usize,
}

fn tiles_along(extent: f64, size: f64) -> usize {
    if extent <= size {
        1
    } else {
        // 1e-9 absorbs representation error in exact multiples
        1 + ((extent - size) / (size / 2.0) - 1e-9).ceil() as usize
    }
}

/// Minimal set of tiles, stepped by half a tile, whose union covers the box.
pub fn plan_tiles(min: LocalPoint, max: LocalPoint, template: &TileSpec) -> Result<TileGrid> {
    template.validate()?;
    if !(max.x > min.x && max.y > min.y) {
        return Err(Error::invalid(format!(
            "degenerate bounding box ({}, {})-({}, {})",
            min.x, min.y, max.x, max.y
        )));
    }
    let (w, h) = (template.width_m(), template.height_m());
    let cols = tiles_along(max.x - min.x, w);
    let rows = tiles_along(max.y - min.y, h);
    let mut tiles = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            tiles.push(TileSpec {
                origin_x: min.x + c as f64 * w / 2.0,
                origin_y: min.y + r as f64 * h / 2.0,
                ..*template
            });
        }
    }
    Ok(TileGrid { tiles, cols, rows })
}

/// Integer Bresenham walk from `(x0, y0)` to `(x1, y1)`, both inclusive.
pub fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64, mut plot: impl FnMut(i64, i64)) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y) = (x0, y0);
    let mut err = dx + dy;
    loop {
        plot(x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn segment_misses_tile(spec: &TileSpec, a: (i64, i64), b: (i64, i64)) -> bool {
    let (w, h) = (spec.width as i64, spec.height as i64);
    a.0.max(b.0) < 0 || a.1.max(b.1) < 0 || a.0.min(b.0) >= w || a.1.min(b.1) >= h
}

/// Draws a polyline as one Bresenham chain. The shared pixel between two
/// consecutive segments is incremented once, so each pixel visit of the chain
/// counts as one traversal event.
pub fn draw_polyline(tile: &mut RasterTile, line: &[LocalPoint], amount: f64) {
    let spec = tile.spec;
    let pix: Vec<(i64, i64)> = line.iter().map(|p| spec.pixel_coords(p)).collect();
    for (i, w) in pix.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if i > 0 && a == b {
            continue;
        }
        if segment_misses_tile(&spec, a, b) {
            continue;
        }
        let skip_first = i > 0;
        let mut first = true;
        bresenham(a.0, a.1, b.0, b.1, |x, y| {
            if std::mem::take(&mut first) && skip_first {
                return;
            }
            if spec.contains_pixel(x, y) {
                let idx = spec.index(x as usize, y as usize);
                tile.values[idx] += amount;
            }
        });
    }
    if pix.len() == 1 {
        if let Some((x, y)) = spec.pixel_of(&line[0]) {
            let idx = spec.index(x, y);
            tile.values[idx] += amount;
        }
    }
}

pub fn rasterize_traces(traces: &[GnssTrace], spec: &TileSpec) -> Result<RasterTile> {
    spec.validate()?;
    let mut tile = RasterTile::zeros(*spec, Channel::TraceDensity);
    for t in traces {
        draw_polyline(&mut tile, &t.points, 1.0);
    }
    Ok(tile)
}

pub fn rasterize_points(points: &[SemanticPoint], class: SemanticClass, spec: &TileSpec) -> Result<RasterTile> {
    spec.validate()?;
    let mut tile = RasterTile::zeros(*spec, Channel::for_class(class));
    for p in points.iter().filter(|p| p.class == class) {
        if let Some((x, y)) = spec.pixel_of(&p.position) {
            let idx = spec.index(x, y);
            tile.values[idx] += 1.0;
        }
    }
    Ok(tile)
}

/// `v -> log10(v + 1)` on every pixel.
pub fn normalize(tile: &RasterTile) -> Result<RasterTile> {
    if let Some(v) = tile.values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!("cannot normalize negative value {v}")));
    }
    Ok(RasterTile {
        spec: tile.spec,
        channel: tile.channel,
        values: tile.values.iter().map(|v| (v + 1.0).log10()).collect(),
    })
}

/// Blend weight of pixel `(ix, iy)` in a tile: 1.0 at the center, falling
/// linearly to 0.5 at the border under the Chebyshev norm.
pub fn tile_weight(spec: &TileSpec, ix: usize, iy: usize) -> f64 {
    let hw = spec.width as f64 / 2.0;
    let hh = spec.height as f64 / 2.0;
    let dx = ((ix as f64 + 0.5) - hw) / hw;
    let dy = ((iy as f64 + 0.5) - hh) / hh;
    1.0 - 0.5 * dx.abs().max(dy.abs())
}

/// Weighted average of `(value, weight)` samples.
pub fn blend(samples: &[(f64, f64)]) -> f64 {
    let mut acc = BlendAcc::default();
    for (v, w) in samples {
        acc.add(*v, *w);
    }
    acc.value()
}

/// Running weighted average. Agreeing samples reproduce their common value
/// bit-exactly instead of going through `sum(w*v) / sum(w)`.
#[derive(Debug, Clone, Copy)]
struct BlendAcc {
    num: f64,
    den: f64,
    lo: f64,
    hi: f64,
}

impl Default for BlendAcc {
    fn default() -> Self {
        Self {
            num: 0.0,
            den: 0.0,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }
}

impl BlendAcc {
    fn add(&mut self, v: f64, w: f64) {
        self.num += w * v;
        self.den += w;
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }

    fn value(&self) -> f64 {
        if self.den <= 0.0 {
            0.0
        } else if self.lo == self.hi {
            self.lo
        } else {
            (self.num / self.den).clamp(self.lo, self.hi)
        }
    }
}

fn pixel_offset(value: f64, resolution: f64) -> Result<i64> {
    let k = value / resolution;
    let r = k.round();
    if (k - r).abs() > 1e-6 {
        return Err(Error::invalid("tile origins are not pixel-aligned"));
    }
    Ok(r as i64)
}

/// Merges overlapping probability masks into one mosaic by weighted average.
pub fn merge_tiles(masks: &[RasterTile]) -> Result<RasterTile> {
    let first = masks.first().ok_or_else(|| Error::invalid("no masks to merge"))?;
    let res = first.spec.resolution;
    for m in masks {
        m.validate()?;
        if m.spec.resolution != res {
            return Err(Error::invalid("masks have mixed resolutions"));
        }
    }
    let min_x = masks.iter().map(|m| m.spec.origin_x).fold(f64::INFINITY, f64::min);
    let min_y = masks.iter().map(|m| m.spec.origin_y).fold(f64::INFINITY, f64::min);

    let mut placed = Vec::with_capacity(masks.len());
    let (mut width, mut height) = (0usize, 0usize);
    for m in masks {
        let ox = pixel_offset(m.spec.origin_x - min_x, res)? as usize;
        let oy = pixel_offset(m.spec.origin_y - min_y, res)? as usize;
        width = width.max(ox + m.spec.width);
        height = height.max(oy + m.spec.height);
        placed.push((ox, oy, m));
    }
    // fixed accumulation order keeps the result independent of input order
    placed.sort_by_key(|(ox, oy, _)| (*oy, *ox));

    let spec = TileSpec {
        origin_x: min_x,
        origin_y: min_y,
        resolution: res,
        width,
        height,
    };
    let mut acc = vec![BlendAcc::default(); spec.len()];
    for (ox, oy, m) in placed {
        for iy in 0..m.spec.height {
            for ix in 0..m.spec.width {
                let w = tile_weight(&m.spec, ix, iy);
                acc[spec.index(ox + ix, oy + iy)].add(m.get(ix, iy), w);
            }
        }
    }
    let values = acc.iter().map(BlendAcc::value).collect();
    Ok(RasterTile {
        spec,
        channel: Channel::Probability,
        values,
    })
}
