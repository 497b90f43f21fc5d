//! Centerline segmentation backends, label curation and the CP-loss.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::extract::thin::{thin, ThinningAlgorithm};
use crate::io;
use crate::mapmatch::{self, Matcher};
use crate::mask::BinaryMask;
use crate::model::{EdgeId, GnssTrace, RoadGraph};
use crate::raster::{self, Channel, RasterTile, TileSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterBackend {
    #[default]
    KdeBaseline,
    ExternalMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub backend: SegmenterBackend,
    pub kde_sigma_px: f64,
    /// Threshold on the blurred raw trace count.
    pub kde_threshold: f64,
    pub binarize_threshold: f64,
    /// Path with `{tile_x}` and `{tile_y}` placeholders (tile column and row).
    pub external_mask_path_template: String,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            backend: SegmenterBackend::KdeBaseline,
            kde_sigma_px: 3.0,
            kde_threshold: 0.8,
            binarize_threshold: 0.5,
            external_mask_path_template: String::new(),
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kde_sigma_px > 0.0 && self.kde_sigma_px.is_finite()) {
            return Err(Error::invalid("kde_sigma_px must be > 0"));
        }
        if !(self.kde_threshold >= 0.0 && self.kde_threshold.is_finite()) {
            return Err(Error::invalid("kde_threshold must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return Err(Error::invalid("binarize_threshold must lie in [0, 1]"));
        }
        if self.backend == SegmenterBackend::ExternalMask && self.external_mask_path_template.is_empty() {
            return Err(Error::invalid("external_mask backend needs external_mask_path_template"));
        }
        Ok(())
    }

    pub fn external_path(&self, tile_x: usize, tile_y: usize) -> PathBuf {
        PathBuf::from(
            self.external_mask_path_template
                .replace("{tile_x}", &tile_x.to_string())
                .replace("{tile_y}", &tile_y.to_string()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub min_trace_support: usize,
    pub centerline_thickness_px: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            min_trace_support: 4,
            centerline_thickness_px: 1,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_trace_support == 0 || self.centerline_thickness_px == 0 {
            return Err(Error::invalid("min_trace_support and centerline_thickness_px must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpLossConfig {
    pub sigma: f64,
    pub binarize_threshold: f64,
    pub epsilon: f64,
}

impl Default for CpLossConfig {
    fn default() -> Self {
        Self {
            sigma: 100.0,
            binarize_threshold: 0.5,
            epsilon: 1e-7,
        }
    }
}

impl CpLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !(0.0..=1.0).contains(&self.binarize_threshold) || !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::invalid("cp-loss needs sigma >= 0, threshold in [0,1], epsilon in (0, 0.5)"));
        }
        Ok(())
    }
}

/// The three co-registered input channels of one tile.
#[derive(Debug, Clone, Copy)]
pub struct TileInputs<'a> {
    pub trace_density: &'a RasterTile,
    pub lane_marking: &'a RasterTile,
    pub road_boundary: &'a RasterTile,
    /// Column and row of the tile in its grid.
    pub tile_xy: (usize, usize),
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with zero padding.
pub fn gaussian_blur(tile: &RasterTile, sigma: f64) -> RasterTile {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (tile.width() as i64, tile.height() as i64);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let d = j as i64 - r;
                    let (sx, sy) = if horizontal { (x + d, y) } else { (x, y + d) };
                    if sx >= 0 && sx < w && sy >= 0 && sy < h {
                        acc += kv * src[(sy * w + sx) as usize];
                    }
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let values = pass(&pass(&tile.values, true), false);
    RasterTile {
        spec: tile.spec,
        channel: tile.channel,
        values,
    }
}

pub fn segment_tile(config: &SegmenterConfig, inputs: TileInputs<'_>) -> Result<RasterTile> {
    config.validate()?;
    let spec = inputs.trace_density.spec;
    for t in [inputs.lane_marking, inputs.road_boundary] {
        if t.spec != spec {
            return Err(Error::invalid("input channels are not co-registered"));
        }
    }
    match config.backend {
        SegmenterBackend::KdeBaseline => {
            let blurred = gaussian_blur(inputs.trace_density, config.kde_sigma_px);
            let values = blurred
                .values
                .iter()
                .map(|v| if *v >= config.kde_threshold && *v > 0.0 { 1.0 } else { 0.0 })
                .collect();
            Ok(RasterTile {
                spec,
                channel: Channel::Probability,
                values,
            })
        }
        SegmenterBackend::ExternalMask => {
            let (tx, ty) = inputs.tile_xy;
            let mask = io::read_raster(&config.external_path(tx, ty))?;
            if mask.spec != spec {
                return Err(Error::invalid(format!("external mask for tile ({tx}, {ty}) has a different tile spec")));
            }
            if !mask.channel.is_unit_interval() {
                return Err(Error::invalid("external mask must be a probability or label raster"));
            }
            Ok(RasterTile {
                channel: Channel::Probability,
                ..mask
            })
        }
    }
}

pub fn binarize(mask: &RasterTile, threshold: f64) -> Result<RasterTile> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(RasterTile {
        spec: mask.spec,
        channel: Channel::Label,
        values: mask.values.iter().map(|p| if *p >= threshold { 1.0 } else { 0.0 }).collect(),
    })
}

/// Ground-truth edges traversed by at least `min_trace_support` distinct traces.
pub fn supported_edges(traces: &[GnssTrace], matcher: &Matcher<'_>, config: &LabelConfig, par: Parallelism) -> Result<BTreeSet<EdgeId>> {
    config.validate()?;
    let matches = matcher.match_all(traces, par)?;
    Ok(mapmatch::edge_support(&matches)
        .into_iter()
        .filter(|(_, n)| *n >= config.min_trace_support)
        .map(|(e, _)| e)
        .collect())
}

/// Rasterizes the given edges of `graph` as a binary centerline label.
pub fn rasterize_edges(graph: &RoadGraph, edges: &BTreeSet<EdgeId>, spec: &TileSpec, thickness_px: usize) -> Result<RasterTile> {
    spec.validate()?;
    let mut tile = RasterTile::zeros(*spec, Channel::Label);
    for e in edges {
        let edge = graph.edge(*e).ok_or_else(|| Error::not_found(format!("edge {e}")))?;
        raster::draw_polyline(&mut tile, &edge.polyline, 1.0);
    }
    let mut mask = BinaryMask::from_tile(&tile, 0.5);
    // thickness t grows the line by t - 1 pixels, alternating sides
    for _ in 1..thickness_px {
        mask = mask.dilate_2x2();
    }
    mask.to_tile(*spec)
}

/// Label raster of the ground-truth edges with enough matched traces.
/// `matcher` must be built over `gt`.
pub fn make_labels(
    gt: &RoadGraph,
    traces: &[GnssTrace],
    matcher: &Matcher<'_>,
    spec: &TileSpec,
    config: &LabelConfig,
) -> Result<RasterTile> {
    if !std::ptr::eq(matcher.graph, gt) && matcher.graph != gt {
        return Err(Error::invalid("matcher was not built over the ground-truth graph"));
    }
    let edges = supported_edges(traces, matcher, config, Parallelism::default())?;
    rasterize_edges(gt, &edges, spec, config.centerline_thickness_px)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CpLoss {
    pub total: f64,
    pub bce: f64,
    pub dice: f64,
    pub connectivity_penalty: f64,
}

/// Pixels where the two skeletons disagree outside each other's 2x2 buffer.
pub fn skeleton_mismatch(pred_skel: &BinaryMask, label_skel: &BinaryMask) -> BinaryMask {
    pred_skel
        .minus(&label_skel.dilate_2x2())
        .union(&label_skel.minus(&pred_skel.dilate_2x2()))
}

pub fn cp_loss(pred: &RasterTile, label: &RasterTile, config: &CpLossConfig) -> Result<CpLoss> {
    config.validate()?;
    if pred.width() != label.width() || pred.height() != label.height() {
        return Err(Error::invalid("prediction and label shapes differ"));
    }
    let eps = config.epsilon;
    let n = pred.values.len() as f64;
    let per_pixel: Vec<f64> = pred
        .values
        .iter()
        .zip(&label.values)
        .map(|(p, y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .collect();
    let bce = per_pixel.iter().sum::<f64>() / n;
    let (mut py, mut sp, mut sy) = (0.0, 0.0, 0.0);
    for (p, y) in pred.values.iter().zip(&label.values) {
        py += p * y;
        sp += p;
        sy += y;
    }
    let dice = 1.0 - (2.0 * py + eps) / (sp + sy + eps);

    let par = Parallelism::default();
    let pred_skel = thin(&BinaryMask::from_tile(pred, config.binarize_threshold), ThinningAlgorithm::GuoHall, par);
    let label_skel = thin(&BinaryMask::from_tile(label, 0.5), ThinningAlgorithm::GuoHall, par);
    let m = skeleton_mismatch(&pred_skel, &label_skel);
    let masked = per_pixel.iter().zip(&m.data).filter(|(_, on)| **on).fold(0.0, |acc, (b, _)| acc + b);
    let connectivity_penalty = config.sigma * masked / n;
    Ok(CpLoss {
        total: bce + dice + connectivity_penalty,
        bce,
        dice,
        connectivity_penalty,
    })
}
