//! Run configuration: one TOML document (dotted keys, `#` comments) with
//! `key=value` overrides. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::extract::{CleaningConfig, ThinningAlgorithm};
use crate::mapmatch::MatchConfig;
use crate::metrics::{GeoConfig, ItopoConfig};
use crate::raster::TileSpec;
use crate::refine::{DisambiguationConfig, GapFillConfig};
use crate::segment::{CpLossConfig, LabelConfig, SegmenterConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub traces: Option<PathBuf>,
    pub points: Option<PathBuf>,
    /// Optional reference graph; when present the run is scored against it.
    pub ground_truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub keep_intermediate: bool,
}

/// Optional refinement stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageToggles {
    pub gap_fill: bool,
    pub prune_gap: bool,
    pub disambiguate: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            gap_fill: true,
            prune_gap: true,
            disambiguate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub io: IoConfig,
    pub synth: SynthConfig,
    /// Size and resolution of each tile; the origin is replaced per tile.
    pub tile: TileSpec,
    /// Padding added around the data bounding box (meters).
    pub tile_margin: f64,
    pub segmenter: SegmenterConfig,
    pub label: LabelConfig,
    pub cp_loss: CpLossConfig,
    pub thinning: ThinningAlgorithm,
    pub cleaning: CleaningConfig,
    pub gap_fill: GapFillConfig,
    pub disambiguation: DisambiguationConfig,
    pub matching: MatchConfig,
    pub stages: StageToggles,
    pub geo: GeoConfig,
    pub itopo: ItopoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            io: IoConfig::default(),
            synth: SynthConfig::default(),
            tile: TileSpec::default(),
            tile_margin: 30.0,
            segmenter: SegmenterConfig::default(),
            label: LabelConfig::default(),
            cp_loss: CpLossConfig::default(),
            thinning: ThinningAlgorithm::GuoHall,
            cleaning: CleaningConfig::default(),
            gap_fill: GapFillConfig::default(),
            disambiguation: DisambiguationConfig::default(),
            matching: MatchConfig::default(),
            stages: StageToggles::default(),
            geo: GeoConfig::default(),
            itopo: ItopoConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.tile.validate()?;
        if !(self.tile_margin >= 0.0 && self.tile_margin.is_finite()) {
            return Err(Error::invalid("tile_margin must be >= 0"));
        }
        self.synth.scenario.validate()?;
        self.synth.noise.validate()?;
        self.segmenter.validate()?;
        self.label.validate()?;
        self.cp_loss.validate()?;
        self.cleaning.validate()?;
        self.gap_fill.validate()?;
        self.disambiguation.validate()?;
        self.matching.validate()?;
        self.geo.validate()?;
        self.itopo.validate()
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = toml::from_str(text).map_err(|e| Error::parse("config", e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: PipelineConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }
}

/// Sets `a.b.c=value`, creating intermediate tables. The value is parsed as
/// TOML and falls back to a bare string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::parse("override", format!("`{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::parse("override", format!("bad key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::parse("override", format!("`{part}` in `{key}` is not a table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}
