//! End-to-end orchestration: ingest, rasterize, segment, merge, skeletonize,
//! vectorize, clean, gap-fill, prune, disambiguate, final clean.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::extract::{self, SkeletonMask};
use crate::io;
use crate::mask::BinaryMask;
use crate::metrics::{self, MetricReport};
use crate::model::{FleetDataset, LocalPoint, RoadGraph, SemanticClass};
use crate::raster::{self, RasterTile, TileGrid};
use crate::refine;
use crate::render::{self, Layer};
use crate::segment::{self, TileInputs};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Input channels of one tile, kept only when intermediates are requested.
#[derive(Debug, Clone)]
pub struct TileChannels {
    pub trace_density: RasterTile,
    pub lane_marking: RasterTile,
    pub road_boundary: RasterTile,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub grid: TileGrid,
    pub tile_inputs: Vec<TileChannels>,
    pub tile_probabilities: Vec<RasterTile>,
    pub mosaic: RasterTile,
    pub binary: RasterTile,
    pub skeleton: SkeletonMask,
    pub vectorized: RoadGraph,
    pub cleaned: RoadGraph,
    pub gap_filled: RoadGraph,
    pub pruned: RoadGraph,
    pub disambiguated: RoadGraph,
    pub graph: RoadGraph,
    pub timings: Vec<StageTiming>,
}

struct Clock(Vec<StageTiming>);

impl Clock {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        self.0.push(StageTiming {
            stage: stage.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        log::info!("stage {stage}: {:.3}s", t0.elapsed().as_secs_f64());
        out
    }
}

/// Collapse, prune, then simplify.
pub fn clean_graph(g: &RoadGraph, cfg: &PipelineConfig) -> Result<RoadGraph> {
    let g = extract::collapse_short_junction_edges(g, &cfg.cleaning)?;
    let g = extract::prune_dead_ends(&g, &cfg.cleaning)?;
    extract::simplify_degree2(&g)
}

/// Runs every stage in memory.
pub fn run_stages(dataset: &FleetDataset, cfg: &PipelineConfig, par: Parallelism) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut clock = Clock(Vec::new());
    let keep = cfg.io.keep_intermediate;

    let grid = clock.run("rasterize", || {
        let (min, max) = dataset
            .bbox()
            .ok_or_else(|| Error::invalid("dataset contains no traces or points"))?;
        let m = cfg.tile_margin;
        raster::plan_tiles(LocalPoint::xy(min.x - m, min.y - m), LocalPoint::xy(max.x + m, max.y + m), &cfg.tile)
    })?;

    let per_tile = clock.run("segment", || {
        let results = exec::map_indexed(par, grid.tiles.len(), |i| -> Result<(RasterTile, Option<TileChannels>)> {
            let spec = &grid.tiles[i];
            let trace_density = raster::rasterize_traces(&dataset.traces, spec)?;
            let lane_marking = raster::rasterize_points(&dataset.points, SemanticClass::LaneMarking, spec)?;
            let road_boundary = raster::rasterize_points(&dataset.points, SemanticClass::RoadBoundary, spec)?;
            let prob = segment::segment_tile(
                &cfg.segmenter,
                TileInputs {
                    trace_density: &trace_density,
                    lane_marking: &lane_marking,
                    road_boundary: &road_boundary,
                    tile_xy: (i % grid.cols, i / grid.cols),
                },
            )?;
            let channels = keep.then_some(TileChannels {
                trace_density,
                lane_marking,
                road_boundary,
            });
            Ok((prob, channels))
        });
        results.into_iter().collect::<Result<Vec<_>>>()
    })?;
    let (tile_probabilities, tile_inputs): (Vec<RasterTile>, Vec<Option<TileChannels>>) = per_tile.into_iter().unzip();
    let tile_inputs: Vec<TileChannels> = tile_inputs.into_iter().flatten().collect();

    let (mosaic, binary) = clock.run("merge", || {
        let mosaic = raster::merge_tiles(&tile_probabilities)?;
        let binary = segment::binarize(&mosaic, cfg.segmenter.binarize_threshold)?;
        Ok((mosaic, binary))
    })?;

    let skeleton = clock.run("skeletonize", || {
        let thin = extract::thin(&BinaryMask::from_tile(&binary, 0.5), cfg.thinning, par);
        SkeletonMask::new(binary.spec, thin)
    })?;

    let vectorized = clock.run("vectorize", || extract::vectorize(&skeleton))?;
    let cleaned = clock.run("clean", || clean_graph(&vectorized, cfg))?;

    let gap_filled = clock.run("gap_fill", || {
        if cfg.stages.gap_fill {
            refine::fill_gaps(&cleaned, &cfg.gap_fill)
        } else {
            Ok(cleaned.clone())
        }
    })?;
    let pruned = clock.run("prune_gap", || {
        if cfg.stages.prune_gap {
            refine::prune_gap_edges(&gap_filled, &dataset.traces, &cfg.matching, &cfg.disambiguation, &cfg.cleaning, par)
        } else {
            Ok(gap_filled.clone())
        }
    })?;
    let disambiguated = clock.run("disambiguate", || {
        if cfg.stages.disambiguate {
            refine::disambiguate_intersections(&pruned, &dataset.traces, &cfg.matching, &cfg.disambiguation, par)
        } else {
            Ok(pruned.clone())
        }
    })?;
    let graph = clock.run("final_clean", || {
        let g = clean_graph(&disambiguated, cfg)?;
        g.validate()?;
        Ok(g)
    })?;

    Ok(PipelineOutput {
        grid,
        tile_inputs,
        tile_probabilities,
        mosaic,
        binary,
        skeleton,
        vectorized,
        cleaned,
        gap_filled,
        pruned,
        disambiguated,
        graph,
        timings: clock.0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    /// sha256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub timings: Vec<StageTiming>,
    /// sha256 of each written artifact, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, MetricReport>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&io::read_bytes(path)?))
}

struct Writer {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        io::write_bytes(&self.dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn graph(&mut self, name: &str, g: &RoadGraph, ds: &FleetDataset) -> Result<()> {
        let text = serde_json::to_string_pretty(&io::graph_to_geojson(g, Some(&ds.frame))).expect("valid JSON") + "\n";
        self.put(name, text.as_bytes())
    }
}

/// Reads inputs named in the config, runs every stage and writes artifacts
/// plus `manifest.json` to the output directory.
pub fn run_pipeline(cfg: &PipelineConfig, par: Parallelism) -> Result<RunManifest> {
    cfg.validate()?;
    let mut inputs = BTreeMap::new();
    let t0 = Instant::now();
    let (dataset, gt) = (|| -> Result<_> {
        let traces_path = cfg.io.traces.as_ref().ok_or_else(|| Error::invalid("io.traces is not set"))?;
        let (traces, frame, _) = io::read_traces(traces_path)?;
        inputs.insert(traces_path.display().to_string(), file_digest(traces_path)?);
        let points = match &cfg.io.points {
            Some(p) => {
                inputs.insert(p.display().to_string(), file_digest(p)?);
                io::read_points(p)?
            }
            None => Vec::new(),
        };
        let gt = match &cfg.io.ground_truth {
            Some(p) => {
                inputs.insert(p.display().to_string(), file_digest(p)?);
                Some(io::read_graph(p)?)
            }
            None => None,
        };
        let frame = match frame {
            Some(f) => f,
            None => crate::model::LocalFrame::new(cfg.synth.origin_lat, cfg.synth.origin_lon)?,
        };
        Ok((FleetDataset { frame, traces, points }, gt))
    })()
    .map_err(|e| e.in_stage("ingest"))?;
    let ingest = StageTiming {
        stage: "ingest".into(),
        seconds: t0.elapsed().as_secs_f64(),
    };

    let out = run_stages(&dataset, cfg, par)?;
    let mut timings = vec![ingest];
    timings.extend(out.timings.iter().cloned());

    let mut metrics_out = BTreeMap::new();
    if let Some(gt) = &gt {
        let t = Instant::now();
        let mut run = || -> Result<()> {
            metrics_out.insert("geo".to_string(), metrics::geo_metric(&out.graph, gt, &cfg.geo)?);
            metrics_out.insert("itopo".to_string(), metrics::itopo_metric_with(&out.graph, gt, &cfg.itopo, par)?);
            Ok(())
        };
        run().map_err(|e| e.in_stage("evaluate"))?;
        timings.push(StageTiming {
            stage: "evaluate".into(),
            seconds: t.elapsed().as_secs_f64(),
        });
    }

    let dir = cfg.io.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut w = Writer {
        dir: dir.clone(),
        outputs: BTreeMap::new(),
    };
    let write = |w: &mut Writer| -> Result<()> {
        w.graph("graph.geojson", &out.graph, &dataset)?;
        let layers: Vec<Layer> = std::iter::once(Layer {
            graph: &out.graph,
            overlay: false,
        })
        .chain(gt.as_ref().map(|g| Layer { graph: g, overlay: true }))
        .collect();
        w.put("graph.svg", render::render_svg(&layers, None).as_bytes())?;
        if cfg.io.keep_intermediate {
            for (i, ch) in out.tile_inputs.iter().enumerate() {
                let (c, r) = (i % out.grid.cols, i / out.grid.cols);
                w.put(&format!("tiles/tile_{c}_{r}_trace_density.p2r"), &io::encode_raster(&ch.trace_density))?;
                w.put(&format!("tiles/tile_{c}_{r}_lane_marking.p2r"), &io::encode_raster(&ch.lane_marking))?;
                w.put(&format!("tiles/tile_{c}_{r}_road_boundary.p2r"), &io::encode_raster(&ch.road_boundary))?;
                w.put(&format!("tiles/tile_{c}_{r}_probability.p2r"), &io::encode_raster(&out.tile_probabilities[i]))?;
            }
            w.put("mosaic.p2r", &io::encode_raster(&out.mosaic))?;
            w.put("mosaic.pgm", &io::encode_pgm(&out.mosaic)?)?;
            w.put("mask.p2r", &io::encode_raster(&out.binary))?;
            let skel = out.skeleton.mask.to_tile(out.skeleton.spec)?;
            w.put("skeleton.p2r", &io::encode_raster(&skel))?;
            w.put("skeleton.pgm", &io::encode_pgm(&skel)?)?;
            for (name, g) in [
                ("graph_vectorized.geojson", &out.vectorized),
                ("graph_cleaned.geojson", &out.cleaned),
                ("graph_gap_filled.geojson", &out.gap_filled),
                ("graph_pruned.geojson", &out.pruned),
                ("graph_disambiguated.geojson", &out.disambiguated),
            ] {
                w.graph(name, g, &dataset)?;
            }
        }
        if !metrics_out.is_empty() {
            let mut text = String::new();
            for (name, m) in &metrics_out {
                text.push_str(&format_report(name, m));
            }
            w.put("metrics.txt", text.as_bytes())?;
        }
        Ok(())
    };
    write(&mut w).map_err(|e| e.in_stage("write"))?;

    let manifest = RunManifest {
        config: cfg.clone(),
        inputs,
        timings,
        outputs: w.outputs,
        metrics: metrics_out,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    io::write_bytes(&dir.join("manifest.json"), text.as_bytes()).map_err(|e| e.in_stage("write"))?;
    Ok(manifest)
}

/// `name.key = value` lines, one per report field.
pub fn format_report(name: &str, m: &MetricReport) -> String {
    format!(
        "{name}.precision = {:.6}\n{name}.recall = {:.6}\n{name}.f1 = {:.6}\n{name}.matched_proposal = {}\n{name}.total_proposal = {}\n{name}.matched_gt = {}\n{name}.total_gt = {}\n",
        m.precision, m.recall, m.f1, m.matched_proposal, m.total_proposal, m.matched_gt, m.total_gt
    )
}
