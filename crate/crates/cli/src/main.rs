use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fleetmap::config::PipelineConfig;
use fleetmap::exec::{self, Parallelism};
use fleetmap::extract::{self, SkeletonMask};
use fleetmap::mapmatch::Matcher;
use fleetmap::mask::BinaryMask;
use fleetmap::model::{FleetDataset, LocalFrame, LocalPoint, SemanticClass};
use fleetmap::raster::{self, RasterTile};
use fleetmap::render::{self, Layer};
use fleetmap::segment::{self, TileInputs};
use fleetmap::{io, metrics, pipeline, refine, synth, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "fleetmap", version, about = "Road-graph inference from fleet GNSS traces")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-tile and per-trace stages (0 = all cores, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true)]
    keep_intermediate: bool,
    /// Output directory, or output file for single-artifact commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override `dotted.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a scenario: ground_truth.geojson, traces.geojson (+ oracle), points.geojson.
    Synth {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        policy: Option<String>,
    },
    /// Plan tiles and write the three density channels per tile.
    Rasterize {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Turn density tiles into probability tiles.
    Segment {
        /// Directory written by `rasterize`.
        #[arg(long)]
        tiles: PathBuf,
    },
    /// Merge probability tiles and extract a cleaned graph.
    Extract {
        #[arg(long)]
        tiles: PathBuf,
    },
    /// Gap filling, gap pruning, intersection disambiguation and final cleaning.
    Refine {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        traces: PathBuf,
    },
    /// Map-match traces onto a graph.
    Match {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        traces: PathBuf,
    },
    /// Score a proposal against a reference. Graphs get GEO and iTOPO; rasters get soft F1.
    Eval { proposal: PathBuf, reference: PathBuf },
    /// Draw a graph as SVG.
    Render {
        #[arg(long)]
        graph: PathBuf,
        /// Graph drawn on top, e.g. the ground truth.
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long)]
        backdrop: Option<PathBuf>,
    },
    /// Run every stage. Without `io.traces` a synthetic scenario is generated first.
    Pipeline {
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: PipelineConfig,
    par: Parallelism,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| self.cfg.io.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn out_file(&self, default_name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.out_dir().join(default_name))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("P2R_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
    }
    if g.keep_intermediate {
        overrides.push("io.keep_intermediate=true".into());
    }
    let cfg = PipelineConfig::load(g.config.as_deref(), &overrides)?;
    let par = if g.workers == 1 { Parallelism::Sequential } else { Parallelism::Rayon };
    let ctx = Ctx { cfg, par, out: g.out };
    exec::with_workers(g.workers, move || dispatch(cli.command, ctx))
}

fn dispatch(command: Command, mut ctx: Ctx) -> Result<()> {
    match command {
        Command::Synth { scenario, policy } => {
            if let Some(s) = scenario {
                ctx.cfg.synth.scenario = synth::ScenarioSpec::new(s.parse()?);
            }
            if let Some(p) = policy {
                ctx.cfg.synth.route_policy = p.parse()?;
            }
            let dir = ctx.out_dir();
            write_synthetic(&ctx.cfg, &dir)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Rasterize { traces, points } => cmd_rasterize(&ctx, &traces, points.as_deref()),
        Command::Segment { tiles } => cmd_segment(&ctx, &tiles),
        Command::Extract { tiles } => cmd_extract(&ctx, &tiles),
        Command::Refine { graph, traces } => cmd_refine(&ctx, &graph, &traces),
        Command::Match { graph, traces } => cmd_match(&ctx, &graph, &traces),
        Command::Eval { proposal, reference } => cmd_eval(&ctx, &proposal, &reference),
        Command::Render { graph, overlay, backdrop } => {
            let (g, _) = io::read_graph_with_frame(&graph)?;
            let overlay = overlay.map(|p| io::read_graph(&p)).transpose()?;
            let backdrop = backdrop.map(|p| io::read_raster(&p)).transpose()?;
            let mut layers = vec![Layer { graph: &g, overlay: false }];
            if let Some(o) = &overlay {
                layers.push(Layer { graph: o, overlay: true });
            }
            let out = ctx.out_file("graph.svg");
            render::write_svg(&out, &layers, backdrop.as_ref())?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Pipeline {
            traces,
            points,
            ground_truth,
        } => {
            let dir = ctx.out_dir();
            ctx.cfg.io.out_dir = Some(dir.clone());
            ctx.cfg.io.traces = traces.or(ctx.cfg.io.traces);
            ctx.cfg.io.points = points.or(ctx.cfg.io.points);
            ctx.cfg.io.ground_truth = ground_truth.or(ctx.cfg.io.ground_truth);
            if ctx.cfg.io.traces.is_none() {
                let input = dir.join("input");
                write_synthetic(&ctx.cfg, &input)?;
                ctx.cfg.io.traces = Some(input.join("traces.geojson"));
                ctx.cfg.io.points = Some(input.join("points.geojson"));
                ctx.cfg.io.ground_truth = ctx.cfg.io.ground_truth.or(Some(input.join("ground_truth.geojson")));
            }
            let manifest = pipeline::run_pipeline(&ctx.cfg, ctx.par)?;
            for (name, m) in &manifest.metrics {
                print!("{}", pipeline::format_report(name, m));
            }
            println!("{}", dir.join("graph.geojson").display());
            Ok(())
        }
    }
}

fn write_synthetic(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let s = synth::synthesize(&cfg.synth, cfg.seed)?;
    let frame = Some(&s.dataset.frame);
    io::write_graph(&dir.join("ground_truth.geojson"), &s.ground_truth, frame)?;
    io::write_traces(&dir.join("traces.geojson"), &s.dataset.traces, frame, Some(&s.oracle))?;
    io::write_points(&dir.join("points.geojson"), &s.dataset.points, frame)
}

fn read_dataset(cfg: &PipelineConfig, traces: &Path, points: Option<&Path>) -> Result<FleetDataset> {
    let (traces, frame, _) = io::read_traces(traces)?;
    let points = points.map(io::read_points).transpose()?.unwrap_or_default();
    let frame = match frame {
        Some(f) => f,
        None => LocalFrame::new(cfg.synth.origin_lat, cfg.synth.origin_lon)?,
    };
    Ok(FleetDataset { frame, traces, points })
}

const CHANNELS: [&str; 3] = ["trace_density", "lane_marking", "road_boundary"];

fn tile_path(dir: &Path, c: usize, r: usize, channel: &str) -> PathBuf {
    dir.join(format!("tile_{c}_{r}_{channel}.p2r"))
}

/// `(col, row)` of every `tile_{c}_{r}_{suffix}.p2r` in `dir`, sorted.
fn list_tiles(dir: &Path, suffix: &str) -> Result<Vec<(usize, usize)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name().to_string_lossy().into_owned();
        let Some(rest) = name.strip_prefix("tile_").and_then(|n| n.strip_suffix(&format!("_{suffix}.p2r"))) else {
            continue;
        };
        if let Some((c, r)) = rest.split_once('_') {
            if let (Ok(c), Ok(r)) = (c.parse(), r.parse()) {
                out.push((c, r));
            }
        }
    }
    out.sort_by_key(|&(c, r)| (r, c));
    if out.is_empty() {
        return Err(Error::not_found(format!("no *_{suffix}.p2r tiles in {}", dir.display())));
    }
    Ok(out)
}

fn cmd_rasterize(ctx: &Ctx, traces: &Path, points: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    let ds = read_dataset(cfg, traces, points)?;
    let (min, max) = ds.bbox().ok_or_else(|| Error::invalid("no traces or points"))?;
    let m = cfg.tile_margin;
    let grid = raster::plan_tiles(LocalPoint::xy(min.x - m, min.y - m), LocalPoint::xy(max.x + m, max.y + m), &cfg.tile)?;
    let dir = ctx.out_dir();
    let tiles = exec::map_indexed(ctx.par, grid.tiles.len(), |i| -> Result<Vec<RasterTile>> {
        let spec = &grid.tiles[i];
        Ok(vec![
            raster::rasterize_traces(&ds.traces, spec)?,
            raster::rasterize_points(&ds.points, SemanticClass::LaneMarking, spec)?,
            raster::rasterize_points(&ds.points, SemanticClass::RoadBoundary, spec)?,
        ])
    });
    for (i, chans) in tiles.into_iter().enumerate() {
        let (c, r) = (i % grid.cols, i / grid.cols);
        for (name, tile) in CHANNELS.iter().zip(chans?) {
            io::write_raster(&tile_path(&dir, c, r, name), &tile)?;
        }
    }
    println!("{} tiles ({}x{}) in {}", grid.tiles.len(), grid.cols, grid.rows, dir.display());
    Ok(())
}

fn cmd_segment(ctx: &Ctx, tiles: &Path) -> Result<()> {
    let ids = list_tiles(tiles, CHANNELS[0])?;
    let dir = ctx.out_dir();
    let results = exec::map(ctx.par, &ids, |&(c, r)| -> Result<RasterTile> {
        let read = |ch: &str| io::read_raster(&tile_path(tiles, c, r, ch));
        let (td, lm, rb) = (read(CHANNELS[0])?, read(CHANNELS[1])?, read(CHANNELS[2])?);
        segment::segment_tile(
            &ctx.cfg.segmenter,
            TileInputs {
                trace_density: &td,
                lane_marking: &lm,
                road_boundary: &rb,
                tile_xy: (c, r),
            },
        )
    });
    for (&(c, r), prob) in ids.iter().zip(results) {
        let prob = prob?;
        io::write_raster(&tile_path(&dir, c, r, "probability"), &prob)?;
        if ctx.cfg.io.keep_intermediate {
            io::write_pgm(&dir.join(format!("tile_{c}_{r}_probability.pgm")), &prob)?;
        }
    }
    println!("{} probability tiles in {}", ids.len(), dir.display());
    Ok(())
}

fn cmd_extract(ctx: &Ctx, tiles: &Path) -> Result<()> {
    let cfg = &ctx.cfg;
    let ids = list_tiles(tiles, "probability")?;
    let probs = ids
        .iter()
        .map(|&(c, r)| io::read_raster(&tile_path(tiles, c, r, "probability")))
        .collect::<Result<Vec<_>>>()?;
    let mosaic = raster::merge_tiles(&probs)?;
    let binary = segment::binarize(&mosaic, cfg.segmenter.binarize_threshold)?;
    let thin = extract::thin(&BinaryMask::from_tile(&binary, 0.5), cfg.thinning, ctx.par);
    let skeleton = SkeletonMask::new(binary.spec, thin)?;
    let vectorized = extract::vectorize(&skeleton)?;
    let graph = pipeline::clean_graph(&vectorized, cfg)?;
    let out = ctx.out_file("graph.geojson");
    if cfg.io.keep_intermediate {
        let side = |name: &str| out.with_file_name(name);
        io::write_raster(&side("mosaic.p2r"), &mosaic)?;
        io::write_pgm(&side("mosaic.pgm"), &mosaic)?;
        let skel = skeleton.mask.to_tile(skeleton.spec)?;
        io::write_pgm(&side("skeleton.pgm"), &skel)?;
        io::write_raster(&side("skeleton.p2r"), &skel)?;
        io::write_graph(&side("graph_vectorized.geojson"), &vectorized, None)?;
    }
    io::write_graph(&out, &graph, None)?;
    println!("{} nodes, {} edges -> {}", graph.node_count(), graph.edge_count(), out.display());
    Ok(())
}

fn cmd_refine(ctx: &Ctx, graph: &Path, traces: &Path) -> Result<()> {
    let cfg = &ctx.cfg;
    let (mut g, frame) = io::read_graph_with_frame(graph)?;
    let (traces, _, _) = io::read_traces(traces)?;
    if cfg.stages.gap_fill {
        g = refine::fill_gaps(&g, &cfg.gap_fill).map_err(|e| e.in_stage("gap_fill"))?;
    }
    if cfg.stages.prune_gap {
        g = refine::prune_gap_edges(&g, &traces, &cfg.matching, &cfg.disambiguation, &cfg.cleaning, ctx.par)
            .map_err(|e| e.in_stage("prune_gap"))?;
    }
    if cfg.stages.disambiguate {
        g = refine::disambiguate_intersections(&g, &traces, &cfg.matching, &cfg.disambiguation, ctx.par)
            .map_err(|e| e.in_stage("disambiguate"))?;
    }
    let g = pipeline::clean_graph(&g, cfg).map_err(|e| e.in_stage("final_clean"))?;
    let out = ctx.out_file("graph.geojson");
    io::write_graph(&out, &g, frame.as_ref())?;
    println!("{} nodes, {} edges -> {}", g.node_count(), g.edge_count(), out.display());
    Ok(())
}

fn cmd_match(ctx: &Ctx, graph: &Path, traces: &Path) -> Result<()> {
    let g = io::read_graph(graph)?;
    let (traces, _, oracle) = io::read_traces(traces)?;
    let matcher = Matcher::new(&g, ctx.cfg.matching)?;
    let results = matcher.match_all(&traces, ctx.par)?;
    let out = ctx.out_file("matches.json");
    let text = serde_json::to_string_pretty(&results).expect("match results serialize") + "\n";
    io::write_bytes(&out, text.as_bytes())?;
    let assigned: usize = results.iter().map(|r| r.assignments.iter().flatten().count()).sum();
    let total: usize = results.iter().map(|r| r.assignments.len()).sum();
    println!("matched {assigned}/{total} points -> {}", out.display());
    // The oracle only means something when the graph is the one it was generated on.
    if let Some(oracle) = oracle {
        let (mut hit, mut n) = (0usize, 0usize);
        for r in &results {
            if let Some(truth) = oracle.assignments.get(&r.trace_id) {
                for (a, t) in r.assignments.iter().zip(truth) {
                    if let Some(t) = t {
                        n += 1;
                        hit += usize::from(*a == Some(*t));
                    }
                }
            }
        }
        if n > 0 {
            println!("oracle agreement = {:.6}", hit as f64 / n as f64);
        }
    }
    Ok(())
}

fn cmd_eval(ctx: &Ctx, proposal: &Path, reference: &Path) -> Result<()> {
    let is_raster = |p: &Path| p.extension().is_some_and(|e| e == "p2r");
    let mut reports = BTreeMap::new();
    if is_raster(proposal) && is_raster(reference) {
        let (p, r) = (io::read_raster(proposal)?, io::read_raster(reference)?);
        reports.insert("soft_f1", metrics::soft_f1(&p, &r)?);
    } else {
        let (p, r) = (io::read_graph(proposal)?, io::read_graph(reference)?);
        reports.insert("geo", metrics::geo_metric(&p, &r, &ctx.cfg.geo)?);
        reports.insert("itopo", metrics::itopo_metric_with(&p, &r, &ctx.cfg.itopo, ctx.par)?);
    }
    let text: String = reports.iter().map(|(n, m)| pipeline::format_report(n, m)).collect();
    print!("{text}");
    if let Some(out) = &ctx.out {
        io::write_bytes(out, text.as_bytes())?;
    }
    Ok(())
}
