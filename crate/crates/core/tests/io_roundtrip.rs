use fleetmap::config::PipelineConfig;
use fleetmap::io;
use fleetmap::model::{GnssTrace, LocalFrame, LocalPoint, Provenance, RoadGraph, TraceId};
use fleetmap::raster::{Channel, RasterTile, TileSpec};
use fleetmap::synth::{self, ScenarioKind, SynthConfig};
use fleetmap::Error;
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    -5000.0f64..5000.0
}

fn graph_strategy() -> impl Strategy<Value = RoadGraph> {
    let nodes = prop::collection::vec((coord(), coord(), -10.0f64..10.0), 1..12);
    let edges = prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>(), 0u8..3, prop::collection::vec((coord(), coord()), 0..4)), 0..15);
    (nodes, edges).prop_map(|(nodes, edges)| {
        let mut g = RoadGraph::new();
        let ids: Vec<_> = nodes.iter().map(|&(x, y, z)| g.add_node(LocalPoint::new(x, y, z))).collect();
        for (a, b, prov, mid) in edges {
            let (a, b) = (ids[a.index(ids.len())], ids[b.index(ids.len())]);
            let mut line = vec![*g.node(a).unwrap()];
            line.extend(mid.iter().map(|&(x, y)| LocalPoint::xy(x, y)));
            line.push(*g.node(b).unwrap());
            if a == b && line.len() < 3 {
                continue;
            }
            let p = [Provenance::Segmentation, Provenance::GapFill, Provenance::GroundTruth][prov as usize];
            g.add_edge(a, b, line, p).unwrap();
        }
        g
    })
}

fn close(a: &LocalPoint, b: &LocalPoint) -> bool {
    (a.x - b.x).abs() <= 1e-9 && (a.y - b.y).abs() <= 1e-9 && (a.z - b.z).abs() <= 1e-9
}

fn same_graph(a: &RoadGraph, b: &RoadGraph) -> bool {
    a.node_ids() == b.node_ids()
        && a.edge_ids() == b.edge_ids()
        && a.nodes().zip(b.nodes()).all(|((_, p), (_, q))| close(p, q))
        && a.edges().zip(b.edges()).all(|((_, e), (_, f))| {
            e.a == f.a
                && e.b == f.b
                && e.provenance == f.provenance
                && e.polyline.len() == f.polyline.len()
                && e.polyline.iter().zip(&f.polyline).all(|(p, q)| close(p, q))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graphs_round_trip(g in graph_strategy(), lat in -60.0f64..60.0, lon in -179.0f64..179.0) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.geojson");
        let frame = LocalFrame::new(lat, lon).unwrap();
        io::write_graph(&path, &g, Some(&frame)).unwrap();
        let (back, f) = io::read_graph_with_frame(&path).unwrap();
        prop_assert!(same_graph(&g, &back));
        prop_assert_eq!(f, Some(frame));
    }

    #[test]
    fn rasters_round_trip_bit_exact(
        w in 1usize..9, h in 1usize..9,
        ox in -1e5f64..1e5, oy in -1e5f64..1e5, res in 0.1f64..10.0,
        seed in any::<u64>(), tag in 0usize..5,
    ) {
        let ch = [Channel::TraceDensity, Channel::LaneMarking, Channel::RoadBoundary, Channel::Probability, Channel::Label][tag];
        let spec = TileSpec::new(ox, oy, res, w, h).unwrap();
        let vals: Vec<f64> = (0..w * h)
            .map(|i| {
                let v = ((seed.wrapping_mul(i as u64 + 1) >> 40) as f64) / (1u64 << 24) as f64;
                // f32 payload: only f32-representable values survive bit-exactly
                if ch.is_unit_interval() { v as f32 as f64 } else { (v * 1000.0) as f32 as f64 }
            })
            .collect();
        let t = RasterTile::from_values(spec, ch, vals).unwrap();
        let bytes = io::encode_raster(&t);
        let back = io::decode_raster(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(io::encode_raster(&back), bytes.clone());
        for cut in [0, 4, io::RASTER_HEADER_LEN - 1, bytes.len() - 1] {
            prop_assert!(matches!(io::decode_raster(&bytes[..cut]), Err(Error::Format(_))));
        }
    }
}

#[test]
fn scenario_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ScenarioKind::Grid, ScenarioKind::Overpass] {
        let mut cfg = SynthConfig::default();
        cfg.scenario.name = kind;
        cfg.n_per_route = 2;
        let s = synth::synthesize(&cfg, 3).unwrap();
        let frame = Some(&s.dataset.frame);
        let (gp, tp, pp) = (dir.path().join("gt.geojson"), dir.path().join("t.geojson"), dir.path().join("p.geojson"));
        io::write_graph(&gp, &s.ground_truth, frame).unwrap();
        io::write_traces(&tp, &s.dataset.traces, frame, Some(&s.oracle)).unwrap();
        io::write_points(&pp, &s.dataset.points, frame).unwrap();
        assert!(same_graph(&io::read_graph(&gp).unwrap(), &s.ground_truth));
        let (traces, f, oracle) = io::read_traces(&tp).unwrap();
        assert_eq!(f.as_ref(), frame);
        assert_eq!(oracle.as_ref(), Some(&s.oracle));
        assert_eq!(traces.len(), s.dataset.traces.len());
        for (a, b) in traces.iter().zip(&s.dataset.traces) {
            assert_eq!(a.id, b.id);
            assert!(a.points.iter().zip(&b.points).all(|(p, q)| close(p, q)));
        }
        let points = io::read_points(&pp).unwrap();
        assert_eq!(points.len(), s.dataset.points.len());
        assert!(points.iter().zip(&s.dataset.points).all(|(p, q)| p.class == q.class && close(&p.position, &q.position)));

        // the oracle sidecar is optional
        std::fs::remove_file(io::oracle_path(&tp)).unwrap();
        assert!(io::read_traces(&tp).unwrap().2.is_none());
    }
}

#[test]
fn malformed_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.geojson");
    let one = GnssTrace {
        id: TraceId(0),
        points: vec![LocalPoint::xy(0.0, 0.0)],
    };
    assert!(io::write_traces(&p, &[one], None, None).is_err() || io::read_traces(&p).is_err());
    std::fs::write(&p, "{\"type\": \"FeatureCollection\", \"features\": [").unwrap();
    assert!(matches!(io::read_graph(&p), Err(Error::Parse { .. })));
    assert!(matches!(io::read_graph(&dir.path().join("absent.geojson")), Err(Error::Io { .. })));
}

#[test]
fn config_survives_serialization_with_overrides() {
    let cfg = PipelineConfig::from_toml_str(
        "seed = 9\n[synth.scenario]\nname = \"tee\"\n",
        &["gap_fill.max_gap_len=25".into(), "stages.disambiguate=false".into()],
    )
    .unwrap();
    assert_eq!(cfg.synth.scenario.name, ScenarioKind::Tee);
    assert_eq!(cfg.gap_fill.max_gap_len, 25.0);
    assert!(!cfg.stages.disambiguate);
    assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml_string(), &[]).unwrap(), cfg);
}
