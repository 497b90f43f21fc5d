use std::path::Path;
use std::process::{Command, Output};

fn fleetmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleetmap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fleetmap(&["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(fleetmap(&[]).status.code(), Some(1));
    assert_eq!(fleetmap(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_input_exits_two_and_names_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.geojson");
    let out = fleetmap(&["pipeline", "--traces", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest"));

    let out = fleetmap(&["synth", "--set", "synth.noise.dropout_prob=2", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = fleetmap(&["synth", "--set", "synth.nonsense=1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn staged_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = fleetmap(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let input = d.join("in");
    run(&["synth", "--scenario", "straight", "--out", p(&input)]);
    let traces = input.join("traces.geojson");
    let gt = input.join("ground_truth.geojson");
    run(&["rasterize", "--traces", p(&traces), "--points", p(&input.join("points.geojson")), "--out", p(&d.join("t"))]);
    run(&["segment", "--tiles", p(&d.join("t")), "--out", p(&d.join("p"))]);
    run(&["extract", "--tiles", p(&d.join("p")), "--out", p(&d.join("g.geojson"))]);
    run(&["refine", "--graph", p(&d.join("g.geojson")), "--traces", p(&traces), "--out", p(&d.join("r.geojson"))]);
    let m = run(&["match", "--graph", p(&gt), "--traces", p(&traces), "--out", p(&d.join("m.json"))]);
    assert!(m.contains("oracle agreement"));
    let report = run(&["eval", p(&d.join("r.geojson")), p(&gt)]);
    let f1: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("geo.f1 = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(f1 > 0.9, "{report}");
    run(&["render", "--graph", p(&d.join("r.geojson")), "--overlay", p(&gt), "--out", p(&d.join("r.svg"))]);
    assert!(std::fs::read_to_string(d.join("r.svg")).unwrap().contains("<polyline"));

    let same = run(&["eval", p(&gt), p(&gt)]);
    assert!(same.contains("geo.f1 = 1.000000") && same.contains("itopo.f1 = 1.000000"));
}

#[test]
fn pipeline_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = fleetmap(&["pipeline", "--set", "synth.scenario.name=straight", "--workers", "1", "--out", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["outputs"]["graph.geojson"].as_str().unwrap().len() == 64);
    assert!(manifest["metrics"]["geo"]["f1"].as_f64().unwrap() > 0.9);
}
