//! File formats: GeoJSON graphs, traces and semantic points (coordinates in
//! local-frame meters, frame origin as a top-level member), a plain-text
//! trace oracle sidecar, a little-endian binary raster format and PGM export.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{
    EdgeId, GnssTrace, LocalFrame, LocalPoint, NodeId, Provenance, RoadGraph, SemanticClass, SemanticPoint, TraceId,
};
use crate::raster::{Channel, RasterTile, TileSpec};
use crate::synth::TraceOracle;

pub const RASTER_MAGIC: &[u8; 4] = b"P2RR";
pub const RASTER_VERSION: u16 = 1;
/// magic + version + channel + width + height + origin_x + origin_y + resolution
pub const RASTER_HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 8 * 3;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn collection(features: Vec<Value>, frame: Option<&LocalFrame>) -> Value {
    let mut root = Map::new();
    root.insert("type".into(), json!("FeatureCollection"));
    if let Some(f) = frame {
        root.insert("frame".into(), json!({"origin_lat": f.origin_lat, "origin_lon": f.origin_lon}));
    }
    root.insert("features".into(), Value::Array(features));
    Value::Object(root)
}

/// Context-carrying accessors for one parsed feature.
struct Feature<'a> {
    ctx: String,
    props: &'a Map<String, Value>,
    kind: &'a str,
    coords: &'a Value,
}

impl<'a> Feature<'a> {
    fn parse(file: &Path, index: usize, v: &'a Value) -> Result<Self> {
        let ctx = format!("{} feature {index}", file.display());
        let err = |m: &str| Error::parse(ctx.clone(), m.to_string());
        let geom = v.get("geometry").ok_or_else(|| err("missing geometry"))?;
        let kind = geom.get("type").and_then(Value::as_str).ok_or_else(|| err("missing geometry type"))?;
        let coords = geom.get("coordinates").ok_or_else(|| err("missing coordinates"))?;
        let props = v
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| err("missing properties"))?;
        Ok(Self {
            ctx,
            props,
            kind,
            coords,
        })
    }

    fn err(&self, m: impl Into<String>) -> Error {
        Error::parse(self.ctx.clone(), m)
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.props
            .get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| self.err(format!("property `{key}` missing or not an unsigned integer")))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.props.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| self.err(format!("property `{key}` is not a number"))),
        }
    }

    fn str(&self, key: &str) -> Result<&'a str> {
        self.props
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| self.err(format!("property `{key}` missing or not a string")))
    }

    fn point(&self, v: &Value) -> Result<LocalPoint> {
        let arr = v.as_array().ok_or_else(|| self.err("coordinate is not an array"))?;
        let num = |i: usize| arr.get(i).and_then(Value::as_f64);
        match (num(0), num(1)) {
            (Some(x), Some(y)) if arr.len() <= 3 => Ok(LocalPoint::new(x, y, num(2).unwrap_or(0.0))),
            _ => Err(self.err("coordinate must be [x, y] or [x, y, z]")),
        }
    }

    fn line(&self) -> Result<Vec<LocalPoint>> {
        if self.kind != "LineString" {
            return Err(self.err(format!("expected LineString, found {}", self.kind)));
        }
        self.coords
            .as_array()
            .ok_or_else(|| self.err("LineString coordinates are not an array"))?
            .iter()
            .map(|c| self.point(c))
            .collect()
    }
}

fn features<'a>(path: &Path, root: &'a Value) -> Result<&'a Vec<Value>> {
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::parse(path.display().to_string(), "not a FeatureCollection"));
    }
    root.get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(path.display().to_string(), "missing features array"))
}

fn frame_of(path: &Path, root: &Value) -> Result<Option<LocalFrame>> {
    let Some(f) = root.get("frame") else { return Ok(None) };
    let get = |k: &str| f.get(k).and_then(Value::as_f64);
    match (get("origin_lat"), get("origin_lon")) {
        (Some(lat), Some(lon)) => LocalFrame::new(lat, lon).map(Some),
        _ => Err(Error::parse(path.display().to_string(), "frame needs origin_lat and origin_lon")),
    }
}

fn xyz(p: &LocalPoint) -> Value {
    json!([p.x, p.y, p.z])
}

pub fn graph_to_geojson(graph: &RoadGraph, frame: Option<&LocalFrame>) -> Value {
    let mut feats: Vec<Value> = graph
        .nodes()
        .map(|(id, p)| {
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [p.x, p.y]},
                "properties": {"node_id": id.0, "z": p.z},
            })
        })
        .collect();
    feats.extend(graph.edges().map(|(id, e)| {
        json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": e.polyline.iter().map(xyz).collect::<Vec<_>>()},
            "properties": {"edge_id": id.0, "node_a": e.a.0, "node_b": e.b.0, "provenance": e.provenance.as_str()},
        })
    }));
    collection(feats, frame)
}

pub fn write_graph(path: &Path, graph: &RoadGraph, frame: Option<&LocalFrame>) -> Result<()> {
    write_json(path, &graph_to_geojson(graph, frame))
}

pub fn read_graph_with_frame(path: &Path) -> Result<(RoadGraph, Option<LocalFrame>)> {
    let root = read_json(path)?;
    let feats = features(path, &root)?;
    let mut graph = RoadGraph::new();
    let mut edges = Vec::new();
    for (i, v) in feats.iter().enumerate() {
        let f = Feature::parse(path, i, v)?;
        match f.kind {
            "Point" => {
                let p = f.point(f.coords)?;
                let p = LocalPoint::new(p.x, p.y, f.f64_or("z", p.z)?);
                graph.insert_node(NodeId(f.u64("node_id")?), p).map_err(|e| f.err(e.to_string()))?;
            }
            "LineString" => edges.push(f),
            other => return Err(f.err(format!("unsupported geometry {other}"))),
        }
    }
    for f in edges {
        let prov = f.str("provenance")?;
        let prov = Provenance::parse(prov).ok_or_else(|| f.err(format!("unknown provenance `{prov}`")))?;
        let (a, b) = (NodeId(f.u64("node_a")?), NodeId(f.u64("node_b")?));
        for n in [a, b] {
            if !graph.contains_node(n) {
                return Err(f.err(format!("edge references missing node {n}")));
            }
        }
        graph
            .insert_edge(EdgeId(f.u64("edge_id")?), a, b, f.line()?, prov)
            .map_err(|e| f.err(e.to_string()))?;
    }
    Ok((graph, frame_of(path, &root)?))
}

pub fn read_graph(path: &Path) -> Result<RoadGraph> {
    read_graph_with_frame(path).map(|(g, _)| g)
}

/// Sidecar holding the per-point oracle edge of every trace.
pub fn oracle_path(traces_path: &Path) -> PathBuf {
    let mut s = traces_path.as_os_str().to_owned();
    s.push(".oracle");
    PathBuf::from(s)
}

pub fn write_traces(path: &Path, traces: &[GnssTrace], frame: Option<&LocalFrame>, oracle: Option<&TraceOracle>) -> Result<()> {
    let feats = traces
        .iter()
        .map(|t| {
            json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": t.points.iter().map(xyz).collect::<Vec<_>>()},
                "properties": {"trace_id": t.id.0},
            })
        })
        .collect();
    write_json(path, &collection(feats, frame))?;
    if let Some(oracle) = oracle {
        let mut text = String::from("# trace_id point_index edge_id\n");
        for (tid, assignment) in &oracle.assignments {
            for (i, e) in assignment.iter().enumerate() {
                match e {
                    Some(e) => text.push_str(&format!("{} {i} {}\n", tid.0, e.0)),
                    None => text.push_str(&format!("{} {i} -\n", tid.0)),
                }
            }
        }
        write_bytes(&oracle_path(path), text.as_bytes())?;
    }
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<(Vec<GnssTrace>, Option<LocalFrame>, Option<TraceOracle>)> {
    let root = read_json(path)?;
    let mut traces = Vec::new();
    for (i, v) in features(path, &root)?.iter().enumerate() {
        let f = Feature::parse(path, i, v)?;
        let trace = GnssTrace::new(TraceId(f.u64("trace_id")?), f.line()?).map_err(|e| f.err(e.to_string()))?;
        traces.push(trace);
    }
    let frame = frame_of(path, &root)?;
    let side = oracle_path(path);
    let oracle = if side.exists() { Some(read_oracle(&side)?) } else { None };
    Ok((traces, frame, oracle))
}

fn read_oracle(path: &Path) -> Result<TraceOracle> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut oracle = TraceOracle::default();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx = || format!("{} line {}", path.display(), ln + 1);
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [tid, idx, edge] = parts.as_slice() else {
            return Err(Error::parse(ctx(), "expected `trace_id point_index edge_id`"));
        };
        let num = |s: &str| s.parse::<u64>().map_err(|e| Error::parse(ctx(), format!("`{s}`: {e}")));
        let (tid, idx) = (TraceId(num(tid)?), num(idx)? as usize);
        let edge = if *edge == "-" { None } else { Some(EdgeId(num(edge)?)) };
        let seq = oracle.assignments.entry(tid).or_default();
        if seq.len() != idx {
            return Err(Error::parse(ctx(), format!("point index {idx} out of sequence")));
        }
        seq.push(edge);
    }
    Ok(oracle)
}

pub fn write_points(path: &Path, points: &[SemanticPoint], frame: Option<&LocalFrame>) -> Result<()> {
    let feats = points
        .iter()
        .map(|p| {
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": xyz(&p.position)},
                "properties": {"class": p.class.as_str()},
            })
        })
        .collect();
    write_json(path, &collection(feats, frame))
}

pub fn read_points(path: &Path) -> Result<Vec<SemanticPoint>> {
    let root = read_json(path)?;
    let mut out = Vec::new();
    for (i, v) in features(path, &root)?.iter().enumerate() {
        let f = Feature::parse(path, i, v)?;
        if f.kind != "Point" {
            return Err(f.err(format!("expected Point, found {}", f.kind)));
        }
        let class = f.str("class")?;
        let class = SemanticClass::parse(class).ok_or_else(|| f.err(format!("unknown class `{class}`")))?;
        let position = f.point(f.coords)?;
        if !position.is_finite() {
            return Err(f.err("non-finite coordinate"));
        }
        out.push(SemanticPoint { position, class });
    }
    Ok(out)
}

pub fn encode_raster(tile: &RasterTile) -> Vec<u8> {
    let s = &tile.spec;
    let mut out = Vec::with_capacity(RASTER_HEADER_LEN + 4 * tile.values.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.push(tile.channel.tag());
    out.extend_from_slice(&(s.width as u32).to_le_bytes());
    out.extend_from_slice(&(s.height as u32).to_le_bytes());
    for v in [s.origin_x, s.origin_y, s.resolution] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &tile.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raster(bytes: &[u8]) -> Result<RasterTile> {
    if bytes.len() < RASTER_HEADER_LEN {
        return Err(Error::Format(format!("raster truncated: {} header bytes", bytes.len())));
    }
    if &bytes[..4] != RASTER_MAGIC {
        return Err(Error::Format("bad raster magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RASTER_VERSION {
        return Err(Error::Format(format!("unsupported raster version {version}")));
    }
    let channel = Channel::from_tag(bytes[6]).ok_or_else(|| Error::Format(format!("unknown channel tag {}", bytes[6])))?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (width, height) = (u32_at(7), u32_at(11));
    let spec = TileSpec::new(f64_at(15), f64_at(23), f64_at(31), width, height).map_err(|e| Error::Format(e.to_string()))?;
    let payload = &bytes[RASTER_HEADER_LEN..];
    if payload.len() != 4 * spec.len() {
        return Err(Error::Format(format!(
            "raster payload has {} bytes, expected {}",
            payload.len(),
            4 * spec.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    RasterTile::from_values(spec, channel, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_raster(path: &Path, tile: &RasterTile) -> Result<()> {
    write_bytes(path, &encode_raster(tile))
}

pub fn read_raster(path: &Path) -> Result<RasterTile> {
    decode_raster(&read_bytes(path)?)
}

/// 16-bit binary PGM, top row first. Only unit-interval channels.
pub fn encode_pgm(tile: &RasterTile) -> Result<Vec<u8>> {
    if !tile.channel.is_unit_interval() {
        return Err(Error::invalid(format!("PGM export needs a [0,1] channel, got {:?}", tile.channel)));
    }
    let (w, h) = (tile.width(), tile.height());
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            let v = (65535.0 * tile.get(x, y).clamp(0.0, 1.0)).round() as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, tile: &RasterTile) -> Result<()> {
    write_bytes(path, &encode_pgm(tile)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_graph() -> RoadGraph {
        let mut g = RoadGraph::new();
        let a = g.add_node(LocalPoint::new(0.1, 0.2, 1.5));
        let b = g.add_node(LocalPoint::xy(10.0, 0.2));
        g.add_edge(
            a,
            b,
            vec![LocalPoint::new(0.1, 0.2, 1.5), LocalPoint::xy(5.0, 3.0), LocalPoint::xy(10.0, 0.2)],
            Provenance::GapFill,
        )
        .unwrap();
        g
    }

    #[test]
    fn graph_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.geojson");
        let frame = LocalFrame::new(37.7, -122.4).unwrap();
        write_graph(&p, &sample_graph(), Some(&frame)).unwrap();
        let (g, f) = read_graph_with_frame(&p).unwrap();
        assert_eq!(g, sample_graph());
        assert_eq!(f, Some(frame));
    }

    #[test]
    fn missing_node_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.geojson");
        let v = json!({"type": "FeatureCollection", "features": [{
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [[0, 0], [1, 0]]},
            "properties": {"edge_id": 0, "node_a": 0, "node_b": 1, "provenance": "segmentation"}}]});
        write_json(&p, &v).unwrap();
        assert!(matches!(read_graph(&p), Err(Error::Parse { .. })));
        write_json(&p, &json!({"type": "FeatureCollection", "features": []})).unwrap();
        assert!(read_graph(&p).unwrap().is_empty());
    }

    #[test]
    fn traces_and_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.geojson");
        let t = GnssTrace::new(TraceId(3), vec![LocalPoint::xy(0.0, 0.0), LocalPoint::xy(1.0, 0.5)]).unwrap();
        write_traces(&p, std::slice::from_ref(&t), None, None).unwrap();
        let (back, _, oracle) = read_traces(&p).unwrap();
        assert_eq!(back, vec![t.clone()]);
        assert!(oracle.is_none());

        let mut o = TraceOracle::default();
        o.assignments.insert(TraceId(3), vec![Some(EdgeId(2)), None]);
        write_traces(&p, &[t], None, Some(&o)).unwrap();
        assert_eq!(read_traces(&p).unwrap().2, Some(o));

        let bad = json!({"type": "FeatureCollection", "features": [{
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [[0, 0]]},
            "properties": {"trace_id": 1}}]});
        write_json(&p, &bad).unwrap();
        assert!(read_traces(&p).is_err());
    }

    #[test]
    fn raster_round_trip_and_errors() {
        let spec = TileSpec::new(-5.0, 2.5, 0.2, 3, 2).unwrap();
        let t = RasterTile::from_values(spec, Channel::Probability, vec![0.0, 0.25, 1.0, 0.5, 0.1, 0.75]).unwrap();
        let bytes = encode_raster(&t);
        assert_eq!(bytes.len(), RASTER_HEADER_LEN + 24);
        let back = decode_raster(&bytes).unwrap();
        assert_eq!(encode_raster(&back), bytes);
        assert!(matches!(decode_raster(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode_raster(&bytes[..10]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_raster(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(decode_raster(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_layout() {
        let spec = TileSpec::new(0.0, 0.0, 1.0, 2, 2).unwrap();
        let zeros = RasterTile::zeros(spec, Channel::Label);
        let pgm = encode_pgm(&zeros).unwrap();
        assert!(pgm.starts_with(b"P5\n2 2\n65535\n"));
        assert!(pgm[13..].iter().all(|b| *b == 0));
        let mut t = zeros;
        t.set(0, 1, 1.0);
        let pgm = encode_pgm(&t).unwrap();
        // top row (y = 1) comes first
        assert_eq!(&pgm[13..15], &[0xff, 0xff]);
        assert!(encode_pgm(&RasterTile::zeros(spec, Channel::TraceDensity)).is_err());
    }
}
