use fleetmap::metrics::{self, GeoConfig, ItopoConfig};
use fleetmap::model::{LocalPoint, NodeId, Provenance, RoadGraph};
use fleetmap::synth::{make_ground_truth, ScenarioKind, ScenarioSpec};
use proptest::prelude::*;

fn pts() -> impl Strategy<Value = Vec<LocalPoint>> {
    prop::collection::vec((0.0f64..60.0, 0.0f64..60.0).prop_map(|(x, y)| LocalPoint::xy(x, y)), 0..40)
}

/// Quadratic reference: repeatedly take the closest unused pair.
fn naive_greedy(p: &[LocalPoint], g: &[LocalPoint], r: f64) -> usize {
    let (mut up, mut ug) = (vec![false; p.len()], vec![false; g.len()]);
    let mut n = 0;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, a) in p.iter().enumerate().filter(|(i, _)| !up[*i]) {
            for (j, b) in g.iter().enumerate().filter(|(j, _)| !ug[*j]) {
                let d = a.dist_xy(b);
                if d <= r && best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { return n };
        up[i] = true;
        ug[j] = true;
        n += 1;
    }
}

/// Maximum bipartite matching by augmenting paths.
fn max_matching(p: &[LocalPoint], g: &[LocalPoint], r: f64) -> usize {
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                    owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    let adj: Vec<Vec<usize>> = p
        .iter()
        .map(|a| (0..g.len()).filter(|&j| a.dist_xy(&g[j]) <= r).collect())
        .collect();
    let mut owner = vec![None; g.len()];
    (0..p.len()).filter(|&i| augment(i, &adj, &mut vec![false; g.len()], &mut owner)).count()
}

/// Jittered, partly rewired copy of a scenario graph.
fn perturb(g: &RoadGraph, jitter: &[(f64, f64)], drop: &[bool]) -> RoadGraph {
    let mut out = RoadGraph::new();
    let ids: Vec<NodeId> = g.node_ids();
    let mut map = std::collections::BTreeMap::new();
    for (k, id) in ids.iter().enumerate() {
        let p = g.node(*id).unwrap();
        let (dx, dy) = jitter[k % jitter.len()];
        map.insert(*id, out.add_node(LocalPoint::xy(p.x + dx, p.y + dy)));
    }
    for (k, (_, e)) in g.edges().enumerate() {
        if !drop[k % drop.len()] {
            out.add_straight_edge(map[&e.a], map[&e.b], Provenance::Segmentation).unwrap();
        }
    }
    out.remove_isolated_nodes();
    out
}

proptest! {
    #[test]
    fn greedy_matches_reference(p in pts(), g in pts(), r in 1.0f64..10.0) {
        let got = metrics::greedy_match(&p, &g, r);
        prop_assert_eq!(got, naive_greedy(&p, &g, r));
        prop_assert_eq!(got, metrics::greedy_match(&g, &p, r));
        let best = max_matching(&p, &g, r);
        prop_assert!(got <= best && 2 * got >= best);
    }

    #[test]
    fn graph_metrics_symmetry_and_bounds(
        jitter in prop::collection::vec((-8.0f64..8.0, -8.0f64..8.0), 1..9),
        drop in prop::collection::vec(prop::bool::weighted(0.2), 1..12),
    ) {
        let gt = make_ground_truth(&ScenarioSpec::new(ScenarioKind::Grid), 0).unwrap();
        let prop_g = perturb(&gt, &jitter, &drop);
        let geo = metrics::geo_metric(&prop_g, &gt, &GeoConfig::default()).unwrap();
        prop_assert_eq!(geo, metrics::geo_metric(&gt, &prop_g, &GeoConfig::default()).unwrap().swapped());
        let it = metrics::itopo_metric(&prop_g, &gt, &ItopoConfig::default()).unwrap();
        for m in [&geo, &it] {
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(m.matched_proposal <= m.total_proposal && m.matched_gt <= m.total_gt);
        }
        let same = metrics::itopo_metric(&prop_g, &prop_g, &ItopoConfig::default()).unwrap();
        if !prop_g.is_empty() {
            prop_assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        }
    }
}

#[test]
fn identity_on_every_scenario() {
    for kind in [ScenarioKind::Straight, ScenarioKind::Grid, ScenarioKind::Overpass, ScenarioKind::Intersection, ScenarioKind::Tee] {
        let g = make_ground_truth(&ScenarioSpec::new(kind), 0).unwrap();
        let geo = metrics::geo_metric(&g, &g, &GeoConfig::default()).unwrap();
        let it = metrics::itopo_metric(&g, &g, &ItopoConfig::default()).unwrap();
        assert_eq!((geo.precision, geo.recall, geo.f1), (1.0, 1.0, 1.0), "{kind:?}");
        assert_eq!((it.precision, it.recall, it.f1), (1.0, 1.0, 1.0), "{kind:?}");
    }
}

#[test]
fn missing_edge_lowers_recall_only() {
    let gt = make_ground_truth(&ScenarioSpec::new(ScenarioKind::Grid), 0).unwrap();
    let mut partial = gt.clone();
    partial.remove_edge(gt.edge_ids()[0]);
    let geo = metrics::geo_metric(&partial, &gt, &GeoConfig::default()).unwrap();
    assert_eq!(geo.precision, 1.0);
    assert!(geo.recall < 1.0 && geo.recall > 0.85);
}
