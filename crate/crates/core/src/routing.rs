//! Shortest paths over a [`RoadGraph`] with edge polyline lengths as costs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::model::{EdgeId, NodeId, RoadGraph};

#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    cost: f64,
    node: NodeId,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path tree from one or more seeded nodes.
#[derive(Debug, Clone, Default)]
pub struct ShortestPaths {
    pub dist: BTreeMap<NodeId, f64>,
    /// Edge used to reach a node, together with the node it was reached from.
    pub pred: BTreeMap<NodeId, (EdgeId, NodeId)>,
}

impl ShortestPaths {
    /// Edge sequence from the seed to `target`, in travel order.
    pub fn path_to(&self, target: NodeId) -> Option<Vec<(EdgeId, NodeId)>> {
        self.dist.get(&target)?;
        let mut path = Vec::new();
        let mut cur = target;
        while let Some(&(e, from)) = self.pred.get(&cur) {
            path.push((e, cur));
            cur = from;
        }
        path.reverse();
        Some(path)
    }
}

/// Dijkstra from weighted seeds, expanding no further than `limit` meters.
pub fn dijkstra(graph: &RoadGraph, seeds: &[(NodeId, f64)], limit: f64) -> ShortestPaths {
    let mut sp = ShortestPaths::default();
    let mut heap = BinaryHeap::new();
    for &(n, d) in seeds {
        if d <= limit && sp.dist.get(&n).is_none_or(|old| d < *old) {
            sp.dist.insert(n, d);
            heap.push(State { cost: d, node: n });
        }
    }
    while let Some(State { cost, node }) = heap.pop() {
        if cost > sp.dist[&node] {
            continue;
        }
        let Ok(incident) = graph.incident_edges(node) else {
            continue;
        };
        for e in incident {
            let edge = graph.edge(e).expect("adjacency refers to live edges");
            if edge.is_self_loop() {
                continue;
            }
            let next = edge.other(node);
            let nd = cost + edge.length();
            if nd <= limit && sp.dist.get(&next).is_none_or(|old| nd < *old) {
                sp.dist.insert(next, nd);
                sp.pred.insert(next, (e, node));
                heap.push(State { cost: nd, node: next });
            }
        }
    }
    sp
}
