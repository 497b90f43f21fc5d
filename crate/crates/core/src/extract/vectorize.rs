use crate::error::{Error, Result};
use crate::geom;
use crate::mask::{BinaryMask, NEIGHBORS8};
use crate::model::{LocalPoint, NodeId, Provenance, RoadGraph};
use crate::raster::TileSpec;

/// A one-pixel-wide skeleton in a georeferenced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonMask {
    pub spec: TileSpec,
    pub mask: BinaryMask,
}

impl SkeletonMask {
    pub fn new(spec: TileSpec, mask: BinaryMask) -> Result<Self> {
        if spec.width != mask.width || spec.height != mask.height {
            return Err(Error::invalid("skeleton mask does not match its tile spec"));
        }
        if mask.has_2x2_block() {
            return Err(Error::invalid("skeleton is not thin (contains a 2x2 block)"));
        }
        Ok(Self { spec, mask })
    }
}

struct Walker<'a> {
    skel: &'a SkeletonMask,
    cluster: Vec<Option<usize>>,
    visited: Vec<bool>,
}

impl Walker<'_> {
    fn idx(&self, x: i64, y: i64) -> usize {
        y as usize * self.skel.mask.width + x as usize
    }

    fn xy(&self, i: usize) -> (i64, i64) {
        ((i % self.skel.mask.width) as i64, (i / self.skel.mask.width) as i64)
    }

    fn center(&self, i: usize) -> LocalPoint {
        let (x, y) = self.xy(i);
        self.skel.spec.pixel_center(x as usize, y as usize)
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = self.xy(i);
        NEIGHBORS8
            .iter()
            .filter(move |(dx, dy)| self.skel.mask.get(x + dx, y + dy))
            .map(move |(dx, dy)| self.idx(x + dx, y + dy))
    }

    /// Follows degree-2 pixels from `first` (entered from `prev`) until a node
    /// pixel is reached. Returns the path pixels and the terminal node pixel.
    fn walk(&mut self, prev: usize, first: usize) -> (Vec<usize>, Option<usize>) {
        let mut path = vec![first];
        self.visited[first] = true;
        let (mut prev, mut cur) = (prev, first);
        loop {
            let next = self.neighbors(cur).find(|&n| n != prev);
            match next {
                Some(n) if self.cluster[n].is_some() => return (path, Some(n)),
                Some(n) if !self.visited[n] => {
                    self.visited[n] = true;
                    path.push(n);
                    prev = cur;
                    cur = n;
                }
                _ => return (path, None),
            }
        }
    }
}

/// Converts a skeleton into a road graph. Pixels with a neighbour count other
/// than two are node pixels; 8-adjacent node pixels form one node placed at
/// the cluster pixel nearest the cluster centroid. Runs of degree-2 pixels
/// between node clusters become edges. Components without node pixels (pure
/// cycles) get one anchor node and a closed edge. Isolated pixels are
/// dropped.
pub fn vectorize(skel: &SkeletonMask) -> Result<RoadGraph> {
    if skel.mask.has_2x2_block() {
        return Err(Error::invalid("skeleton is not thin (contains a 2x2 block)"));
    }
    let m = &skel.mask;
    let n = m.data.len();
    let mut w = Walker {
        skel,
        cluster: vec![None; n],
        visited: vec![false; n],
    };

    let is_node_pixel = |i: usize| {
        let (x, y) = ((i % m.width) as i64, (i / m.width) as i64);
        m.data[i] && m.neighbor_count(x, y) != 2 && m.neighbor_count(x, y) > 0
    };

    // cluster node pixels
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if !is_node_pixel(start) || w.cluster[start].is_some() {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![start];
        w.cluster[start] = Some(id);
        let mut k = 0;
        while k < members.len() {
            let cur = members[k];
            let nbrs: Vec<usize> = w.neighbors(cur).collect();
            for nb in nbrs {
                if is_node_pixel(nb) && w.cluster[nb].is_none() {
                    w.cluster[nb] = Some(id);
                    members.push(nb);
                }
            }
            k += 1;
        }
        members.sort_unstable();
        clusters.push(members);
    }

    let mut graph = RoadGraph::new();
    let mut node_of: Vec<NodeId> = Vec::with_capacity(clusters.len());
    let mut rep_of: Vec<usize> = Vec::with_capacity(clusters.len());
    for members in &clusters {
        let (sx, sy) = members.iter().fold((0.0, 0.0), |(ax, ay), &i| {
            let (x, y) = w.xy(i);
            (ax + x as f64, ay + y as f64)
        });
        let (cx, cy) = (sx / members.len() as f64, sy / members.len() as f64);
        let rep = *members
            .iter()
            .min_by(|&&a, &&b| {
                let da = { let (x, y) = w.xy(a); (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) };
                let db = { let (x, y) = w.xy(b); (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) };
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("clusters are non-empty");
        rep_of.push(rep);
        node_of.push(graph.add_node(w.center(rep)));
    }

    let mut pending: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for (cid, members) in clusters.iter().enumerate() {
        for &c in members {
            let starts: Vec<usize> = w.neighbors(c).collect();
            for s in starts {
                if w.cluster[s].is_some() || w.visited[s] {
                    continue;
                }
                let (path, end) = w.walk(c, s);
                let Some(end) = end else { continue };
                pending.push((cid, w.cluster[end].unwrap(), path));
            }
        }
    }
    for (from, to, path) in pending {
        let mut line = vec![w.center(rep_of[from])];
        line.extend(path.iter().map(|&i| w.center(i)));
        line.push(w.center(rep_of[to]));
        let line = geom::merge_collinear(&line, 1e-9);
        if geom::polyline_length(&line) > 0.0 {
            graph.add_edge(node_of[from], node_of[to], line, Provenance::Segmentation)?;
        }
    }

    // components made only of degree-2 pixels
    for start in 0..n {
        if !m.data[start] || w.cluster[start].is_some() || w.visited[start] {
            continue;
        }
        let Some(first) = w.neighbors(start).next() else {
            // isolated pixel
            continue;
        };
        let anchor = graph.add_node(w.center(start));
        w.visited[start] = true;
        let mut line = vec![w.center(start)];
        let (mut prev, mut cur) = (start, first);
        while cur != start && !w.visited[cur] {
            w.visited[cur] = true;
            line.push(w.center(cur));
            let next = w.neighbors(cur).find(|&nb| nb != prev).unwrap_or(start);
            prev = cur;
            cur = next;
        }
        line.push(w.center(start));
        let line = geom::merge_collinear(&line, 1e-9);
        if line.len() >= 3 {
            graph.add_edge(anchor, anchor, line, Provenance::Segmentation)?;
        } else {
            graph.remove_node(anchor);
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skel(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> SkeletonMask {
        SkeletonMask::new(TileSpec::new(0.0, 0.0, 1.0, w, h).unwrap(), BinaryMask::from_fn(w, h, f)).unwrap()
    }

    #[test]
    fn straight_line() {
        let g = vectorize(&skel(40, 5, |x, y| y == 2 && (5..35).contains(&x))).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
        assert!((g.total_length() - 29.0).abs() < 1e-9);
        g.validate().unwrap();
    }

    #[test]
    fn plus_shape() {
        let g = vectorize(&skel(21, 21, |x, y| (x == 10 && (2..19).contains(&y)) || (y == 10 && (2..19).contains(&x)))).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (5, 4));
        let center = g.nodes().find(|(id, _)| g.degree(*id) == 4).unwrap().1;
        assert_eq!((center.x, center.y), (10.5, 10.5));
        g.validate().unwrap();
    }

    #[test]
    fn isolated_pixels_dropped() {
        let g = vectorize(&skel(9, 9, |x, y| (x, y) == (4, 4) || (y == 1 && (1..8).contains(&x)))).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
    }

    #[test]
    fn empty_and_non_thin() {
        assert!(vectorize(&skel(5, 5, |_, _| false)).unwrap().is_empty());
        let thick = SkeletonMask {
            spec: TileSpec::new(0.0, 0.0, 1.0, 4, 4).unwrap(),
            mask: BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 2),
        };
        assert!(matches!(vectorize(&thick), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ring_gets_anchor() {
        // octagon: corners cut so every pixel has exactly two neighbours
        let g = vectorize(&skel(12, 12, |x, y| {
            ((x == 2 || x == 9) && (3..9).contains(&y)) || ((y == 2 || y == 9) && (3..9).contains(&x))
        }))
        .unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (1, 1));
        assert!((g.total_length() - (20.0 + 4.0 * 2f64.sqrt())).abs() < 1e-9);
        g.validate().unwrap();
    }
}
