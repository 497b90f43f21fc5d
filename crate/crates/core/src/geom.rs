//! Planar polyline helpers. All functions work in the XY plane and ignore z
//! unless stated otherwise.

use crate::model::LocalPoint;

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Euclidean XY distance from the query to the closest point.
    pub distance: f64,
    /// Arc length of the closest point, measured from the first vertex.
    pub offset: f64,
    pub point: LocalPoint,
    /// Index of the segment containing the closest point.
    pub segment: usize,
}

pub fn polyline_length(line: &[LocalPoint]) -> f64 {
    line.windows(2).map(|w| w[0].dist_xy(&w[1])).sum()
}

/// Projects `p` onto segment `a`-`b`, returning the clamped parameter in [0, 1].
pub fn segment_param(p: &LocalPoint, a: &LocalPoint, b: &LocalPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return 0.0;
    }
    (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
}

pub fn segment_distance(p: &LocalPoint, a: &LocalPoint, b: &LocalPoint) -> f64 {
    let t = segment_param(p, a, b);
    p.dist_xy(&a.lerp(b, t))
}

pub fn project_onto_polyline(p: &LocalPoint, line: &[LocalPoint]) -> Projection {
    assert!(!line.is_empty(), "projection onto an empty polyline");
    let mut best = Projection {
        distance: p.dist_xy(&line[0]),
        offset: 0.0,
        point: line[0],
        segment: 0,
    };
    let mut acc = 0.0;
    for (i, w) in line.windows(2).enumerate() {
        let seg_len = w[0].dist_xy(&w[1]);
        let t = segment_param(p, &w[0], &w[1]);
        let q = w[0].lerp(&w[1], t);
        let d = p.dist_xy(&q);
        if d < best.distance {
            best = Projection {
                distance: d,
                offset: acc + t * seg_len,
                point: q,
                segment: i,
            };
        }
        acc += seg_len;
    }
    best
}

/// Point at arc length `s` (clamped to the polyline extent). Interpolates z.
pub fn point_at(line: &[LocalPoint], s: f64) -> LocalPoint {
    let mut acc = 0.0;
    if s <= 0.0 {
        return line[0];
    }
    for w in line.windows(2) {
        let seg_len = w[0].dist_xy(&w[1]);
        if acc + seg_len >= s && seg_len > 0.0 {
            return w[0].lerp(&w[1], (s - acc) / seg_len);
        }
        acc += seg_len;
    }
    *line.last().expect("non-empty polyline")
}

/// Sub-polyline between arc lengths `from` and `to` (`from <= to`).
pub fn slice(line: &[LocalPoint], from: f64, to: f64) -> Vec<LocalPoint> {
    let total = polyline_length(line);
    let from = from.clamp(0.0, total);
    let to = to.clamp(from, total);
    let mut out = vec![point_at(line, from)];
    let mut acc = 0.0;
    for w in line.windows(2) {
        acc += w[0].dist_xy(&w[1]);
        if acc > from && acc < to {
            out.push(w[1]);
        }
    }
    out.push(point_at(line, to));
    out
}

/// Unit direction of travel when arriving at the end of `line`, estimated over
/// the last `window` meters.
pub fn terminal_direction(line: &[LocalPoint], window: f64) -> Option<(f64, f64)> {
    let total = polyline_length(line);
    if total == 0.0 {
        return None;
    }
    let tail = point_at(line, (total - window).max(0.0));
    let end = line.last()?;
    let (dx, dy) = (end.x - tail.x, end.y - tail.y);
    let n = dx.hypot(dy);
    (n > 0.0).then(|| (dx / n, dy / n))
}

/// Angle in degrees between two planar vectors, in [0, 180].
pub fn angle_between(u: (f64, f64), v: (f64, f64)) -> f64 {
    let nu = u.0.hypot(u.1);
    let nv = v.0.hypot(v.1);
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let c = ((u.0 * v.0 + u.1 * v.1) / (nu * nv)).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Intersection of the ray `origin + t*dir` (t in [0, max_t]) with segment `a`-`b`.
/// Returns `(t, u)` where `u` is the parameter along the segment.
pub fn ray_segment_intersection(
    origin: &LocalPoint,
    dir: (f64, f64),
    max_t: f64,
    a: &LocalPoint,
    b: &LocalPoint,
) -> Option<(f64, f64)> {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let denom = dir.0 * ey - dir.1 * ex;
    if denom.abs() < 1e-12 {
        return None;
    }
    let (wx, wy) = (a.x - origin.x, a.y - origin.y);
    let t = (wx * ey - wy * ex) / denom;
    let u = (wx * dir.1 - wy * dir.0) / denom;
    ((0.0..=max_t).contains(&t) && (0.0..=1.0).contains(&u)).then_some((t, u))
}

/// Drops interior vertices that lie on the straight line between their
/// neighbours (within `tol` meters).
pub fn merge_collinear(line: &[LocalPoint], tol: f64) -> Vec<LocalPoint> {
    if line.len() <= 2 {
        return line.to_vec();
    }
    let mut out = vec![line[0]];
    for i in 1..line.len() - 1 {
        let prev = *out.last().unwrap();
        // the distance is to the clamped segment, so reversals are kept too
        if segment_distance(&line[i], &prev, &line[i + 1]) > tol {
            out.push(line[i]);
        }
    }
    out.push(line[line.len() - 1]);
    out
}
