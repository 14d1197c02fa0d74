//! Delaunay triangulation of small keypoint sets.
//!
//! A lexicographic sweep builds an initial triangulation, then Lawson flips
//! restore the empty-circumcircle property. Orientation and in-circle tests use
//! exact adaptive predicates. Exactly cocircular quadruples are resolved by an
//! infinitesimal lifting perturbation in which lower point indices are lifted
//! more, so every input has one reproducible triangulation.

use std::collections::HashMap;

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Set when every point lies on one line and no triangle exists.
    pub collinear: bool,
}

impl Triangulation {
    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<_> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }
}

fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

pub(crate) fn orient(points: &[[f64; 2]], a: usize, b: usize, c: usize) -> f64 {
    orient2d(coord(points[a]), coord(points[b]), coord(points[c]))
}

/// Sign of the in-circle test for `d` against counter-clockwise `(a, b, c)`,
/// with ties broken by the index-ordered lifting perturbation.
pub(crate) fn in_circle(points: &[[f64; 2]], a: usize, b: usize, c: usize, d: usize) -> i8 {
    let det = incircle(
        coord(points[a]),
        coord(points[b]),
        coord(points[c]),
        coord(points[d]),
    );
    if det != 0.0 {
        return det.signum() as i8;
    }
    // Lifting point p by ε_p adds ε_p times the cofactor of its height entry
    // in the 4x4 lifted determinant: (-1)^r · orient(remaining rows in order).
    let rows = [a, b, c, d];
    let mut by_priority: Vec<usize> = (0..4).collect();
    by_priority.sort_by_key(|&r| rows[r]);
    for r in by_priority {
        let others: Vec<usize> = (0..4).filter(|&k| k != r).map(|k| rows[k]).collect();
        let minor = orient(points, others[0], others[1], others[2]);
        if minor != 0.0 {
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            return (sign * minor).signum() as i8;
        }
    }
    0
}

/// Triangulates `points`. Fewer than three points, or all-collinear input,
/// yields no triangles.
pub fn triangulate(points: &[[f64; 2]]) -> Result<Triangulation> {
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite keypoint coordinate"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i][0]
            .total_cmp(&points[j][0])
            .then(points[i][1].total_cmp(&points[j][1]))
    });
    if let Some(w) = order.windows(2).find(|w| points[w[0]] == points[w[1]]) {
        return Err(Error::invalid(format!(
            "duplicate keypoints {} and {}",
            w[0], w[1]
        )));
    }
    if points.len() < 3 {
        return Ok(Triangulation {
            triangles: Vec::new(),
            collinear: false,
        });
    }

    let Some(apex_pos) =
        (2..order.len()).find(|&k| orient(points, order[0], order[1], order[k]) != 0.0)
    else {
        return Ok(Triangulation {
            triangles: Vec::new(),
            collinear: true,
        });
    };

    let apex = order[apex_pos];
    let left_turn = orient(points, order[0], order[1], apex) > 0.0;
    let mut triangles = Vec::new();
    for w in order[..apex_pos].windows(2) {
        if left_turn {
            triangles.push([w[0], w[1], apex]);
        } else {
            triangles.push([w[1], w[0], apex]);
        }
    }
    // Counter-clockwise hull.
    let mut hull: Vec<usize> = if left_turn {
        order[..apex_pos].iter().copied().chain([apex]).collect()
    } else {
        [order[0], apex]
            .into_iter()
            .chain(order[1..apex_pos].iter().rev().copied())
            .collect()
    };

    for &q in &order[apex_pos + 1..] {
        let h = hull.len();
        let visible: Vec<bool> = (0..h)
            .map(|i| orient(points, hull[i], hull[(i + 1) % h], q) < 0.0)
            .collect();
        // The lexicographically largest point is always strictly outside the
        // hull built so far, so at least one edge is visible and the visible
        // edges form one contiguous run.
        let start = (0..h)
            .find(|&i| visible[i] && !visible[(i + h - 1) % h])
            .expect("new sweep point sees a hull edge");
        hull.rotate_left(start);
        let vis: Vec<bool> = (0..h).map(|i| visible[(i + start) % h]).collect();
        let run = vis.iter().take_while(|&&v| v).count();
        for i in 0..run {
            let (u, v) = (hull[i], hull[(i + 1) % h]);
            triangles.push([v, u, q]);
        }
        let mut next = Vec::with_capacity(h + 1);
        next.push(hull[0]);
        next.push(q);
        next.extend_from_slice(&hull[run..]);
        hull = next;
    }

    legalize(points, &mut triangles);
    Ok(Triangulation {
        triangles,
        collinear: false,
    })
}

/// Lawson flipping until every interior edge is locally Delaunay.
fn legalize(points: &[[f64; 2]], triangles: &mut [[usize; 3]]) {
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            owner.insert((tri[k], tri[(k + 1) % 3]), t);
        }
    }
    let mut stack: Vec<(usize, usize)> = owner.keys().copied().collect();
    stack.sort_unstable();

    while let Some((a, b)) = stack.pop() {
        let (Some(&t1), Some(&t2)) = (owner.get(&(a, b)), owner.get(&(b, a))) else {
            continue;
        };
        let c = opposite(&triangles[t1], a, b);
        let d = opposite(&triangles[t2], b, a);
        if in_circle(points, a, b, c, d) <= 0 {
            continue;
        }
        owner.remove(&(a, b));
        owner.remove(&(b, a));
        triangles[t1] = [a, d, c];
        triangles[t2] = [b, c, d];
        for (e, t) in [
            ((a, d), t1),
            ((d, c), t1),
            ((c, a), t1),
            ((b, c), t2),
            ((c, d), t2),
            ((d, b), t2),
        ] {
            owner.insert(e, t);
        }
        stack.extend([(a, d), (d, b), (b, c), (c, a)]);
    }
}

/// Third vertex of `tri`, which contains the directed edge `a → b`.
fn opposite(tri: &[usize; 3], a: usize, b: usize) -> usize {
    for k in 0..3 {
        if tri[k] == a && tri[(k + 1) % 3] == b {
            return tri[(k + 2) % 3];
        }
    }
    unreachable!("edge ({a}, {b}) not in triangle {tri:?}")
}
