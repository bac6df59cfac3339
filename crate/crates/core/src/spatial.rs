//! Exact nearest-neighbour search over a fixed point set.

use crate::{dist2, Point};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static k-d tree. Queries return the same squared distance as a linear
/// scan using [`dist2`], with ties resolved towards the smaller point index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] <= lo[axis] {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&i, &j| points[i][axis].total_cmp(&points[j][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        // Left holds order[start..mid] (coordinates <= value), right the rest
        // (coordinates >= value).
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
    }

    /// Index and squared distance of the nearest point, or `None` when empty.
    pub fn nearest(&self, query: &Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Point, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(q, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // Rounded subtraction and squaring are monotone, so this bound
                // never exceeds the computed distance of any point beyond the
                // plane. Equality is still explored for the index tie-break.
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// Indices of all points with `dist2 <= r2`, ascending.
    pub fn within(&self, query: &Point, r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.collect(0, query, r2, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn collect(&self, node: usize, q: &Point, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .filter(|&&i| dist2(q, &self.points[i]) <= r2),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.collect(near, q, r2, out);
                if diff * diff <= r2 {
                    self.collect(far, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Point], q: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(q, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::new(&[]).nearest(&Point::origin()).is_none());
    }

    #[test]
    fn exhaustive_small_lattice_with_ties() {
        // Integer lattice with duplicates: many exact ties.
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..3 {
                for z in 0..3 {
                    pts.push(Point::new(x as f64, y as f64, z as f64));
                }
            }
        }
        pts.extend(pts.clone());
        let tree = KdTree::new(&pts);
        for qx in -2..12 {
            for qy in -2..8 {
                for qz in -2..8 {
                    let q = Point::new(qx as f64 * 0.5, qy as f64 * 0.5, qz as f64 * 0.5);
                    assert_eq!(tree.nearest(&q), Some(brute(&pts, &q)), "query {q:?}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn radius_query_matches_linear_scan(
            pts in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64), 1..300),
            q in (-25.0..25.0f64, -25.0..25.0f64, -25.0..25.0f64),
            r in 0.0..15.0f64,
        ) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y, z)| Point::new(x, y, z)).collect();
            let q = Point::new(q.0, q.1, q.2);
            let expected: Vec<usize> = (0..pts.len()).filter(|&i| dist2(&q, &pts[i]) <= r * r).collect();
            prop_assert_eq!(KdTree::new(&pts).within(&q, r * r), expected);
        }

        #[test]
        fn matches_linear_scan(
            pts in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64), 1..300),
            qs in prop::collection::vec((-60.0..60.0f64, -60.0..60.0f64, -60.0..60.0f64), 1..40),
        ) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y, z)| Point::new(x, y, z)).collect();
            let tree = KdTree::new(&pts);
            for (x, y, z) in qs {
                let q = Point::new(x, y, z);
                prop_assert_eq!(tree.nearest(&q), Some(brute(&pts, &q)));
            }
        }
    }
}
