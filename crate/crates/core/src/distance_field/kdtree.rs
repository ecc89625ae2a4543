//! Static 3D kd-tree answering exact nearest-distance queries.
//!
//! Pruning only discards a subtree when the squared distance to its splitting
//! plane is at least the current best squared distance. Floating-point
//! subtraction, squaring and addition of non-negative terms are monotone, so
//! every discarded point has a computed squared distance no smaller than the
//! best one: the result is bitwise identical to a brute-force scan that uses
//! the same per-pair arithmetic.

use crate::geometry::Point3;

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

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    nodes: Vec<Node>,
}

/// Squared Euclidean distance, summed x, y, z in that order.
#[inline(always)]
pub fn squared_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    /// Panics on an empty point set; callers validate first.
    pub fn build(points: &[Point3]) -> Self {
        assert!(!points.is_empty());
        let mut pts = points.to_vec();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        let n = pts.len();
        build_rec(&mut pts, 0, n, &mut nodes);
        KdTree { points: pts, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nearest_squared(&self, q: &Point3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, 0.0));
        while let Some((id, bound)) = stack.pop() {
            if bound >= best {
                continue;
            }
            match self.nodes[id] {
                Node::Leaf { start, end } => {
                    for p in &self.points[start..end] {
                        let d = squared_distance(q, p);
                        if d < best {
                            best = d;
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
                    let (near, far) = if diff < 0.0 {
                        (left, right)
                    } else {
                        (right, left)
                    };
                    let plane = diff * diff;
                    // far side first so the near side is popped next
                    stack.push((far, plane.max(bound)));
                    stack.push((near, bound));
                }
            }
        }
        best
    }

    pub fn nearest_distance(&self, q: &Point3) -> f64 {
        self.nearest_squared(q).sqrt()
    }
}

fn build_rec(pts: &mut [Point3], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut pts[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in slice.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    if hi[axis] - lo[axis] == 0.0 {
        // all points coincide
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let value = slice[mid][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build_rec(pts, start, start + mid, nodes);
    let right = build_rec(pts, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Point3], q: &Point3) -> f64 {
        let mut best = f64::INFINITY;
        for p in points {
            let d = (q[0] - p[0]) * (q[0] - p[0])
                + (q[1] - p[1]) * (q[1] - p[1])
                + (q[2] - p[2]) * (q[2] - p[2]);
            best = best.min(d);
        }
        best
    }

    #[test]
    fn matches_brute_force_on_clustered_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // clusters and duplicated coordinates stress the median split
        let mut pts: Vec<Point3> = (0..500)
            .map(|i| {
                let c = (i % 5) as f64;
                [c, rng.random::<f64>() * 0.01, (i % 3) as f64]
            })
            .collect();
        pts.extend(std::iter::repeat_n([0.5, 0.5, 0.5], 40));
        let tree = KdTree::build(&pts);
        for _ in 0..500 {
            let q = [
                rng.random_range(-1.0..6.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..3.0),
            ];
            assert_eq!(tree.nearest_squared(&q), brute(&pts, &q));
        }
    }

    #[test]
    fn all_coincident_points() {
        let pts = vec![[1.0, 2.0, 3.0]; 100];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.nearest_distance(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(tree.nearest_distance(&[1.0, 2.0, 5.0]), 2.0);
    }
}
