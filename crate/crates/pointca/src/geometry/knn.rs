//! Nearest-neighbor search over 3D points.
//!
//! Two interchangeable backends: a brute-force scan and a kd-tree. Both
//! order candidates by `(distance, index)` so ties always resolve to the
//! lower point index, and both must return identical results.

use crate::geometry::Point3;

/// Squared Euclidean distance. All neighbor queries compare this value, so
/// every backend sees bitwise-identical keys.
#[inline]
pub fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Euclidean distance between two points.
#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    dist_sq(a, b).sqrt()
}

/// `(squared distance, index)` candidate with the tie-breaking order used by
/// every neighbor query: nearer first, lower index first on exact ties.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    #[inline]
    fn key(&self) -> (f64, usize) {
        (self.dist_sq, self.index)
    }

    #[inline]
    fn closer_than(&self, other: &Neighbor) -> bool {
        self.key() < other.key()
    }
}

/// Brute-force k-nearest search, excluding `skip` when given.
///
/// Returns at most `k` neighbors sorted by `(distance, index)`.
pub fn k_nearest_brute(points: &[Point3], query: &Point3, k: usize, skip: Option<usize>) -> Vec<Neighbor> {
    let mut candidates: Vec<Neighbor> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, p)| Neighbor {
            index: i,
            dist_sq: dist_sq(query, p),
        })
        .collect();
    candidates.sort_by(|a, b| a.key().partial_cmp(&b.key()).unwrap());
    candidates.truncate(k);
    candidates
}

const LEAF_SIZE: usize = 16;

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

/// Kd-tree over a borrowed point slice. Used for neighborhood construction
/// on large clouds and for nearest-point queries in distance metrics.
pub struct KdTree<'a> {
    points: &'a [Point3],
    indices: Vec<usize>,
    nodes: Vec<Node>,
    root: usize,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point3]) -> Self {
        let mut tree = KdTree {
            points,
            indices: (0..points.len()).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        if !points.is_empty() {
            tree.root = tree.build_range(0, points.len());
        }
        tree
    }

    fn build_range(&mut self, start: usize, end: usize) -> usize {
        let count = end - start;
        if count <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }

        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &idx in &self.indices[start..end] {
            let p = &self.points[idx];
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let mut axis = 0;
        for a in 1..3 {
            if max[a] - min[a] > max[axis] - min[axis] {
                axis = a;
            }
        }

        let mid = start + count / 2;
        let points = self.points;
        self.indices[start..end].select_nth_unstable_by(count / 2, |&a, &b| {
            (points[a][axis], a)
                .partial_cmp(&(points[b][axis], b))
                .unwrap()
        });
        let value = self.points[self.indices[mid]][axis];

        let left = self.build_range(start, mid);
        let right = self.build_range(mid, end);
        self.nodes.push(Node::Split {
            axis,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    /// K-nearest neighbors of `query`, excluding `skip`, sorted by
    /// `(distance, index)`. Identical to [`k_nearest_brute`] by construction.
    pub fn k_nearest(&self, query: &Point3, k: usize, skip: Option<usize>) -> Vec<Neighbor> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        self.search(self.root, query, k, skip, &mut best);
        best
    }

    /// Single nearest neighbor of `query`, excluding `skip`.
    pub fn nearest(&self, query: &Point3, skip: Option<usize>) -> Option<Neighbor> {
        self.k_nearest(query, 1, skip).into_iter().next()
    }

    fn search(&self, node: usize, query: &Point3, k: usize, skip: Option<usize>, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.indices[start..end] {
                    if Some(idx) == skip {
                        continue;
                    }
                    let cand = Neighbor {
                        index: idx,
                        dist_sq: dist_sq(query, &self.points[idx]),
                    };
                    if best.len() < k || cand.closer_than(best.last().unwrap()) {
                        let pos = best.partition_point(|n| n.closer_than(&cand));
                        best.insert(pos, cand);
                        if best.len() > k {
                            best.pop();
                        }
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, skip, best);
                // The far side can still hold ties, so prune with <= only
                // when the worst kept distance is strictly closer.
                if best.len() < k || diff * diff <= best.last().unwrap().dist_sq {
                    self.search(far, query, k, skip, best);
                }
            }
        }
    }
}

/// Dispatches to the kd-tree above this size, brute force below.
pub const KDTREE_THRESHOLD: usize = 512;

/// K-nearest neighbors with the backend chosen by cloud size.
pub fn k_nearest(points: &[Point3], query: &Point3, k: usize, skip: Option<usize>) -> Vec<Neighbor> {
    if points.len() > KDTREE_THRESHOLD {
        KdTree::build(points).k_nearest(query, k, skip)
    } else {
        k_nearest_brute(points, query, k, skip)
    }
}
