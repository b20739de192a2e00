//! Static k-d tree over cluster centroids for exact nearest-centroid queries.
//!
//! Ties are resolved towards the lowest original index, so query results are
//! identical to a linear scan that keeps the first minimum.

use crate::{Error, Point, Result};

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
pub struct CentroidIndex {
    points: Vec<Point>,
    /// Permutation of `0..K` arranged so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl CentroidIndex {
    pub fn build(centroids: &[Point]) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::InvalidInput("cannot index an empty centroid list".into()));
        }
        if centroids.iter().any(|c| !c.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidInput("non-finite centroid".into()));
        }
        let mut index = CentroidIndex {
            points: centroids.to_vec(),
            order: (0..centroids.len()).collect(),
            nodes: Vec::with_capacity(2 * centroids.len() / LEAF_SIZE + 1),
        };
        index.build_node(0, centroids.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split on the axis of largest extent at the median.
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
            .unwrap();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            points[i][axis].total_cmp(&points[j][axis])
        });
        let value = self.points[self.order[mid]][axis];

        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroids(&self) -> &[Point] {
        &self.points
    }

    /// Exact nearest centroid: `(index, squared distance)`.
    pub fn nearest(&self, p: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, p, &mut best);
        best
    }

    fn search(&self, node: usize, p: &Point, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = squared_distance(p, &self.points[i]);
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
                let diff = p[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, p, best);
                // Non-strict so that equidistant centroids on the far side still compete on index.
                if diff * diff <= best.1 {
                    self.search(far, p, best);
                }
            }
        }
    }
}
