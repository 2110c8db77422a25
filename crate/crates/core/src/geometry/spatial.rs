//! A static k-d tree over fixed-dimension points.
//!
//! Results are ordered by `(squared distance, index)`, so queries are fully
//! deterministic even with duplicate points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let n = points.len();
            build(&points, &mut order, 0, n, &mut nodes);
        }
        KdTree {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64; D] {
        &self.points[index]
    }

    pub fn nearest(&self, query: &[f64; D]) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    /// The `k` nearest points, closest first.
    pub fn knn(&self, query: &[f64; D], k: usize) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        out
    }

    /// At most `max` nearest points within `radius`, closest first.
    pub fn knn_within(&self, query: &[f64; D], radius: f64, max: usize) -> Vec<Neighbor> {
        let r2 = radius * radius;
        let mut out = self.knn(query, max);
        out.retain(|n| n.dist2 <= r2);
        out
    }

    /// Every point within `radius`, closest first.
    pub fn within(&self, query: &[f64; D], radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.within_rec(0, query, radius * radius, &mut out);
        }
        out.sort();
        out
    }

    fn knn_rec(&self, node: usize, q: &[f64; D], k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: dist2(&self.points[i], q),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    fn within_rec(&self, node: usize, q: &[f64; D], r2: f64, out: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if d <= r2 {
                        out.push(Neighbor { index: i, dist2: d });
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.within_rec(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.within_rec(right, q, r2, out);
                }
            }
        }
    }
}

fn build<const D: usize>(
    points: &[[f64; D]],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    // split on the axis of largest spread
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for &i in &order[start..end] {
        for d in 0..D {
            lo[d] = lo[d].min(points[i][d]);
            hi[d] = hi[d].max(points[i][d]);
        }
    }
    let dim = (0..D)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap();
    if hi[dim] - lo[dim] <= 0.0 {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
    });
    let value = points[order[mid]][dim];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    // left holds everything before `mid` (coordinates <= value), right the rest (>= value)
    let left = build(points, order, start, mid, nodes);
    let right = build(points, order, mid, end, nodes);
    nodes[id] = Node::Split {
        dim,
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

    fn brute<const D: usize>(pts: &[[f64; D]], q: &[f64; D]) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| Neighbor {
                index: i,
                dist2: dist2(p, q),
            })
            .collect();
        all.sort();
        all
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts: Vec<[f64; 3]> = (0..2000)
            .map(|_| {
                [
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                ]
            })
            .collect();
        // duplicates exercise the index tie-break
        pts.extend_from_within(..50);
        let tree = KdTree::new(pts.clone());
        for _ in 0..200 {
            let q = [
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ];
            let expect = brute(&pts, &q);
            assert_eq!(tree.knn(&q, 9), expect[..9].to_vec());
            let r = 0.1;
            let inside: Vec<Neighbor> = expect
                .iter()
                .copied()
                .filter(|n| n.dist2 <= r * r)
                .collect();
            assert_eq!(tree.within(&q, r), inside);
        }
    }

    #[test]
    fn high_dimensional_and_degenerate() {
        let pts: Vec<[f64; 5]> = (0..100)
            .map(|i| [(i % 3) as f64, 0.0, 0.0, 0.0, 0.0])
            .collect();
        let tree = KdTree::new(pts.clone());
        let q = [1.1, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(tree.knn(&q, 5), brute(&pts, &q)[..5].to_vec());
        let empty = KdTree::<3>::new(Vec::new());
        assert!(empty.nearest(&[0.0; 3]).is_none());
    }
}
