//! Exact k-nearest-neighbor search.
//!
//! Results are ordered by `(squared distance, index)`, so equal distances
//! resolve to the lower index. Both the linear scan and the kd-tree honor
//! the same total order and therefore return identical answers.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::cloud::{dist2, Point3, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_k(k: usize, available: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::EmptyQuery);
    }
    if k > available {
        return Err(Error::InsufficientPoints {
            needed: k,
            available,
        });
    }
    Ok(())
}

/// Indices of the `k` points nearest to `query`, nearest first.
pub fn knn(points: &PointCloud, query: &Point3, k: usize) -> Result<Vec<usize>> {
    knn_slice(points.points(), query, k)
}

pub fn knn_slice(points: &[Point3], query: &Point3, k: usize) -> Result<Vec<usize>> {
    check_k(k, points.len())?;
    let mut cands: Vec<Candidate> = points
        .iter()
        .enumerate()
        .map(|(index, p)| Candidate {
            dist2: dist2(p, query),
            index,
        })
        .collect();
    if k < cands.len() {
        cands.select_nth_unstable(k - 1);
        cands.truncate(k);
    }
    cands.sort_unstable();
    Ok(cands.into_iter().map(|c| c.index).collect())
}

/// Index of the nearest point and its squared distance.
pub fn nearest(points: &[Point3], query: &Point3) -> Option<(usize, f64)> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| Candidate {
            dist2: dist2(p, query),
            index,
        })
        .min()
        .map(|c| (c.index, c.dist2))
}

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

/// Static kd-tree over a borrowed point slice.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut tree = KdTree {
            points,
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
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Same contract as [`knn`].
    pub fn knn(&self, query: &Point3, k: usize) -> Result<Vec<usize>> {
        check_k(k, self.points.len())?;
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort_unstable();
        Ok(out.into_iter().map(|c| c.index).collect())
    }

    fn search(&self, node: usize, query: &Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let c = Candidate {
                        dist2: dist2(&self.points[index], query),
                        index,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if let Some(worst) = heap.peek() {
                        if c < *worst {
                            heap.pop();
                            heap.push(c);
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
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, heap);
                // Equal plane distance must still be explored: a tie may carry a lower index.
                let plane = diff * diff;
                let visit = heap.len() < k || heap.peek().is_some_and(|w| plane <= w.dist2);
                if visit {
                    self.search(far, query, k, heap);
                }
            }
        }
    }

    /// kNN for every point of `queries`.
    pub fn knn_all(&self, queries: &[Point3], k: usize) -> Result<Vec<Vec<usize>>> {
        queries.iter().map(|q| self.knn(q, k)).collect()
    }
}
