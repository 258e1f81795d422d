use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// k nearest neighbors per query row, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.k.max(1))
    }

    /// Builds a table from explicit rows, all of length `k`.
    pub fn from_rows(k: usize, rows: &[Vec<usize>]) -> Result<Self> {
        let mut indices = Vec::with_capacity(k * rows.len());
        for r in rows {
            if r.len() != k {
                return Err(Error::Shape(format!("neighbor row of length {} (expected {k})", r.len())));
            }
            indices.extend_from_slice(r);
        }
        Ok(NeighborTable { k, indices })
    }
}

/// Static kd-tree over 2D or 3D points with exact k-NN queries.
///
/// Ties in distance resolve to the lower point index.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    nodes: Vec<KdNode>,
    order: Vec<usize>,
}

#[derive(Debug, Clone)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn new(points: ArrayView2<f64>) -> Result<Self> {
        let dim = points.ncols();
        if !(dim == 2 || dim == 3) {
            return Err(Error::Shape(format!("k-NN supports 2 or 3 columns, got {dim}")));
        }
        let coords: Vec<f64> = points.iter().copied().collect();
        let mut tree = KdTree {
            dim,
            coords,
            nodes: Vec::new(),
            order: (0..points.nrows()).collect(),
        };
        if points.nrows() > 0 {
            tree.build(0, points.nrows(), 0);
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn coord(&self, i: usize, d: usize) -> f64 {
        self.coords[i * self.dim + d]
    }

    fn build(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        // split on the widest axis
        let mut axis = 0;
        let mut widest = -1.0;
        for d in 0..self.dim {
            let (lo, hi) = self.order[start..end]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let x = self.coord(i, d);
                    (lo.min(x), hi.max(x))
                });
            if hi - lo > widest {
                widest = hi - lo;
                axis = d;
            }
        }
        if widest <= 0.0 || depth > 64 {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let (dim, coords) = (self.dim, &self.coords);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + axis].total_cmp(&coords[b * dim + axis])
        });
        let value = self.coord(self.order[mid], axis);
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid, depth + 1);
        let right = self.build(mid, end, depth + 1);
        self.nodes[id] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, optionally skipping one index.
    /// Returned nearest first as `(index, squared distance)`.
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, exclude, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist)).collect()
    }

    /// Single nearest neighbor as `(index, squared distance)`.
    pub fn nearest_one(&self, query: &[f64]) -> (usize, f64) {
        self.nearest(query, 1, None)[0]
    }

    fn search(&self, node: usize, q: &[f64], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let mut dist = 0.0;
                    for (d, qd) in q.iter().enumerate().take(self.dim) {
                        let t = self.coords[i * self.dim + d] - qd;
                        dist += t * t;
                    }
                    let cand = Candidate { dist, index: i };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, heap);
                // equal distances must still be visited for the index tie-break
                if heap.len() < k || delta * delta <= heap.peek().unwrap().dist {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }
}

/// Exact k-NN of every query row among `data` rows.
pub fn knn(query: ArrayView2<f64>, data: ArrayView2<f64>, k: usize) -> Result<NeighborTable> {
    knn_impl(query, data, k, false)
}

/// k-NN of every data row among the others (the point itself is excluded).
pub fn knn_self(data: ArrayView2<f64>, k: usize) -> Result<NeighborTable> {
    knn_impl(data, data, k, true)
}

fn knn_impl(query: ArrayView2<f64>, data: ArrayView2<f64>, k: usize, exclude_self: bool) -> Result<NeighborTable> {
    if k >= data.nrows() {
        return Err(Error::Argument(format!(
            "k = {k} must be smaller than the number of data points ({})",
            data.nrows()
        )));
    }
    if query.ncols() != data.ncols() {
        return Err(Error::Shape("query and data dimensions differ".into()));
    }
    let tree = KdTree::new(data)?;
    let mut indices = Vec::with_capacity(query.nrows() * k);
    let mut q = vec![0.0; data.ncols()];
    for (i, row) in query.rows().into_iter().enumerate() {
        for (d, x) in row.iter().enumerate() {
            q[d] = *x;
        }
        let exclude = exclude_self.then_some(i);
        indices.extend(tree.nearest(&q, k, exclude).into_iter().map(|(j, _)| j));
    }
    Ok(NeighborTable { k, indices })
}
