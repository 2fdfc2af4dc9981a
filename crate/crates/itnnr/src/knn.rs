//! Exact k-nearest-neighbor search in Euclidean distance.
//!
//! [`PointIndex`] holds an immutable point set behind a kd-tree. Queries return
//! the exact same neighbors an exhaustive scan would, including the tie-break
//! rule: equal distances are ordered by lower point id. Point ids are the
//! insertion order of the rows the index was built from.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Leaf size below which subtrees are scanned linearly.
const LEAF_SIZE: usize = 12;

/// One retrieved neighbor: the stored point's id and its Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

/// Neighbors ordered by non-decreasing distance, ties by lower id.
///
/// When fewer points than requested are available (after exclusion), the list
/// holds everything available and [`NeighborList::is_short`] reports it.
#[derive(Debug, Clone)]
pub struct NeighborList {
    pub entries: Vec<Neighbor>,
    requested: usize,
}

impl NeighborList {
    pub fn is_short(&self) -> bool {
        self.entries.len() < self.requested
    }

    pub fn ids(&self) -> Vec<usize> {
        self.entries.iter().map(|n| n.id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug)]
enum Node {
    Leaf {
        /// Indices into `PointIndex::ids` order (point ids).
        ids: Vec<usize>,
    },
    Split {
        dim: usize,
        /// Left subtree holds coordinates <= value, right >= value.
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable exact nearest-neighbor index over fixed-width points.
#[derive(Debug)]
pub struct PointIndex {
    points: Vec<f64>,
    dimension: usize,
    len: usize,
    nodes: Vec<Node>,
    root: usize,
}

impl PointIndex {
    /// Builds an index over rows of a matrix; ids follow row order.
    pub fn from_array(points: ArrayView2<'_, f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::Argument("cannot index an empty point set".into()));
        }
        let dimension = points.ncols();
        if dimension == 0 {
            return Err(Error::Shape("points must have at least one coordinate".into()));
        }
        let mut flat = Vec::with_capacity(points.nrows() * dimension);
        for row in points.rows() {
            flat.extend(row.iter().copied());
        }
        Ok(Self::build(flat, dimension, points.nrows()))
    }

    /// Builds an index from explicit rows, checking for ragged widths.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Argument("cannot index an empty point set".into()));
        }
        let dimension = rows[0].as_ref().len();
        if dimension == 0 {
            return Err(Error::Shape("points must have at least one coordinate".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * dimension);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dimension {
                return Err(Error::Shape(format!(
                    "row {i} has width {}, expected {dimension}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Ok(Self::build(flat, dimension, rows.len()))
    }

    fn build(points: Vec<f64>, dimension: usize, len: usize) -> Self {
        let mut index = PointIndex {
            points,
            dimension,
            len,
            nodes: Vec::new(),
            root: 0,
        };
        let mut ids: Vec<usize> = (0..len).collect();
        index.root = index.build_node(&mut ids);
        index
    }

    fn coord(&self, id: usize, dim: usize) -> f64 {
        self.points[id * self.dimension + dim]
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.points[id * self.dimension..(id + 1) * self.dimension]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn build_node(&mut self, ids: &mut [usize]) -> usize {
        if ids.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { ids: ids.to_vec() });
            return self.nodes.len() - 1;
        }
        // Split on the dimension with the widest extent.
        let mut dim = 0;
        let mut widest = f64::NEG_INFINITY;
        for d in 0..self.dimension {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &id in ids.iter() {
                let c = self.coord(id, d);
                lo = lo.min(c);
                hi = hi.max(c);
            }
            if hi - lo > widest {
                widest = hi - lo;
                dim = d;
            }
        }
        let mid = ids.len() / 2;
        // Total order (coordinate, id) keeps the partition deterministic
        // under duplicate coordinates.
        ids.select_nth_unstable_by(mid, |&a, &b| {
            self.coord(a, dim)
                .partial_cmp(&self.coord(b, dim))
                .unwrap()
                .then(a.cmp(&b))
        });
        let value = self.coord(ids[mid], dim);
        let (lo_ids, hi_ids) = ids.split_at_mut(mid);
        let left = self.build_node(lo_ids);
        let right = self.build_node(hi_ids);
        self.nodes.push(Node::Split {
            dim,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    /// Exact k-nearest neighbors of `query`, optionally excluding one stored id.
    ///
    /// Ties in distance are broken by lower id, matching an exhaustive scan.
    /// Asking for more points than remain after exclusion returns everything
    /// available, flagged short.
    pub fn query_knn(
        &self,
        query: &[f64],
        k: usize,
        exclude_id: Option<usize>,
    ) -> Result<NeighborList> {
        if query.len() != self.dimension {
            return Err(Error::Shape(format!(
                "query has width {}, index dimension is {}",
                query.len(),
                self.dimension
            )));
        }
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        let mut best = BestK::new(k);
        self.search(self.root, query, exclude_id, &mut best);
        Ok(NeighborList {
            entries: best.into_sorted(),
            requested: k,
        })
    }

    fn search(&self, node: usize, query: &[f64], exclude_id: Option<usize>, best: &mut BestK) {
        match &self.nodes[node] {
            Node::Leaf { ids } => {
                for &id in ids {
                    if Some(id) == exclude_id {
                        continue;
                    }
                    best.offer(id, squared_distance(query, self.point(id)));
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[*dim] - value;
                let (near, far) = if diff <= 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, query, exclude_id, best);
                // The far side can still hold an equal-distance point with a
                // lower id, so descend on <= rather than <.
                if !best.full() || diff * diff <= best.worst() {
                    self.search(far, query, exclude_id, best);
                }
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Bounded best-k collector ordered by (squared distance, id).
struct BestK {
    k: usize,
    /// Kept sorted ascending by (d2, id); last entry is the current worst.
    entries: Vec<(f64, usize)>,
}

impl BestK {
    fn new(k: usize) -> Self {
        BestK {
            k,
            entries: Vec::with_capacity(k + 1),
        }
    }

    fn full(&self) -> bool {
        self.entries.len() == self.k
    }

    fn worst(&self) -> f64 {
        self.entries.last().map(|e| e.0).unwrap_or(f64::INFINITY)
    }

    fn offer(&mut self, id: usize, d2: f64) {
        if self.full() {
            let worst = *self.entries.last().unwrap();
            if (d2, id) >= worst {
                return;
            }
        }
        let pos = self.entries.partition_point(|&e| e < (d2, id));
        self.entries.insert(pos, (d2, id));
        if self.entries.len() > self.k {
            self.entries.pop();
        }
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        self.entries
            .into_iter()
            .map(|(d2, id)| Neighbor {
                id,
                distance: d2.sqrt(),
            })
            .collect()
    }
}
