//! Twin-pair construction from measured data.
//!
//! A twin network learns corrections between nearby inputs, so its training
//! rows are pairs: for each point i and each of its k nearest input-space
//! neighbors j, one row with inputs (y_i, y_j, x_j) and target x_i - x_j.
//! The anchor-spacing estimate feeding generator mode lives here too.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::knn::PointIndex;
use crate::problems::Dataset;

/// Pair rows ready for twin training: inputs are (y_i, y_j, x_j)
/// concatenated to width 2q+p, targets are x_i - x_j of width p.
#[derive(Debug, Clone)]
pub struct TwinBatch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl TwinBatch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

fn fill_row(
    inputs: &mut Array2<f64>,
    targets: &mut Array2<f64>,
    row: usize,
    y_i: &[f64],
    y_j: &[f64],
    x_j: &[f64],
    x_i: &[f64],
) {
    let q = y_i.len();
    let p = x_j.len();
    for (c, v) in y_i.iter().enumerate() {
        inputs[[row, c]] = *v;
    }
    for (c, v) in y_j.iter().enumerate() {
        inputs[[row, q + c]] = *v;
    }
    for (c, v) in x_j.iter().enumerate() {
        inputs[[row, 2 * q + c]] = *v;
    }
    for c in 0..p {
        targets[[row, c]] = x_i[c] - x_j[c];
    }
}

/// Pairs every training point with its k nearest input-space neighbors
/// (self excluded). Output has exactly n*k rows, the block for point i
/// preceding the block for point i+1, neighbors in nearest-first order.
pub fn build_pair_dataset(train: &Dataset, k: usize) -> Result<TwinBatch> {
    let n = train.x.nrows();
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::Argument(format!(
            "pairing with k={k} needs at least {} points, training set has {n}",
            k + 1
        )));
    }
    let p = train.x.ncols();
    let q = train.y.ncols();
    let index = PointIndex::from_array(train.x.view())?;
    let mut inputs = Array2::zeros((n * k, 2 * q + p));
    let mut targets = Array2::zeros((n * k, p));
    for i in 0..n {
        let x_i = train.x.row(i).to_vec();
        let neighbors = index.query_knn(&x_i, k, Some(i))?;
        for (rank, neighbor) in neighbors.entries.iter().enumerate() {
            let j = neighbor.id;
            fill_row(
                &mut inputs,
                &mut targets,
                i * k + rank,
                &train.y.row(i).to_vec(),
                &train.y.row(j).to_vec(),
                &train.x.row(j).to_vec(),
                &x_i,
            );
        }
    }
    Ok(TwinBatch { inputs, targets })
}

/// Pairs each query point with its k nearest anchors by input-space distance.
/// Same row layout as [`build_pair_dataset`]; used to build validation pairs
/// against the training anchors, so no self-exclusion applies.
pub fn build_validation_pairs(queries: &Dataset, anchors: &Dataset, k: usize) -> Result<TwinBatch> {
    let n = queries.x.nrows();
    if n == 0 {
        return Err(Error::Argument("query set is empty".into()));
    }
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if k > anchors.x.nrows() {
        return Err(Error::Argument(format!(
            "pairing with k={k} anchors, only {} available",
            anchors.x.nrows()
        )));
    }
    if queries.x.ncols() != anchors.x.ncols() || queries.y.ncols() != anchors.y.ncols() {
        return Err(Error::Shape(
            "query and anchor sets have different widths".into(),
        ));
    }
    let p = queries.x.ncols();
    let q = queries.y.ncols();
    let index = PointIndex::from_array(anchors.x.view())?;
    let mut inputs = Array2::zeros((n * k, 2 * q + p));
    let mut targets = Array2::zeros((n * k, p));
    for i in 0..n {
        let x_i = queries.x.row(i).to_vec();
        let neighbors = index.query_knn(&x_i, k, None)?;
        for (rank, neighbor) in neighbors.entries.iter().enumerate() {
            let j = neighbor.id;
            fill_row(
                &mut inputs,
                &mut targets,
                i * k + rank,
                &queries.y.row(i).to_vec(),
                &anchors.y.row(j).to_vec(),
                &anchors.x.row(j).to_vec(),
                &x_i,
            );
        }
    }
    Ok(TwinBatch { inputs, targets })
}

/// Mean absolute per-coordinate offset from each point to its k nearest
/// input-space neighbors, averaged over all points. This is the natural
/// length scale for generator perturbations.
pub fn estimate_anchor_scale(x: ndarray::ArrayView2<'_, f64>, k: usize) -> Result<Vec<f64>> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::Argument(format!(
            "scale estimate with k={k} needs at least {} points, got {n}",
            k + 1
        )));
    }
    let p = x.ncols();
    let index = PointIndex::from_array(x)?;
    let mut acc = vec![0.0; p];
    for i in 0..n {
        let xi = x.row(i).to_vec();
        let neighbors = index.query_knn(&xi, k, Some(i))?;
        for neighbor in &neighbors.entries {
            for c in 0..p {
                acc[c] += (x[[neighbor.id, c]] - xi[c]).abs();
            }
        }
    }
    let count = (n * k) as f64;
    Ok(acc.into_iter().map(|a| a / count).collect())
}
