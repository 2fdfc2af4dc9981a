//! Anchored inversion: predict corrections from selected anchors, then rank
//! candidates by how consistently they map back to the query output.
//!
//! The twin network F takes (y_new, y_anchor, x_anchor) and predicts
//! x_new - x_anchor, so each anchor contributes one candidate preimage
//! x_hat = F(...) + x_anchor. Anchors are the k nearest neighbors of y_new
//! among the stored outputs. A candidate's score is the distance between
//! f_check(x_hat) and y_new, where f_check is the exact forward map when it
//! is known, or a learned surrogate when outputs are noisy.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::knn::PointIndex;
use crate::nn::{
    column_stats, mlp_forward, mlp_init_standardized, train, MlpModel, ShuffledBatches,
    TrainConfig,
};
use crate::problems::Dataset;

/// Stored (x, y) pairs with a nearest-neighbor index over the outputs.
#[derive(Debug)]
pub struct AnchorSet {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    y_index: PointIndex,
}

impl AnchorSet {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Argument("anchor set is empty".into()));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!(
                "{} anchor inputs but {} anchor outputs",
                x.nrows(),
                y.nrows()
            )));
        }
        let y_index = PointIndex::from_array(y.view())?;
        Ok(AnchorSet { x, y, y_index })
    }

    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        AnchorSet::new(data.x.clone(), data.y.clone())
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }
}

/// One anchor's raw prediction, before consistency scoring.
#[derive(Debug, Clone)]
pub struct AnchorPrediction {
    pub anchor_id: usize,
    /// 1-based position in the y-distance ordering.
    pub anchor_rank: usize,
    pub x_hat: Vec<f64>,
}

/// A scored candidate preimage.
///
/// `residual` is +inf where f_check declines the candidate (out of domain);
/// JSON renders non-finite floats as null.
#[derive(Debug, Clone, Serialize)]
pub struct InversionCandidate {
    pub anchor_id: usize,
    pub anchor_rank: usize,
    pub x_hat: Vec<f64>,
    pub residual: f64,
}

/// All candidates for one query, in both useful orders.
#[derive(Debug, Clone, Serialize)]
pub struct InversionResult {
    /// Sorted by ascending residual, ties by lower anchor rank.
    pub candidates: Vec<InversionCandidate>,
    /// The same candidates in anchor-rank order (index r holds rank r+1).
    pub by_rank: Vec<InversionCandidate>,
}

impl InversionResult {
    /// The consistency winner.
    pub fn best(&self) -> &InversionCandidate {
        &self.candidates[0]
    }

    /// Candidate at 1-based anchor rank.
    pub fn at_rank(&self, rank: usize) -> &InversionCandidate {
        &self.by_rank[rank - 1]
    }
}

/// Applies the twin network to the k nearest y-space anchors of `y_new`.
///
/// Fewer than k anchors in the set yields a shorter list (the nearest-neighbor
/// short contract); anchor_rank still numbers from 1.
pub fn itnnr_infer(
    f: &MlpModel,
    anchors: &AnchorSet,
    y_new: &[f64],
    k: usize,
) -> Result<Vec<AnchorPrediction>> {
    let p = anchors.input_dim();
    let q = anchors.output_dim();
    if y_new.len() != q {
        return Err(Error::Shape(format!(
            "query has {} components, anchors store {q}-dimensional outputs",
            y_new.len()
        )));
    }
    if f.input_width() != 2 * q + p {
        return Err(Error::Shape(format!(
            "twin network expects input width {}, anchors imply {}",
            f.input_width(),
            2 * q + p
        )));
    }
    if f.output_width() != p {
        return Err(Error::Shape(format!(
            "twin network emits width {}, anchors imply {p}",
            f.output_width()
        )));
    }
    let neighbors = anchors.y_index.query_knn(y_new, k, None)?;
    let found = neighbors.entries.len();
    let mut net_inputs = Array2::zeros((found, 2 * q + p));
    for (r, neighbor) in neighbors.entries.iter().enumerate() {
        let j = neighbor.id;
        for c in 0..q {
            net_inputs[[r, c]] = y_new[c];
            net_inputs[[r, q + c]] = anchors.y[[j, c]];
        }
        for c in 0..p {
            net_inputs[[r, 2 * q + c]] = anchors.x[[j, c]];
        }
    }
    let deltas = mlp_forward(f, net_inputs.view())?;
    let mut predictions = Vec::with_capacity(found);
    for (r, neighbor) in neighbors.entries.iter().enumerate() {
        let j = neighbor.id;
        let x_hat: Vec<f64> = (0..p).map(|c| deltas[[r, c]] + anchors.x[[j, c]]).collect();
        predictions.push(AnchorPrediction {
            anchor_id: j,
            anchor_rank: r + 1,
            x_hat,
        });
    }
    Ok(predictions)
}

/// Scores candidates by forward consistency and sorts ascending.
///
/// `f_check` returns None where it refuses to evaluate (out-of-domain
/// candidate); those and any non-finite distances score +inf. Ties break
/// toward the lower anchor rank, so the order is always a permutation of the
/// rank order.
pub fn rank_by_consistency<FC>(
    predictions: Vec<AnchorPrediction>,
    f_check: FC,
    y_new: &[f64],
) -> InversionResult
where
    FC: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut by_rank: Vec<InversionCandidate> = predictions
        .into_iter()
        .map(|pred| {
            let residual = match f_check(&pred.x_hat) {
                Some(y_check) => {
                    let d2: f64 = y_check
                        .iter()
                        .zip(y_new)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let d = d2.sqrt();
                    if d.is_finite() {
                        d
                    } else {
                        f64::INFINITY
                    }
                }
                None => f64::INFINITY,
            };
            InversionCandidate {
                anchor_id: pred.anchor_id,
                anchor_rank: pred.anchor_rank,
                x_hat: pred.x_hat,
                residual,
            }
        })
        .collect();
    by_rank.sort_by_key(|c| c.anchor_rank);
    let mut candidates = by_rank.clone();
    candidates.sort_by(|a, b| {
        a.residual
            .partial_cmp(&b.residual)
            .expect("residuals are never NaN")
            .then(a.anchor_rank.cmp(&b.anchor_rank))
    });
    InversionResult {
        candidates,
        by_rank,
    }
}

/// The nearest-neighbor baseline: the stored input of the rank-th nearest
/// output. Never averages; each rank is a separate answer.
pub fn knn_invert(anchors: &AnchorSet, y_new: &[f64], rank: usize) -> Result<Vec<f64>> {
    if rank == 0 {
        return Err(Error::Argument("rank must be at least 1".into()));
    }
    if rank > anchors.len() {
        return Err(Error::Argument(format!(
            "rank {rank} requested from {} anchors",
            anchors.len()
        )));
    }
    let neighbors = anchors.y_index.query_knn(y_new, rank, None)?;
    let id = neighbors.entries[rank - 1].id;
    Ok(anchors.x.row(id).to_vec())
}

/// End-to-end inversion of one query: infer per-anchor candidates, then rank.
pub fn invert<FC>(
    f: &MlpModel,
    anchors: &AnchorSet,
    f_check: FC,
    k: usize,
    y_new: &[f64],
) -> Result<InversionResult>
where
    FC: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let predictions = itnnr_infer(f, anchors, y_new, k)?;
    Ok(rank_by_consistency(predictions, f_check, y_new))
}

/// Derived sub-seeds keep init and batch order decorrelated while staying a
/// pure function of the configured seed. Tags 1..4 are claimed by the
/// trainers below; the experiment runner uses higher tags.
pub(crate) fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(10).wrapping_add(tag)
}

/// Trains a plain input-to-target regression with data-calibrated
/// initialization, batching and validating on the given splits.
fn train_regression(
    inputs: &ndarray::Array2<f64>,
    targets: &ndarray::Array2<f64>,
    val_inputs: &ndarray::Array2<f64>,
    val_targets: &ndarray::Array2<f64>,
    hidden: &[usize],
    config: &TrainConfig,
    init_seed: u64,
    shuffle_seed: u64,
) -> Result<MlpModel> {
    let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
    layer_sizes.push(inputs.ncols());
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(targets.ncols());
    let (in_mean, in_std) = column_stats(inputs.view());
    let (_, target_std) = column_stats(targets.view());
    let model = mlp_init_standardized(&layer_sizes, init_seed, &in_mean, &in_std, &target_std)?;
    let mut source = ShuffledBatches::new(
        inputs.clone(),
        targets.clone(),
        config.batch_size,
        shuffle_seed,
    )?;
    let (trained, _) = train(
        model,
        &mut source,
        val_inputs.view(),
        val_targets.view(),
        config,
    )?;
    Ok(trained)
}

/// Trains the direct inverse baseline: a network regressing x from y.
pub fn train_direct_inverse(
    train_data: &Dataset,
    val_data: &Dataset,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<MlpModel> {
    train_regression(
        &train_data.y,
        &train_data.x,
        &val_data.y,
        &val_data.x,
        hidden,
        config,
        sub_seed(config.seed, 1),
        sub_seed(config.seed, 2),
    )
}

/// Trains the forward surrogate: a network regressing y from x, used as the
/// consistency check when the exact forward map cannot be trusted (noise).
pub fn train_forward_surrogate(
    train_data: &Dataset,
    val_data: &Dataset,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<MlpModel> {
    train_regression(
        &train_data.x,
        &train_data.y,
        &val_data.x,
        &val_data.y,
        hidden,
        config,
        sub_seed(config.seed, 3),
        sub_seed(config.seed, 4),
    )
}

/// Evaluates a trained model on one input vector.
pub fn predict_one(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    let input = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .expect("shape matches the data length");
    let out = mlp_forward(model, input.view())?;
    Ok(out.row(0).to_vec())
}
