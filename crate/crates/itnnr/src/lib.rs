//! Inversion of non-injective maps by anchored correction.
//!
//! Given a forward map `f` and a query output `y`, the library recovers
//! candidate inputs by picking anchor points with nearby outputs and training
//! a twin network to predict the input-space correction from an anchor to the
//! preimage. Candidates are ranked by how well `f` maps them back to `y`.
//! Baselines (nearest neighbor, direct inverse regression) and a benchmark
//! harness over nine closed-form problems live here too.

pub mod error;
pub mod harness;
pub mod inversion;
pub mod knn;
pub mod nn;
pub mod problems;
pub mod twinning;
