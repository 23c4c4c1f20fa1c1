//! Dense reverse-mode autodiff and the layers a CP-Net needs.

mod knn;
mod layers;
mod matrix;
mod optim;
mod params;
mod tape;

pub use knn::{knn_build, KnnGraph, NeighborIndex};
pub use layers::{
    dropout, edge_affine, max_aggregate, update_running_stats, BatchNorm, EdgeConv, FcHead,
    Linear, MlpLayer, Session, SharedMlp,
};
pub use matrix::Matrix;
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{BatchStats, Gradients, Tape, Value, BN_EPS};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NnError {
    #[error("k = {k} neighbours requested but only {n} points (need 1 <= k < n)")]
    KTooLarge { k: usize, n: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}
