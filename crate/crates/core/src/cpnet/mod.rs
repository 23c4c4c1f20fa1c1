//! CP-Net assembly, synthetic shape data, training, evaluation, checkpoints
//! and ablation sweeps.

mod ablate;
mod checkpoint;
mod config;
mod data;
mod model;
mod train;

pub use ablate::{ablate, ablation_csv, AblationGrid, AblationRow};
pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, MAGIC, VERSION};
pub use config::{parse_ratio, DownsampleMode, NetworkConfig, RunConfig, TrainConfig};
pub use data::{gen_shapes, sample_shape, ShapeClass, ShapeDataset, Split};
pub use model::{Forward, Model};
pub use train::{
    evaluate, initial_loss, metrics_csv, predict_logits, predictions, score, train,
    EpochMetrics, EvalReport, TrainOutcome, EVAL_BATCH,
};

use thiserror::Error;

use crate::cpl::CplError;
use crate::nn::NnError;
use crate::pcio::PcioError;

#[derive(Debug, Error)]
pub enum CpnetError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint truncated at byte {offset}")]
    TruncatedFile { offset: usize },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Cpl(#[from] CplError),
    #[error(transparent)]
    Pcio(#[from] PcioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mix a base seed with a path of integers (splitmix64 finalizer per step),
/// giving independent streams for splits, epochs, batches and clouds.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = base ^ 0x6a09_e667_f3bc_c909;
    for &p in path {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}
