//! The sparse autoencoder: model, sparsity operators, losses, training, calibration.

mod calibrate;
mod code;
pub mod grad;
mod loss;
mod model;
mod sparsity;
mod train;

pub use calibrate::calibrate_threshold;
pub use code::SparseCode;
pub use loss::{aux_loss, matryoshka_loss, reconstruction_loss, validate_matryoshka_sizes};
pub use model::SaeModel;
pub use sparsity::{apply_sparsity, batch_topk, per_token_topk, SparsityMode};
pub use train::{train, DeadLatentTracker, TrainConfig, TrainRecord, TrainReport, FULL_SCALE_LATENT_DIM};
