//! Training engine for the CSI fingerprint identifier.
//!
//! Layers carry their own forward caches and backward passes, so a model is
//! differentiated in reverse by calling `backward` on its parts in reverse
//! order. Everything runs single-threaded; with a fixed seed a training run is
//! bit-reproducible.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use checkpoint::{CheckpointError, CheckpointKind, EpochMetrics, ModelCheckpoint};
pub use error::{NnError, Result};
pub use loss::{argmax_rows, ce_loss, supcon_loss, LossOutput};
pub use model::{Activation, EncoderConfig, HeadConfig, Network};
pub use optim::{Adam, AdamConfig};
pub use scalar::Scalar;
pub use tensor::{Module, Param, Tensor};
pub use train::{
    classify_validation, network_from_checkpoint, train_stage1, train_stage2, EarlyStopping, ModelSnapshot, Samples,
    TrainConfig, TrainData,
};
