//! U-Net segmentation of melt-pool micrographs: network, loss, RMSprop
//! training, checkpoints, prediction and the batch-size/learning-rate grid.

pub mod checkpoint;
pub mod error;
pub mod grid;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod predict;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use error::{Result, UnetError};
pub use grid::{grid_search, GridRow, GridSpec};
pub use model::{StageShape, UNet, UNetConfig, UpMode};
pub use predict::{predict_mask, predict_probabilities, ConstantModel, SegmentationModel};
pub use tensor::Tensor;
pub use train::{evaluate, train, Dataset, EpochStats, TrainConfig, TrainOutcome, Trainer, TrainingHistory};
