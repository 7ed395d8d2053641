//! Loss, optimizer, dataset splitting, the training loop, and the model file.

mod adam;
mod dataset;
mod fit;
mod io;
mod loss;

pub use adam::{adam_step, AdamParams, AdamState};
pub use dataset::{
    band_label, prepare_dataset, reduce_train, split_dataset, window_dataset, window_seed, SplitDataset,
    SplitLevel,
};
pub use fit::{predict_classes, retrain_transfer, train, Batch, EpochRecord, TrainConfig, TrainHistory};
pub use io::{load_model, load_model_with_meta, model_to_json, save_model, TrainMeta, FORMAT_VERSION};
pub use loss::{sparse_ce_loss, PROB_FLOOR};

use crate::nn::NnError;
use crate::trajectory::TrajectoryError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("label {label} is outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("window from `{0}` has no label")]
    UnlabeledWindow(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class {0} has no recordings")]
    EmptyClass(usize),
    #[error("model predicts {model} classes but the data has {data}")]
    ClassCountMismatch { model: usize, data: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("cannot freeze {0} blocks; the model has 4")]
    FreezeOutOfRange(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model file has format_version {found}, expected {FORMAT_VERSION}")]
    SchemaVersionMismatch { found: String },
    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),
    #[error("cannot access {path}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}
