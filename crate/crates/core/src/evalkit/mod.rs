//! Evaluation protocols: object-attention statistics over policy rollouts,
//! feature export, and 5-way n-shot nearest-neighbour recognition.

mod attention;
mod recognition;

use thiserror::Error;

use crate::models::ModelError;
use crate::worlds::WorldError;

pub use attention::{attention_durations, attention_frequency, attention_log, attention_stats, evaluate_attention, AttentionLog, AttentionStats};
pub use recognition::{
    build_recognition_dataset, export_features, extract_features, few_shot_curve, import_features, knn_classify, render_view, sample_task,
    FeatureRow, FeatureSet, FewShotTask, LabeledImage, FEATURE_LEN,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("attention window: {0}")]
    Window(String),
    #[error("recognition data: {0}")]
    Dataset(String),
    #[error("sample {0} has no feature row")]
    MissingSample(usize),
    #[error("sample {sample_id} has {len} features, expected 64")]
    FeatureLength { sample_id: usize, len: usize },
    #[error("feature file: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
