//! Gesture classification: windowing, the convolutional network, Adam
//! training and k-fold cross-validation.

mod dataset;
mod network;
mod train;

pub use dataset::{
    segment_windows, shuffled_indices, split_dataset, split_indices, LabeledInterval,
    WindowedDataset, DEFAULT_WINDOW_MS, GESTURE_NAMES,
};
pub use network::{
    adam_step, cross_entropy, forward, loss_and_gradients, predict_proba, AdamConfig, AdamState,
    NetworkParams, NetworkShape, Tensors, LOSS_EPSILON, TENSOR_NAMES,
};
pub use train::{
    cross_validate, evaluate, fold_indices, input_scale, predict, summarize_folds, train,
    EvalReport, TrainConfig, TrainedModel, EVAL_SCHEMA_VERSION,
};
