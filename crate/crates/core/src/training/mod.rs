//! Cross-entropy loss, the training loop and gradient checking.

mod gradcheck;
mod loss;
mod trainer;

pub use gradcheck::{
    gradcheck_params, gradient_check, tensor_relative_error, GradCheckReport, TensorCheck,
    GRADCHECK_MAX_PARAMS,
};
pub use loss::cross_entropy;
pub use trainer::{
    evaluate_bags, prediction_metrics, train, EpochRecord, Prediction, TrainConfig, TrainLog,
};
