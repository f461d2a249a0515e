pub mod completion;
pub mod cp;
pub mod detect;
pub mod error;
pub mod io;
mod linalg;
pub mod lstm;
pub mod pipeline;
pub mod predictors;
pub mod synth;
pub mod tensor;

pub use completion::{complete, impute, CompletionOptions, CompletionResult, CpVariant};
pub use cp::{cp_als, masked_cp_als, rank_sweep, reconstruct, AlsOptions, FactorSet};
pub use detect::{detect, roc, RocCurve, RocPoint};
pub use pipeline::{
    joint_complete_predict, joint_complete_predict_and_score, predict_and_score, predict_tensor,
    prediction_error, split_learn_predict, PipelineConfig, PredictionMode, PredictionReport,
    PredictorKind,
};
pub use error::{Error, Result};
pub use tensor::{BoolTensor3, MaskTensor3, Mat, Tensor3};
