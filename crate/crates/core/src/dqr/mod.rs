//! Deep quantile regression: ConvLSTM encoder–decoder trained on the joint
//! squared-error + pinball loss.

pub mod levels;
pub mod loss;
pub mod model;
pub mod train;

pub use levels::{QuantileLevels, REPORT_INTERVALS};
pub use model::{predict_dqr, DqrConfig, DqrModel, DqrPredictions, QuantilePrediction};
pub use train::{evaluate_dqr, train_dqr};
