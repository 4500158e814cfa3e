//! Bayesian LSTM encoder–decoder trained by Bayes-by-backprop.

pub mod model;
pub mod prior;
pub mod train;

pub use model::{
    draw_rng, elbo_minibatch_loss, elbo_on_tape, sample_predict, sample_predict_batch, sample_weights, BrnnConfig,
    BrnnModel, ElboTerms, SampleOptions, SampledForward, VariationalParam, VariationalWeights,
};
pub use prior::{log_mixture_prior, MixturePrior};
pub use train::{evaluate_brnn, train_brnn};
