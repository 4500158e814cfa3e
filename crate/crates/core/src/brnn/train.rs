use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{elbo_on_tape, BrnnConfig, BrnnModel};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, AdamConfig, Tape, GRAD_CLIP_NORM};
use crate::prep::LinkSeriesTensor;
use crate::training::{ordered_batches, shuffled_batches, EarlyStopping, EpochRecord, StopReason, TrainingLog};

const EVAL_BATCH: usize = 256;

fn check_geometry(model: &BrnnModel, t: &LinkSeriesTensor, which: &str) -> Result<()> {
    if t.n_links() != model.n_links || t.grid.window_u != model.window_u || t.grid.horizon_k != model.horizon_k {
        return Err(Error::invalid(format!("{which} tensors do not match the model geometry")));
    }
    if t.n_samples() == 0 {
        return Err(Error::invalid(format!("{which} tensors are empty")));
    }
    Ok(())
}

/// Gaussian negative log-likelihood per observed cell, averaged over
/// `config.val_draws` weight samples drawn from a fixed stream.
pub fn evaluate_brnn(model: &BrnnModel, data: &LinkSeriesTensor) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    rng.set_stream(3);
    let draws: Vec<_> = (0..model.config.val_draws).map(|_| model.weights.draw_eps(&mut rng)).collect();
    let mut total = 0.0;
    let mut cells = 0.0;
    for idx in ordered_batches(data.n_samples(), EVAL_BATCH) {
        let (x, y, m) = data.batch(&idx);
        for eps in &draws {
            let mut tape = Tape::new();
            let (_, terms) = elbo_on_tape(&mut tape, model, &x, &y, &m, 1, std::slice::from_ref(eps))?;
            total += terms.nll;
            cells += terms.observed_cells;
        }
    }
    Ok(if cells > 0.0 { total / cells } else { 0.0 })
}

/// Minibatch Bayes-by-backprop with Adam. Each step minimizes
/// `(1/B)(log q − log P) + NLL` averaged over `n_mc` weight samples, scaled
/// by the nominal cell count `N_B·K·L`. Early stopping tracks [`evaluate_brnn`].
pub fn train_brnn(
    train: &LinkSeriesTensor,
    validation: &LinkSeriesTensor,
    config: &BrnnConfig,
) -> Result<(BrnnModel, TrainingLog)> {
    let mut model = BrnnModel::new(config.clone(), train.n_links(), train.grid.window_u, train.grid.horizon_k)?;
    check_geometry(&model, train, "training")?;
    check_geometry(&model, validation, "validation")?;

    let n_batches = train.n_samples().div_ceil(config.batch_size);
    let nominal_cells = (config.batch_size * model.horizon_k * model.n_links) as f64;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(2);
    let mut adam = Adam::new(model.params(), AdamConfig { lr: config.learning_rate, ..AdamConfig::default() });
    let mut stopper = EarlyStopping::new(config.patience);
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    stopper.observe(0, evaluate_brnn(&model, validation)?, model.params());
    'epochs: for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        let mut cells = 0.0;
        for idx in shuffled_batches(train.n_samples(), config.batch_size, &mut shuffle_rng) {
            let (x, y, m) = train.batch(&idx);
            let eps: Vec<_> = (0..config.n_mc).map(|_| model.weights.draw_eps(&mut noise_rng)).collect();
            let mut tape = Tape::new();
            let (loss, terms) = elbo_on_tape(&mut tape, &model, &x, &y, &m, n_batches, &eps)?;
            if !terms.loss.is_finite() {
                log::error!("brnn: non-finite training loss in epoch {epoch}; keeping last finite checkpoint");
                stop_reason = StopReason::Diverged;
                break 'epochs;
            }
            total += terms.loss;
            cells += terms.observed_cells;
            let scaled = tape.scale(loss, 1.0 / nominal_cells);
            let mut grads = tape.backward(scaled)?.to_dense(model.params());
            clip_global_norm(&mut grads, GRAD_CLIP_NORM);
            adam.step(model.params_mut(), &grads);
        }
        let train_loss = if cells > 0.0 { total / cells } else { 0.0 };
        let val_loss = evaluate_brnn(&model, validation)?;
        log::info!("brnn epoch {epoch}: train {train_loss:.5}, validation {val_loss:.5}");
        epochs.push(EpochRecord { epoch, train_loss, val_loss });
        if !val_loss.is_finite() {
            stop_reason = StopReason::Diverged;
            break;
        }
        if stopper.observe(epoch, val_loss, model.params()) {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    let best_epoch = stopper.best_epoch();
    let best_val_loss = stopper.best();
    if let Some(best) = stopper.take_best() {
        model.params_mut().copy_from(&best)?;
    }
    Ok((
        model,
        TrainingLog { epochs, best_epoch, best_val_loss, stop_reason, skipped_steps: adam.skipped() },
    ))
}
