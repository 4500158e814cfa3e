use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{DqrConfig, DqrModel};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, AdamConfig, Tape, GRAD_CLIP_NORM};
use crate::prep::LinkSeriesTensor;
use crate::training::{ordered_batches, shuffled_batches, EarlyStopping, EpochRecord, StopReason, TrainingLog};

const EVAL_BATCH: usize = 256;

fn check_geometry(model: &DqrModel, t: &LinkSeriesTensor, which: &str) -> Result<()> {
    if t.n_links() != model.n_links || t.grid.window_u != model.window_u || t.grid.horizon_k != model.horizon_k {
        return Err(Error::invalid(format!("{which} tensors do not match the model geometry")));
    }
    if t.n_samples() == 0 {
        return Err(Error::invalid(format!("{which} tensors are empty")));
    }
    Ok(())
}

/// Mean joint loss per observed target cell, dropout disabled.
pub fn evaluate_dqr(model: &DqrModel, data: &LinkSeriesTensor) -> Result<f64> {
    let mut total = 0.0;
    let mut cells = 0.0;
    for idx in ordered_batches(data.n_samples(), EVAL_BATCH) {
        let (x, y, m) = data.batch(&idx);
        let mut tape = Tape::new();
        let outs = model.forward(&mut tape, &x, None)?;
        let (loss, observed) = model.loss(&mut tape, &outs, &y, &m)?;
        total += tape.value(loss).data()[0];
        cells += observed;
    }
    Ok(if cells > 0.0 { total / cells } else { 0.0 })
}

/// Minibatch Adam on the joint loss with early stopping on validation loss.
/// Returns the best-validation parameters.
pub fn train_dqr(train: &LinkSeriesTensor, validation: &LinkSeriesTensor, config: &DqrConfig) -> Result<(DqrModel, TrainingLog)> {
    let mut model = DqrModel::new(config.clone(), train.n_links(), train.grid.window_u, train.grid.horizon_k)?;
    check_geometry(&model, train, "training")?;
    check_geometry(&model, validation, "validation")?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut adam = Adam::new(model.params(), AdamConfig { lr: config.learning_rate, ..AdamConfig::default() });
    let mut stopper = EarlyStopping::new(config.patience);
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    stopper.observe(0, evaluate_dqr(&model, validation)?, model.params());
    'epochs: for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        let mut cells = 0.0;
        for idx in shuffled_batches(train.n_samples(), config.batch_size, &mut shuffle_rng) {
            let (x, y, m) = train.batch(&idx);
            let mut tape = Tape::new();
            let outs = model.forward(&mut tape, &x, Some(&mut dropout_rng))?;
            let (loss_sum, observed) = model.loss(&mut tape, &outs, &y, &m)?;
            let loss = tape.scale(loss_sum, 1.0 / observed.max(1.0));
            let value = tape.value(loss_sum).data()[0];
            if !value.is_finite() {
                log::error!("dqr: non-finite training loss in epoch {epoch}; keeping last finite checkpoint");
                stop_reason = StopReason::Diverged;
                break 'epochs;
            }
            total += value;
            cells += observed;
            if observed == 0.0 {
                continue;
            }
            let mut grads = tape.backward(loss)?.to_dense(model.params());
            clip_global_norm(&mut grads, GRAD_CLIP_NORM);
            adam.step(model.params_mut(), &grads);
        }
        let train_loss = if cells > 0.0 { total / cells } else { 0.0 };
        let val_loss = evaluate_dqr(&model, validation)?;
        log::info!("dqr epoch {epoch}: train {train_loss:.5}, validation {val_loss:.5}");
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
    let log = TrainingLog {
        epochs,
        best_epoch,
        best_val_loss,
        stop_reason,
        skipped_steps: adam.skipped(),
    };
    Ok((model, log))
}
