//! The generic epoch loop: seeded shuffling, batched gradient accumulation,
//! Adam updates, per-epoch validation, and patience-based early stopping.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::adam::{adam_step, AdamState};
use super::objectives::{Objective, Params};
use super::{EpochRecord, TrainError};
use crate::data::Bag;
use crate::rng::stream;

/// Tracks the best validation loss and the epochs since it improved.
/// Improvement is strict; training stops once `patience` consecutive epochs
/// fail to improve on the best.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    epochs_since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        EarlyStopping {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
        }
    }

    /// Record one epoch's validation loss; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, validation_loss: f64) -> bool {
        if validation_loss < self.best_loss {
            self.best_loss = validation_loss;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_since_improvement >= self.patience
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.epochs_since_improvement
    }
}

pub(crate) struct LoopSettings {
    pub learning_rate: f64,
    pub batch_bags: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

pub(crate) struct LoopOutcome {
    pub best_params: Params,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub log: Vec<EpochRecord>,
}

fn unix_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Mean validation loss under the objective's own training loss: the weakly
/// supervised methods never see instance labels here.
fn validation_loss<O: Objective>(objective: &O, params: &Params, bags: &[Bag]) -> f64 {
    let losses: Vec<f64> =
        bags.par_iter().map(|bag| objective.bag_loss(params, bag, false).0).collect();
    losses.iter().sum::<f64>() / bags.len() as f64
}

/// Run the full training loop. Bag gradients within a batch are evaluated in
/// parallel but reduced in bag order, so the trajectory is bit-reproducible
/// regardless of thread count.
pub(crate) fn run_loop<O: Objective>(
    objective: &O,
    init: Params,
    train_bags: &[Bag],
    val_bags: &[Bag],
    settings: &LoopSettings,
) -> Result<LoopOutcome, TrainError> {
    assert!(!train_bags.is_empty() && !val_bags.is_empty());
    let names = objective.block_names();
    let mut params = init;
    let mut adam: Vec<AdamState> = params.iter().map(|p| AdamState::new(p.len())).collect();
    let mut shuffle_rng = stream(settings.seed, "epoch-shuffle", 0);
    let mut stopper = EarlyStopping::new(settings.patience);
    let mut best_params = params.clone();
    let mut log = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=settings.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..train_bags.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(settings.batch_bags) {
            let results: Vec<(f64, Option<Params>)> = batch
                .par_iter()
                .map(|&i| objective.bag_loss(&params, &train_bags[i], true))
                .collect();

            let scale = 1.0 / batch.len() as f64;
            let mut grad_acc: Params = params.iter().map(|p| vec![0.0; p.len()]).collect();
            for (loss, grads) in results {
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch });
                }
                epoch_loss_sum += loss;
                let grads = grads.expect("gradients requested");
                for (block, grad) in grad_acc.iter_mut().zip(&grads) {
                    for (acc, &g) in block.iter_mut().zip(grad) {
                        *acc += g * scale;
                    }
                }
            }
            for (b, grad) in grad_acc.iter().enumerate() {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(TrainError::NonFiniteGradient { epoch, block: names[b] });
                }
                adam_step(&mut params[b], grad, &mut adam[b], settings.learning_rate);
            }
        }

        let val_loss = validation_loss(objective, &params, val_bags);
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        if stopper.observe(epoch, val_loss) {
            best_params = params.clone();
        }
        log.push(EpochRecord {
            epoch,
            train_loss: epoch_loss_sum / train_bags.len() as f64,
            val_loss,
            timestamp: unix_timestamp(),
            epochs_since_improvement: stopper.epochs_since_improvement(),
        });
        if stopper.should_stop() {
            break;
        }
    }

    Ok(LoopOutcome {
        best_params,
        best_val_loss: stopper.best_loss(),
        best_epoch: stopper.best_epoch(),
        epochs_run,
        log,
    })
}
