use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::harness::adam::{Adam, AdamConfig};
use crate::harness::config::TrainConfig;
use crate::harness::evaluate::{check_compatible, evaluate_indices};
use crate::losses::{compute_loss, LossConfig, LossKind};
use crate::network::{backward_traced, build_and_init, forward_traced, save_checkpoint, ParameterSet};
use crate::phantom::{read_dataset, Dataset, Split};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss_kind: LossKind,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    /// Mean Dice on the validation split against clean labels.
    pub val_mean_dice: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub optimizer: AdamConfig,
    pub records: Vec<EpochRecord>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,loss_kind,train_loss,val_mean_dice";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAIN_LOG_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.loss_kind, r.train_loss, r.val_mean_dice);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub log: TrainLog,
}

/// Epoch-by-epoch training state.
///
/// Cloning a trainer snapshots parameters, optimizer moments and log, which
/// lets runs that share a CE warmup branch off after it.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    train_indices: Vec<usize>,
    val_indices: Vec<usize>,
    class_frequencies: Vec<f64>,
    params: ParameterSet,
    optimizer: Adam,
    log: TrainLog,
}

impl<'a> Trainer<'a> {
    /// Validates `config` against `dataset` and initialises the network.
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = build_and_init(&config.network)?;
        check_compatible(&params, dataset)?;
        let train_indices = dataset.indices(Split::Train);
        let val_indices = dataset.indices(Split::Val);
        if train_indices.is_empty() || val_indices.is_empty() {
            return config_err("dataset needs non-empty train and val splits");
        }
        let class_frequencies = dataset.class_frequencies(config.label_source, &train_indices);
        // Resolve the rare-class rule up front so a bad setting fails before training.
        config.loss.rare_classes(&class_frequencies)?;
        let optimizer = Adam::new(config.optimizer, &params);
        let log = TrainLog {
            optimizer: config.optimizer,
            records: Vec::new(),
        };
        Ok(Self {
            dataset,
            config,
            train_indices,
            val_indices,
            class_frequencies,
            params,
            optimizer,
            log,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn epochs_done(&self) -> usize {
        self.log.records.len()
    }

    /// Same trainer with a different loss.
    ///
    /// Only allowed while every finished epoch was a warmup epoch under both
    /// the old and the new schedule; the state is then exactly what a fresh
    /// run with `loss` would have reached.
    pub fn branch(&self, loss: LossConfig) -> Result<Self> {
        loss.validate()?;
        loss.rare_classes(&self.class_frequencies)?;
        if self.epochs_done() > self.config.warmup_epochs {
            return config_err(format!(
                "cannot change the loss after epoch {} of a run with {} warmup epochs",
                self.epochs_done(),
                self.config.warmup_epochs
            ));
        }
        let mut next = self.clone();
        next.config.loss = loss;
        Ok(next)
    }

    /// Runs the next epoch and returns its record.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let epoch = self.epochs_done() + 1;
        if epoch > self.config.epochs {
            return config_err(format!("all {} epochs already ran", self.config.epochs));
        }
        let kind = self.config.loss_kind_for_epoch(epoch);
        let loss_config = LossConfig {
            kind,
            ..self.config.loss.clone()
        };

        let mut order = self.train_indices.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, epoch as u64)));

        let mut loss_sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let images = self.dataset.batch_images(batch)?;
            let labels = self.dataset.batch_labels(self.config.label_source, batch);
            let (logits, trace) = forward_traced(&self.params, &images)?;
            let loss = compute_loss(&logits, &labels, &loss_config, &self.class_frequencies)?;
            if !loss.value.is_finite() {
                return Err(Error::Diverged(format!("{kind} loss is {} in epoch {epoch}", loss.value)));
            }
            loss_sum += loss.value * batch.len() as f64;
            let grads = backward_traced(&self.params, &trace, &loss.grad_logits)?;
            self.optimizer.step(&mut self.params, &grads)?;
        }

        let val = evaluate_indices(&self.params, self.dataset, &self.val_indices)?;
        self.log.records.push(EpochRecord {
            epoch,
            loss_kind: kind,
            train_loss: loss_sum / order.len() as f64,
            val_mean_dice: val.mean_dice,
        });
        Ok(self.log.records.last().expect("record just pushed"))
    }

    /// Runs the remaining epochs.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.epochs_done() < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<TrainOutcome> {
        self.run_to_end()?;
        Ok(TrainOutcome {
            params: self.params,
            log: self.log,
        })
    }
}

/// Trains on an in-memory dataset; `config.data_dir` is ignored.
pub fn train_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(dataset, config.clone())?.finish()
}

/// Reads `config.data_dir`, trains and writes the final parameters to `checkpoint`.
pub fn train(config: &TrainConfig, checkpoint: impl AsRef<Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = read_dataset(&config.data_dir)?;
    let outcome = train_dataset(&dataset, config)?;
    save_checkpoint(&outcome.params, checkpoint)?;
    Ok(outcome)
}
