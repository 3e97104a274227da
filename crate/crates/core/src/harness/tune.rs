use std::fmt::Write as _;

use crate::error::{config_err, Result};
use crate::harness::config::TrainConfig;
use crate::harness::evaluate::evaluate;
use crate::harness::train::Trainer;
use crate::losses::{LossConfig, LossKind};
use crate::phantom::{Dataset, Split};

pub const DEFAULT_BETA_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, PartialEq)]
pub struct BetaTuning {
    pub best_beta: f64,
    /// `(β, final validation mean Dice)` in grid order.
    pub table: Vec<(f64, f64)>,
}

impl BetaTuning {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,val_mean_dice,selected\n");
        for &(beta, dice) in &self.table {
            let _ = writeln!(out, "{beta},{dice},{}", u8::from(beta == self.best_beta));
        }
        out
    }
}

/// Picks the β with the highest Dice; ties go to the smaller β.
pub fn select_beta(table: &[(f64, f64)]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(beta, dice) in table {
        best = match best {
            Some((b, d)) if d > dice || (d == dice && b <= beta) => Some((b, d)),
            _ => Some((beta, dice)),
        };
    }
    match best {
        Some((beta, _)) => Ok(beta),
        None => config_err("β grid is empty"),
    }
}

/// Trains one model per β and selects by final validation mean Dice against
/// clean labels.
///
/// A CE configuration is switched to BCE. Every run starts from the same
/// seed; the CE warmup they have in common is computed once and shared, which
/// yields exactly the parameters a separate run from scratch would.
pub fn tune_beta(dataset: &Dataset, config: &TrainConfig, grid: &[f64]) -> Result<BetaTuning> {
    if grid.is_empty() {
        return config_err("β grid is empty");
    }
    let mut base = config.clone();
    if base.loss.kind == LossKind::Ce {
        base.loss.kind = LossKind::Bce;
    }
    for &beta in grid {
        LossConfig { beta, ..base.loss.clone() }.validate()?;
    }

    let mut warm = Trainer::new(dataset, base.clone())?;
    for _ in 0..base.warmup_epochs {
        warm.run_epoch()?;
    }
    let mut table = Vec::with_capacity(grid.len());
    for &beta in grid {
        let outcome = warm.branch(LossConfig { beta, ..base.loss.clone() })?.finish()?;
        table.push((beta, evaluate(&outcome.params, dataset, Split::Val)?.mean_dice));
    }
    let best_beta = select_beta(&table)?;
    Ok(BetaTuning { best_beta, table })
}
