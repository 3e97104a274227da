use std::fs;
use std::path::Path;

use crate::error::{config_err, Result};
use crate::harness::config::{SuiteConfig, TrainConfig};
use crate::harness::evaluate::evaluate;
use crate::harness::train::{TrainLog, Trainer};
use crate::losses::{LossConfig, LossKind};
use crate::metrics::{average_reports, dice_per_class, render_comparison_table, ComparisonTable, DiceReport, CSV_HEADER};
use crate::phantom::{build_dataset, Dataset, LabelSource, Split};
use crate::seed::derive_seed;

pub const NOISY_LABELS: &str = "noisy-labels";
pub const CLEAN_SGL: &str = "clean-SGL";
pub const NOISY_CE: &str = "noisy-CE";
pub const NOISY_BCE: &str = "noisy-BCE";
pub const NOISY_HYBRID: &str = "noisy-hybrid";

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    /// Test-split rows in table order, starting with the noisy labels themselves.
    pub reports: Vec<DiceReport>,
    /// Training logs keyed by row tag.
    pub logs: Vec<(String, TrainLog)>,
}

impl SeedResult {
    pub fn report(&self, tag: &str) -> Option<&DiceReport> {
        self.reports.iter().find(|r| r.model_tag == tag)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub seeds: Vec<SeedResult>,
    /// Elementwise mean over seeds, one row per tag.
    pub averaged: Vec<DiceReport>,
    pub averaged_table: ComparisonTable,
}

impl SuiteResult {
    pub fn averaged_report(&self, tag: &str) -> Option<&DiceReport> {
        self.averaged.iter().find(|r| r.model_tag == tag)
    }
}

/// Dataset for one suite seed: phantoms from `seed`, noise from
/// `derive_seed(seed, 1)` and the split from `derive_seed(seed, 2)`.
pub fn suite_dataset(config: &SuiteConfig, seed: u64) -> Result<Dataset> {
    build_dataset(
        config.count,
        &config.phantom_spec(seed),
        &config.noise_spec(derive_seed(seed, 1))?,
        config.splits,
        derive_seed(seed, 2),
    )
}

fn run_config(config: &SuiteConfig, seed: u64, source: LabelSource, kind: LossKind) -> TrainConfig {
    let mut train = config.train.clone();
    train.set_seed(seed);
    train.label_source = source;
    train.loss.kind = kind;
    train
}

/// Trains and scores every model for one seed.
///
/// The noisy-label runs share their CE warmup: the robust runs branch from
/// the CE run once warmup ends, which is equivalent to training them from
/// scratch with the same seed.
pub fn run_seed(config: &SuiteConfig, seed: u64) -> Result<SeedResult> {
    config.validate()?;
    let dataset = suite_dataset(config, seed)?;
    let test = dataset.indices(Split::Test);
    let noisy_row = dice_per_class(
        &dataset.batch_labels(LabelSource::Noisy, &test),
        &dataset.batch_labels(LabelSource::Clean, &test),
        dataset.classes,
    )?
    .with_tag(NOISY_LABELS);
    let mut reports = vec![noisy_row];
    let mut logs = Vec::new();

    let clean = Trainer::new(&dataset, run_config(config, seed, LabelSource::Clean, LossKind::Ce))?.finish()?;
    reports.push(evaluate(&clean.params, &dataset, Split::Test)?.with_tag(CLEAN_SGL));
    logs.push((CLEAN_SGL.to_string(), clean.log));

    let ce_config = run_config(config, seed, LabelSource::Noisy, LossKind::Ce);
    let mut ce = Trainer::new(&dataset, ce_config.clone())?;
    for _ in 0..ce_config.warmup_epochs {
        ce.run_epoch()?;
    }
    let mut robust = vec![(NOISY_BCE, LossKind::Bce)];
    if config.include_hybrid {
        robust.push((NOISY_HYBRID, LossKind::Hybrid));
    }
    let branches = robust
        .iter()
        .map(|&(tag, kind)| Ok((tag, ce.branch(LossConfig { kind, ..ce_config.loss.clone() })?)))
        .collect::<Result<Vec<_>>>()?;

    for (tag, trainer) in std::iter::once((NOISY_CE, ce)).chain(branches) {
        let outcome = trainer.finish()?;
        reports.push(evaluate(&outcome.params, &dataset, Split::Test)?.with_tag(tag));
        logs.push((tag.to_string(), outcome.log));
    }
    Ok(SeedResult { seed, reports, logs })
}

/// Elementwise mean of per-seed rows, matched by position.
pub fn average_seeds(seeds: &[SeedResult]) -> Result<Vec<DiceReport>> {
    let first = match seeds.first() {
        Some(s) => s,
        None => return config_err("no seeds to average"),
    };
    (0..first.reports.len())
        .map(|row| {
            let rows = seeds
                .iter()
                .map(|s| match s.reports.get(row) {
                    Some(r) if r.model_tag == first.reports[row].model_tag => Ok(r),
                    _ => config_err("seeds produced different table rows"),
                })
                .collect::<Result<Vec<_>>>()?;
            average_reports(&rows)
        })
        .collect()
}

fn write_partial(out_dir: &Path, done: &[SeedResult]) -> Result<()> {
    let rows: Vec<DiceReport> = done
        .iter()
        .flat_map(|s| {
            s.reports
                .iter()
                .map(move |r| r.clone().with_tag(format!("seed{}/{}", s.seed, r.model_tag)))
        })
        .collect();
    let csv = if rows.is_empty() {
        format!("{CSV_HEADER}\n")
    } else {
        render_comparison_table(&rows)?.csv
    };
    fs::write(out_dir.join("partial_results.csv"), csv)?;
    Ok(())
}

fn run_and_write_seed(config: &SuiteConfig, seed: u64, out_dir: &Path) -> Result<(SeedResult, String)> {
    let result = run_seed(config, seed)?;
    let table = render_comparison_table(&result.reports)?;
    fs::write(out_dir.join(format!("seed_{seed}.csv")), &table.csv)?;
    for (tag, log) in &result.logs {
        log.write_csv(out_dir.join(format!("seed_{seed}_{tag}_log.csv")))?;
    }
    Ok((result, table.text))
}

/// Runs every seed and writes, under `out_dir`:
/// `seed_<S>.csv`, `seed_<S>_<tag>_log.csv`, `averaged.csv` and `table.txt`.
///
/// A failing seed stops the suite; the rows finished so far go to
/// `partial_results.csv` and the error is returned.
pub fn run_suite(config: &SuiteConfig, seeds: &[u64], out_dir: impl AsRef<Path>) -> Result<SuiteResult> {
    let out_dir = out_dir.as_ref();
    if seeds.is_empty() {
        return config_err("suite needs at least one seed");
    }
    if seeds.iter().enumerate().any(|(i, s)| seeds[..i].contains(s)) {
        return config_err("suite seeds must be distinct");
    }
    config.validate()?;
    fs::create_dir_all(out_dir)?;

    let mut done: Vec<SeedResult> = Vec::with_capacity(seeds.len());
    let mut text = String::new();
    for &seed in seeds {
        match run_and_write_seed(config, seed, out_dir) {
            Ok((result, table_text)) => {
                text.push_str(&format!("seed {seed}\n{table_text}\n"));
                done.push(result);
            }
            Err(e) => {
                write_partial(out_dir, &done)?;
                return Err(e);
            }
        }
    }

    let averaged = average_seeds(&done)?;
    let averaged_table = render_comparison_table(&averaged)?;
    fs::write(out_dir.join("averaged.csv"), &averaged_table.csv)?;
    text.push_str(&format!("mean over {} seeds\n{}", seeds.len(), averaged_table.text));
    fs::write(out_dir.join("table.txt"), text)?;
    Ok(SuiteResult {
        seeds: done,
        averaged,
        averaged_table,
    })
}
