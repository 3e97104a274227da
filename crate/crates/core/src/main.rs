use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use betaseg::harness::suite::suite_dataset;
use betaseg::harness::tune::DEFAULT_BETA_GRID;
use betaseg::harness::{evaluate_checkpoint, run_suite, train, tune_beta, SuiteConfig, TrainConfig};
use betaseg::metrics::render_comparison_table;
use betaseg::phantom::{read_dataset, write_dataset};
use betaseg::{LabelSource, LossKind, Split};

#[derive(Parser)]
#[command(name = "betaseg", version, about = "Segmentation under label noise with CE, β-CE and hybrid losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset with clean and noisy labels.
    PhantomGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value = "default")]
        noise_preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model and write its checkpoint and log.
    Train {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train one model per β and report validation Dice.
    TuneBeta {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BETA_GRID)]
        grid: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint against the clean labels of one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the multi-seed loss comparison.
    Suite {
        #[arg(long)]
        data_config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Training settings; flags override the optional config file.
#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
}

impl TrainArgs {
    fn resolve(&self) -> betaseg::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = &self.data {
            c.data_dir = v.clone();
        }
        if let Some(v) = &self.loss {
            c.loss.kind = LossKind::parse(v)?;
        }
        if let Some(v) = self.beta {
            c.loss.beta = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.warmup {
            c.warmup_epochs = v;
        }
        if let Some(v) = &self.labels {
            c.label_source = LabelSource::parse(v)?;
        }
        if let Some(v) = self.seed {
            c.set_seed(v);
        }
        if let Some(v) = self.lr {
            c.optimizer.lr = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.base_width {
            c.network.base_width = v;
        }
        if let Some(v) = self.depth {
            c.network.depth = v;
        }
        if c.data_dir.as_os_str().is_empty() {
            return Err(betaseg::Error::Config("no dataset given (--data or data_dir)".into()));
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(command: Command) -> betaseg::Result<()> {
    match command {
        Command::PhantomGen {
            out,
            count,
            resolution,
            noise_preset,
            seed,
        } => {
            let config = SuiteConfig {
                count,
                resolution,
                noise_preset,
                ..SuiteConfig::default()
            };
            let dataset = suite_dataset(&config, seed)?;
            write_dataset(&dataset, &out)?;
            println!("wrote {count} samples ({resolution}x{resolution}) to {}", out.display());
        }
        Command::Train { train: args, out, log } => {
            let config = args.resolve()?;
            let outcome = train(&config, &out)?;
            if let Some(path) = log {
                outcome.log.write_csv(path)?;
            }
            for r in &outcome.log.records {
                println!(
                    "epoch {:>3}  {:<6} loss {:.5}  val mean Dice {:.4}",
                    r.epoch, r.loss_kind, r.train_loss, r.val_mean_dice
                );
            }
            println!("optimizer {}; checkpoint {}", outcome.log.optimizer, out.display());
        }
        Command::TuneBeta { train: args, grid, out } => {
            let config = args.resolve()?;
            let dataset = read_dataset(&config.data_dir)?;
            let tuning = tune_beta(&dataset, &config, &grid)?;
            fs::write(&out, tuning.to_csv())?;
            for (beta, dice) in &tuning.table {
                println!("beta {beta:<8} val mean Dice {dice:.4}");
            }
            println!("selected beta {}", tuning.best_beta);
        }
        Command::Eval { ckpt, data, split, out } => {
            let split = Split::parse(&split)?;
            let tag = ckpt
                .file_stem()
                .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().replace(',', "_"));
            let report = evaluate_checkpoint(&ckpt, &data, split)?.with_tag(tag);
            let table = render_comparison_table(&[report])?;
            if let Some(path) = out {
                fs::write(path, &table.csv)?;
            }
            print!("{}", table.text);
        }
        Command::Suite {
            data_config,
            seeds,
            out,
        } => {
            let config = match data_config {
                Some(path) => SuiteConfig::from_file(path)?,
                None => SuiteConfig::default(),
            };
            let result = run_suite(&config, &seeds, &out)?;
            print!("{}", result.averaged_table.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
