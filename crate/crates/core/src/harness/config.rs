//! Training and suite configuration, including the `key=value` file format.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{config_err, Error, Result};
use crate::harness::adam::AdamConfig;
use crate::losses::{LossConfig, LossKind};
use crate::network::NetworkSpec;
use crate::phantom::{LabelSource, NoiseSpec, PhantomSpec, SplitFractions, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data_dir: PathBuf,
    pub network: NetworkSpec,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    /// Leading epochs trained with CE whatever `loss.kind` says.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch data order.
    pub seed: u64,
    pub label_source: LabelSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::new(),
            // Two levels reach a usable segmentation within the 10-epoch
            // budget at 64×64; three levels are still far from it.
            network: NetworkSpec {
                depth: 2,
                ..NetworkSpec::default()
            },
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            epochs: 10,
            warmup_epochs: 2,
            batch_size: 8,
            seed: 0,
            label_source: LabelSource::Noisy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.warmup_epochs > self.epochs {
            return config_err(format!(
                "warmup_epochs ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return config_err("batch_size must be at least 1");
        }
        Ok(())
    }

    /// Sets both the data-order seed and the initialisation seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.network.seed = seed;
    }

    /// Loss kind used during `epoch` (1-based).
    pub fn loss_kind_for_epoch(&self, epoch: usize) -> LossKind {
        if epoch <= self.warmup_epochs {
            LossKind::Ce
        } else {
            self.loss.kind
        }
    }

    /// Applies one `key=value` setting. Unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "loss" => self.loss.kind = LossKind::parse(value)?,
            "beta" => self.loss.beta = parse(key, value)?,
            "clamp_eps" => self.loss.clamp_eps = parse(key, value)?,
            "rare_class_threshold" => self.loss.rare_class_threshold = parse(key, value)?,
            "rare_class_set" => self.loss.rare_class_set = Some(parse_list(key, value)?),
            "lr" => self.optimizer.lr = parse(key, value)?,
            "adam_beta1" => self.optimizer.beta1 = parse(key, value)?,
            "adam_beta2" => self.optimizer.beta2 = parse(key, value)?,
            "adam_eps" => self.optimizer.eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.set_seed(parse(key, value)?),
            "label_source" => self.label_source = LabelSource::parse(value)?,
            "base_width" => self.network.base_width = parse(key, value)?,
            "depth" => self.network.depth = parse(key, value)?,
            other => return config_err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (key, value) in parse_key_values(text)? {
            config.apply(&key, &value)?;
        }
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Shared settings for the multi-seed comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub count: usize,
    pub resolution: usize,
    pub noise_preset: String,
    pub splits: SplitFractions,
    /// Template for every training run; loss kind, label source and seeds are set per run.
    pub train: TrainConfig,
    /// Adds a hybrid CE/BCE run on the noisy labels.
    pub include_hybrid: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            count: 200,
            resolution: 64,
            noise_preset: "default".into(),
            splits: SplitFractions::default(),
            train: TrainConfig::default(),
            include_hybrid: false,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        self.phantom_spec(0).validate()?;
        self.noise_spec(0)?.validate(NUM_CLASSES)?;
        self.splits.sizes(self.count)?;
        self.train.validate()?;
        self.train.network.check_resolution(self.resolution, self.resolution)?;
        if self.train.network.num_classes != NUM_CLASSES || self.train.network.in_channels != 1 {
            return config_err("suite networks must map one channel to nine classes");
        }
        Ok(())
    }

    pub fn phantom_spec(&self, seed: u64) -> PhantomSpec {
        PhantomSpec::with_resolution(self.resolution, seed)
    }

    pub fn noise_spec(&self, seed: u64) -> Result<NoiseSpec> {
        NoiseSpec::preset(&self.noise_preset, seed)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (key, value) in parse_key_values(text)? {
            match key.as_str() {
                "count" => config.count = parse(&key, &value)?,
                "resolution" => config.resolution = parse(&key, &value)?,
                "noise_preset" => config.noise_preset = value,
                "hybrid" => config.include_hybrid = parse(&key, &value)?,
                "split" => {
                    let f: Vec<f64> = parse_list(&key, &value)?;
                    if f.len() != 3 {
                        return config_err("split needs three fractions");
                    }
                    config.splits = SplitFractions {
                        train: f[0],
                        val: f[1],
                        test: f[2],
                    };
                }
                // Fixed per run by the suite itself.
                "data_dir" | "loss" | "label_source" | "seed" => {
                    return config_err(format!("`{key}` is set by the suite and cannot be configured"))
                }
                _ => config.train.apply(&key, &value)?,
            }
        }
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped and
/// repeated keys are rejected.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        let key = key.trim().to_string();
        if out.iter().any(|(k, _)| *k == key) {
            return config_err(format!("line {}: duplicate key `{key}`", n + 1));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}
