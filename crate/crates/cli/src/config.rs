//! Flat `key=value` run configuration.
//!
//! Values come from the built-in defaults, then an optional config file,
//! then `--set key=value` overrides. Unknown keys are usage errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use sublm::corpus::OovMode;
use sublm::eval::TokenCountPolicy;
use sublm::neural::{LstmConfig, TrainOptions};
use sublm::subword::TrainerOptions;

use crate::failure::usage;

/// Environment variable naming the work directory.
pub const WORK_DIR_ENV: &str = "SUBLM_WORK_DIR";

const DEFAULTS: &[(&str, &str)] = &[
    ("corpus", ""),
    ("test", ""),
    ("vocab_size", "4000"),
    ("min_count", "1"),
    ("case_transform", "true"),
    ("oov_mode", "replace"),
    ("seed", "0"),
    ("valid_fraction", "0.05"),
    ("max_piece_len", "8"),
    ("seed_factor", "25"),
    ("em_iterations", "2"),
    ("shrink", "0.75"),
    ("lm_kind", "ngram"),
    ("ngram_order", "3"),
    ("ngram_discount", "0.75"),
    ("lstm_layers", "4"),
    ("lstm_embedding", "400"),
    ("lstm_hidden", "1150"),
    ("bptt", "70"),
    ("dropout_embedding", "0.1"),
    ("dropout_hidden", "0.2"),
    ("dropout_output", "0.3"),
    ("tie_weights", "true"),
    ("epochs", "12"),
    ("batch_size", "32"),
    ("lr_max", "20"),
    ("cut_frac", "0.1"),
    ("stlr_ratio", "32"),
    ("clip", "0.25"),
    ("sampled_softmax", "0"),
    ("randomize_bptt", "true"),
    ("token_count_policy", "with-eos"),
    ("sweep_vocab_sizes", "400,800,1200,1600,2000,2500,5000,10000"),
    ("sweep_layers", "3,4,5"),
    ("sweep_jobs", "1"),
    ("sweep_fraction", "1.0"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmKind {
    Ngram,
    Lstm,
}

impl FromStr for LmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ngram" => Ok(LmKind::Ngram),
            "lstm" => Ok(LmKind::Lstm),
            other => Err(format!("unknown LM kind `{other}` (expected ngram or lstm)")),
        }
    }
}

/// Raw key/value pairs after merging, in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut values: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
                set(&mut values, k.trim(), v.trim()).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects key=value, got `{o}`")))?;
            set(&mut values, k.trim(), v.trim())?;
        }
        let config = RunConfig { values };
        config.validate()?;
        Ok(config)
    }

    pub fn pairs(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// The merged configuration as a config file.
    pub fn to_file_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e: T::Err| usage(format!("invalid value `{raw}` for {key}: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e: T::Err| usage(format!("invalid entry `{s}` in {key}: {e}")))
            })
            .collect()
    }

    /// A path-valued key, required to be non-empty.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        match self.raw(key) {
            "" => Err(usage(format!(
                "`{key}` is not set (use --set {key}=PATH or a config file)"
            ))),
            p => Ok(PathBuf::from(p)),
        }
    }

    fn validate(&self) -> Result<()> {
        self.get::<usize>("vocab_size")?;
        self.get::<u64>("min_count")?;
        self.get::<bool>("case_transform")?;
        self.get::<OovMode>("oov_mode")?;
        self.get::<u64>("seed")?;
        let fraction = self.get::<f64>("valid_fraction")?;
        if !(0.0..1.0).contains(&fraction) {
            return Err(usage("valid_fraction must be in [0, 1)"));
        }
        self.get::<LmKind>("lm_kind")?;
        self.get::<TokenCountPolicy>("token_count_policy")?;
        self.trainer_options()?;
        self.train_options()?;
        self.lstm_config(0)?;
        self.get::<usize>("ngram_order")?;
        self.get::<f64>("ngram_discount")?;
        if self.list::<usize>("sweep_vocab_sizes")?.is_empty() || self.list::<usize>("sweep_layers")?.is_empty() {
            return Err(usage("the sweep grid must not be empty"));
        }
        if self.get::<usize>("sweep_jobs")? == 0 {
            return Err(usage("sweep_jobs must be at least 1"));
        }
        let sweep_fraction = self.get::<f64>("sweep_fraction")?;
        if !(sweep_fraction > 0.0 && sweep_fraction <= 1.0) {
            return Err(usage("sweep_fraction must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn trainer_options(&self) -> Result<TrainerOptions> {
        Ok(TrainerOptions {
            max_piece_len: self.get("max_piece_len")?,
            seed_factor: self.get("seed_factor")?,
            sub_iterations: self.get("em_iterations")?,
            shrink: self.get("shrink")?,
        })
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        Ok(TrainOptions {
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            lr_max: self.get("lr_max")?,
            cut_frac: self.get("cut_frac")?,
            ratio: self.get("stlr_ratio")?,
            clip: self.get("clip")?,
            sampled_softmax: self.get("sampled_softmax")?,
            randomize_bptt: self.get("randomize_bptt")?,
        })
    }

    /// LSTM settings for a vocabulary of `vocab_size` entries.
    pub fn lstm_config(&self, vocab_size: usize) -> Result<LstmConfig> {
        Ok(LstmConfig {
            layers: self.get("lstm_layers")?,
            embedding_dim: self.get("lstm_embedding")?,
            hidden_dim: self.get("lstm_hidden")?,
            vocab_size,
            bptt_len: self.get("bptt")?,
            dropout_embedding: self.get("dropout_embedding")?,
            dropout_hidden: self.get("dropout_hidden")?,
            dropout_output: self.get("dropout_output")?,
            tie_weights: self.get("tie_weights")?,
            seed: self.get("seed")?,
        })
    }
}

fn set(values: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<()> {
    match values.get_mut(key) {
        Some(slot) => {
            *slot = value.to_string();
            Ok(())
        }
        None => Err(usage(format!("unknown config key `{key}`"))),
    }
}

/// Flag, then environment, then `./work`.
pub fn work_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(WORK_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("work"))
}
