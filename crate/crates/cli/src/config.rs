//! The resolved settings of one run, in canonical `key=value` form.

use std::fmt::Write as _;

use cnnlstm::model::{parse_kv, ModelDims, TrainConfig, Variant};
use cnnlstm::{Error, Result};

/// Evaluation knobs shared by the read-only commands.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub top_k: usize,
    pub max_len: usize,
    pub threads: usize,
    pub test_fraction: f64,
    pub l2: f64,
    pub epochs: usize,
    pub shared_dim: usize,
    pub pool: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            top_k: 5,
            max_len: 30,
            threads: 1,
            test_fraction: 0.25,
            l2: 1e-3,
            epochs: 300,
            shared_dim: 32,
            pool: 100,
        }
    }
}

impl EvalOptions {
    pub const KEYS: [&'static str; 8] = [
        "top_k",
        "max_len",
        "threads",
        "test_fraction",
        "l2",
        "epochs",
        "shared_dim",
        "pool",
    ];

    fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "top_k" => self.top_k.to_string(),
            "max_len" => self.max_len.to_string(),
            "threads" => self.threads.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "l2" => self.l2.to_string(),
            "epochs" => self.epochs.to_string(),
            "shared_dim" => self.shared_dim.to_string(),
            "pool" => self.pool.to_string(),
            _ => return None,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "top_k" => self.top_k = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "l2" => self.l2 = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "shared_dim" => self.shared_dim = num(key, value)?,
            "pool" => self.pool = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 || self.shared_dim == 0 || self.pool == 0 {
            return Err(Error::Config("threads, shared_dim and pool must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub corpus: String,
    pub checkpoint: String,
    pub variant: Variant,
    pub dims: ModelDims,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn new(command: &str, variant: Variant) -> Self {
        Self {
            command: command.to_string(),
            corpus: String::new(),
            checkpoint: String::new(),
            variant,
            dims: ModelDims::default(),
            train: TrainConfig::for_variant(variant),
            eval: EvalOptions::default(),
        }
    }

    /// Resolves settings from `(key, value)` pairs applied in order, so later
    /// pairs (flags) override earlier ones (a config file). The variant is
    /// read first because it picks the default batch size.
    pub fn resolve(command: &str, pairs: &[(String, String)]) -> Result<Self> {
        let variant = match pairs.iter().rev().find(|(k, _)| k == "variant") {
            Some((_, v)) => Variant::parse(v)?,
            None => Variant::Autoencoder,
        };
        let mut config = Self::new(command, variant);
        for (k, v) in pairs {
            config.set(k, v)?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let known = match key {
            "command" => {
                self.command = value.to_string();
                true
            }
            "corpus" => {
                self.corpus = value.to_string();
                true
            }
            "checkpoint" => {
                self.checkpoint = value.to_string();
                true
            }
            "variant" => {
                self.variant = Variant::parse(value)?;
                true
            }
            _ => self.dims.set(key, value)? || self.train.set(key, value)? || self.eval.set(key, value)?,
        };
        if known {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown configuration key `{key}`")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    /// Canonical form: fixed key order, one `key=value` per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command={}", self.command);
        let _ = writeln!(out, "corpus={}", self.corpus);
        let _ = writeln!(out, "checkpoint={}", self.checkpoint);
        let _ = writeln!(out, "variant={}", self.variant);
        out.push_str(&self.dims.to_kv());
        out.push_str(&self.train.to_kv());
        for key in EvalOptions::KEYS {
            let _ = writeln!(out, "{key}={}", self.eval.get(key).expect("known key"));
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs = parse_kv(text)?;
        let command = pairs
            .iter()
            .find(|(k, _)| k == "command")
            .map(|(_, v)| v.clone())
            .unwrap_or_default();
        Self::resolve(&command, &pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_text_echoes() {
        let c = RunConfig::new("train", Variant::Composite);
        let text = c.to_kv();
        assert_eq!(RunConfig::from_kv(&text).unwrap().to_kv(), text);
        assert!(text.contains("variant=composite\n"));
    }

    #[test]
    fn later_pairs_override() {
        let pairs = vec![
            ("learning_rate".to_string(), "0.1".to_string()),
            ("learning_rate".to_string(), "0.2".to_string()),
        ];
        assert_eq!(RunConfig::resolve("train", &pairs).unwrap().train.learning_rate, 0.2);
    }

    #[test]
    fn hierarchical_default_batch() {
        let pairs = vec![("variant".to_string(), "hierarchical".to_string())];
        assert_eq!(RunConfig::resolve("train", &pairs).unwrap().train.batch_size, 8);
        let pairs = vec![
            ("batch_size".to_string(), "3".to_string()),
            ("variant".to_string(), "hierarchical".to_string()),
        ];
        assert_eq!(RunConfig::resolve("train", &pairs).unwrap().train.batch_size, 3);
    }

    #[test]
    fn unknown_key_rejected() {
        let pairs = vec![("learning_rat".to_string(), "0.1".to_string())];
        assert!(matches!(RunConfig::resolve("train", &pairs), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn round_trip(
            lr in 0.0f64..1.0,
            dropout in 0.0f64..0.99,
            seed in any::<u64>(),
            steps in 0usize..100_000,
            windows in prop::collection::vec(1usize..9, 1..5),
            threads in 1usize..64,
            l2 in 0.0f64..10.0,
            corpus in "[a-z/._]{0,20}",
            variant in 0usize..4,
        ) {
            let mut c = RunConfig::new("encode", Variant::ALL[variant]);
            c.corpus = corpus;
            c.train.learning_rate = lr;
            c.train.dropout = dropout;
            c.train.seed = seed;
            c.train.max_steps = steps;
            c.dims.windows = windows;
            c.eval.threads = threads;
            c.eval.l2 = l2;
            let text = c.to_kv();
            let back = RunConfig::from_kv(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_kv(), text);
        }
    }
}
