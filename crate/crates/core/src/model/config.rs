use std::fmt::Write as _;

use crate::embeddings::EmbeddingMode;
use crate::error::{Error, Result};

use super::Variant;

/// Parses `key=value` lines. Blank lines and lines starting with `#` are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn windows_str(windows: &[usize]) -> String {
    windows.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_windows(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|w| num(key, w.trim())).collect()
}

/// Architecture sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    /// `k`, the word-vector width.
    pub embed_dim: usize,
    /// Window sizes `h`; `z` is laid out in ascending window order.
    pub windows: Vec<usize>,
    /// `d`, filters per window size.
    pub maps_per_window: usize,
    /// `n_h`, sentence decoder width.
    pub hidden: usize,
    /// `n_p`, paragraph generator width.
    pub paragraph_hidden: usize,
    pub embedding_mode: EmbeddingMode,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            vocab_size: 20_000,
            embed_dim: 64,
            windows: vec![3, 4, 5],
            maps_per_window: 64,
            hidden: 600,
            paragraph_hidden: 600,
            embedding_mode: EmbeddingMode::Learned,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("maps_per_window", self.maps_per_window),
            ("hidden", self.hidden),
            ("paragraph_hidden", self.paragraph_hidden),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0usize) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size <= crate::text::RESERVED.len() {
            return Err(Error::Config("vocabulary must hold more than the reserved tokens".into()));
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return Err(Error::Config("windows must be a non-empty list of positive sizes".into()));
        }
        Ok(())
    }

    pub fn z_dim(&self) -> usize {
        let mut w = self.windows.clone();
        w.sort_unstable();
        w.dedup();
        w.len() * self.maps_per_window
    }

    /// `window:maps` per block of `z`, in layout order.
    pub fn block_order(&self) -> String {
        let mut w = self.windows.clone();
        w.sort_unstable();
        w.dedup();
        w.iter()
            .map(|h| format!("{h}:{}", self.maps_per_window))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn to_kv(&self) -> String {
        format!(
            "vocab_size={}\nembed_dim={}\nwindows={}\nmaps_per_window={}\nhidden={}\nparagraph_hidden={}\nembedding_mode={}\n",
            self.vocab_size,
            self.embed_dim,
            windows_str(&self.windows),
            self.maps_per_window,
            self.hidden,
            self.paragraph_hidden,
            self.embedding_mode.as_str(),
        )
    }

    /// Applies one `key=value` pair; returns false for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "vocab_size" => self.vocab_size = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "windows" => self.windows = parse_windows(key, value)?,
            "maps_per_window" => self.maps_per_window = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "paragraph_hidden" => self.paragraph_hidden = num(key, value)?,
            "embedding_mode" => self.embedding_mode = EmbeddingMode::parse(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Optimization recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub sentences_per_paragraph: usize,
    pub dropout: f64,
    pub init_range: f64,
    pub forget_bias: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            clip_norm: 5.0,
            batch_size: 64,
            sentences_per_paragraph: 8,
            dropout: 0.5,
            init_range: 0.01,
            forget_bias: 3.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 1,
            max_steps: 1000,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 12] = [
        "learning_rate",
        "clip_norm",
        "batch_size",
        "sentences_per_paragraph",
        "dropout",
        "init_range",
        "forget_bias",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "seed",
        "max_steps",
    ];

    /// Defaults with the per-variant batch size (8 paragraphs for the hierarchical model).
    pub fn for_variant(variant: Variant) -> Self {
        let mut c = Self::default();
        if variant == Variant::Hierarchical {
            c.batch_size = 8;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate >= 0.0),
            ("clip_norm", self.clip_norm > 0.0),
            ("batch_size", self.batch_size > 0),
            ("sentences_per_paragraph", self.sentences_per_paragraph > 0),
            ("dropout", (0.0..1.0).contains(&self.dropout)),
            ("init_range", self.init_range > 0.0),
            ("adam_beta1", (0.0..1.0).contains(&self.adam_beta1)),
            ("adam_beta2", (0.0..1.0).contains(&self.adam_beta2)),
            ("adam_eps", self.adam_eps > 0.0),
        ];
        match positive.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(Error::Config(format!("{name} is out of range"))),
            None if !self.forget_bias.is_finite() => Err(Error::Config("forget_bias must be finite".into())),
            None => Ok(()),
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "learning_rate" => self.learning_rate.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "sentences_per_paragraph" => self.sentences_per_paragraph.to_string(),
            "dropout" => self.dropout.to_string(),
            "init_range" => self.init_range.to_string(),
            "forget_bias" => self.forget_bias.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "seed" => self.seed.to_string(),
            "max_steps" => self.max_steps.to_string(),
            _ => return None,
        })
    }

    /// Applies one `key=value` pair; returns false for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "sentences_per_paragraph" => self.sentences_per_paragraph = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "init_range" => self.init_range = num(key, value)?,
            "forget_bias" => self.forget_bias = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical `key=value` form; parsing it back yields an equal config.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_kv(text)? {
            if !c.set(&k, &v)? {
                return Err(Error::Config(format!("unknown training key `{k}`")));
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.clip_norm, c.batch_size), (2e-4, 5.0, 64));
        assert_eq!((c.sentences_per_paragraph, c.init_range, c.forget_bias), (8, 0.01, 3.0));
        assert_eq!(TrainConfig::for_variant(Variant::Hierarchical).batch_size, 8);
        c.validate().unwrap();
        let full = ModelDims {
            maps_per_window: 800,
            ..ModelDims::default()
        };
        assert_eq!(full.z_dim(), 2400);
        assert_eq!(full.block_order(), "3:800,4:800,5:800");
    }

    #[test]
    fn invalid_values_rejected() {
        let c = TrainConfig {
            clip_norm: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(TrainConfig::from_kv("batch_size=abc").is_err());
        assert!(TrainConfig::from_kv("nonsense=1").is_err());
        assert!(parse_kv("no equals sign").is_err());
        let mut d = ModelDims::default();
        assert!(d.set("windows", "3,x").is_err());
        d.windows.clear();
        assert!(d.validate().is_err());
    }

    proptest! {
        #[test]
        fn kv_round_trip(lr in 1e-6f64..1.0, clip in 0.1f64..100.0, batch in 1usize..512,
                         dropout in 0.0f64..0.99, seed in any::<u64>(), steps in 0usize..100_000) {
            let c = TrainConfig { learning_rate: lr, clip_norm: clip, batch_size: batch,
                                  dropout, seed, max_steps: steps, ..TrainConfig::default() };
            let text = c.to_kv();
            let back = TrainConfig::from_kv(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_kv(), text);
        }
    }
}
