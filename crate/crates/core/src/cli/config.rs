use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::trainer::TrainConfig;

/// Everything a command may need, read from a `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Directory of sparse training patches.
    pub input_dir: Option<PathBuf>,
    /// Directory of dense patches, matched to inputs by file name.
    pub target_dir: Option<PathBuf>,
    /// Required point count of each training input; 0 accepts any.
    pub input_points: usize,
    /// Required point count of each training target; 0 accepts any.
    pub target_points: usize,
    pub patch_size: usize,
    pub coverage: usize,
    /// Checkpoint written by `train`.
    pub model_path: PathBuf,
    /// Training log; defaults to the checkpoint path with a `.csv` extension.
    pub log_path: Option<PathBuf>,
    /// Checkpoint to continue training from.
    pub resume: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            input_dir: None,
            target_dir: None,
            input_points: 256,
            target_points: 1024,
            patch_size: 256,
            coverage: 2,
            model_path: PathBuf::from("model.smog"),
            log_path: None,
            resume: None,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "bad value {value:?} for key {key} (expected true or false)"
        ))),
    }
}

impl RunConfig {
    /// Parses config text. A `preset` key (desk, paper, toy) is applied
    /// before all other keys regardless of its position.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut order = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
            }
            order.push(k);
        }
        let mut cfg = Self::default();
        if let Some(p) = entries.get("preset") {
            cfg.apply_preset(p)?;
        }
        for k in order.iter().filter(|k| *k != "preset") {
            cfg.set(k, &entries[k])?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let (model, train) = match name {
            "desk" => (ModelConfig::desk(), TrainConfig::default()),
            "paper" => (ModelConfig::paper(), TrainConfig::paper()),
            "toy" => (ModelConfig::toy(), TrainConfig::default()),
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset {name:?} (expected desk, paper or toy)"
                )))
            }
        };
        self.model = model;
        self.train = train;
        Ok(())
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "preset" => self.apply_preset(value)?,
            "width" => m.width = parse(key, value)?,
            "backbone_k" => m.backbone_k = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "encoder_layers" => m.encoder_layers = parse(key, value)?,
            "encoder_mlp" => m.encoder_mlp = parse(key, value)?,
            "decoder_layers" => m.decoder_layers = parse(key, value)?,
            "decoder_mlp" => m.decoder_mlp = parse(key, value)?,
            "fourier_freqs" => m.fourier_freqs = parse(key, value)?,
            "refine_k_per_ratio" => m.refine_k_per_ratio = parse(key, value)?,
            "refine_k_min" => m.refine_k_min = parse(key, value)?,
            "refine" => m.refine = parse_bool(key, value)?,
            "sampling" => m.sampling = value.parse()?,
            "components" => m.components = value.parse()?,
            "init_seed" => m.init_seed = parse(key, value)?,
            "train_ratio" => t.train_ratio = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "iterations" => t.iterations = parse(key, value)?,
            "lr_start" => t.lr_start = parse(key, value)?,
            "lr_end" => t.lr_end = parse(key, value)?,
            "weight_decay" => t.optimizer.weight_decay = parse(key, value)?,
            "beta1" => t.optimizer.beta1 = parse(key, value)?,
            "beta2" => t.optimizer.beta2 = parse(key, value)?,
            "adam_eps" => t.optimizer.eps = parse(key, value)?,
            "grad_clip_norm" => t.grad_clip_norm = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "augment_rotation" => t.augment_rotation = parse_bool(key, value)?,
            "augment_jitter" => t.augment_jitter = parse_bool(key, value)?,
            "perturbation_sigma" => t.perturbation_sigma = parse(key, value)?,
            "lambda1" => t.weights.lambda1 = parse(key, value)?,
            "lambda2" => t.weights.lambda2 = parse(key, value)?,
            "lambda3" => t.weights.lambda3 = parse(key, value)?,
            "projection_sharpness" => t.projection.sharpness = parse(key, value)?,
            "projection_k" => t.projection.neighbor_count = parse(key, value)?,
            "upsampling_loss" => t.upsampling_loss = value.parse()?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "input_dir" => self.input_dir = Some(value.into()),
            "target_dir" => self.target_dir = Some(value.into()),
            "input_points" => self.input_points = parse(key, value)?,
            "target_points" => self.target_points = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "coverage" => self.coverage = parse(key, value)?,
            "model" => self.model_path = value.into(),
            "log" => self.log_path = Some(value.into()),
            "resume" => self.resume = Some(value.into()),
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn log_path(&self) -> PathBuf {
        self.log_path
            .clone()
            .unwrap_or_else(|| self.model_path.with_extension("csv"))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.patch_size == 0 || self.coverage == 0 {
            return Err(Error::Config(
                "patch_size and coverage must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_preset() {
        let c = RunConfig::parse("iterations = 50 # short\n\n# note\npreset = toy\nrefine=false\n")
            .unwrap();
        assert_eq!(c.train.iterations, 50);
        assert_eq!(c.model.width, ModelConfig::toy().width);
        assert!(!c.model.refine);
    }

    #[test]
    fn unknown_key_named() {
        let e = RunConfig::parse("widht = 3").unwrap_err();
        assert!(e.to_string().contains("widht"));
    }

    #[test]
    fn duplicate_and_malformed_rejected() {
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed 1").is_err());
        assert!(RunConfig::parse("seed = x").is_err());
    }

    #[test]
    fn log_path_default() {
        let c = RunConfig::parse("model = out/m.smog").unwrap();
        assert_eq!(c.log_path(), PathBuf::from("out/m.csv"));
    }
}
