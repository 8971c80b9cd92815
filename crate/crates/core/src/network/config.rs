use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Where decoder queries come from at upsampling time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Draw from the predicted mixture.
    Smog,
    /// Uniform on the sphere, ignoring the mixture.
    Uniform,
}

/// Which mixture components are used for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentMode {
    All,
    /// A farthest-point subset of N/4 components.
    Quarter,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::Smog => "smog",
            SamplingMode::Uniform => "uniform",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smog" => Ok(SamplingMode::Smog),
            "uniform" => Ok(SamplingMode::Uniform),
            _ => Err(Error::Config(format!("unknown sampling mode {s:?}"))),
        }
    }
}

impl fmt::Display for ComponentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComponentMode::All => "all",
            ComponentMode::Quarter => "quarter",
        })
    }
}

impl FromStr for ComponentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ComponentMode::All),
            "quarter" => Ok(ComponentMode::Quarter),
            _ => Err(Error::Config(format!("unknown component mode {s:?}"))),
        }
    }
}

/// Architecture hyperparameters. Fixed once a model is built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Feature width D shared by backbone, encoder and decoder.
    pub width: usize,
    /// Backbone neighbourhood size.
    pub backbone_k: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub encoder_mlp: usize,
    pub decoder_layers: usize,
    pub decoder_mlp: usize,
    /// Number of dyadic Fourier frequencies L.
    pub fourier_freqs: usize,
    /// Refinement neighbourhood is `max(refine_k_min, round(refine_k_per_ratio · r))`.
    pub refine_k_per_ratio: f64,
    pub refine_k_min: usize,
    pub refine: bool,
    pub sampling: SamplingMode,
    pub components: ComponentMode,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-size architecture.
    pub fn paper() -> Self {
        Self {
            width: 128,
            backbone_k: 32,
            heads: 4,
            encoder_layers: 1,
            encoder_mlp: 64,
            decoder_layers: 2,
            decoder_mlp: 128,
            fourier_freqs: 8,
            refine_k_per_ratio: 4.0,
            refine_k_min: 4,
            refine: true,
            sampling: SamplingMode::Smog,
            components: ComponentMode::All,
            init_seed: 0,
        }
    }

    /// Narrower variant that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            width: 32,
            backbone_k: 16,
            encoder_mlp: 64,
            decoder_mlp: 64,
            ..Self::paper()
        }
    }

    /// Smallest sensible variant, for finite-difference checks.
    pub fn toy() -> Self {
        Self {
            width: 16,
            backbone_k: 8,
            encoder_mlp: 16,
            decoder_mlp: 32,
            fourier_freqs: 4,
            ..Self::paper()
        }
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("backbone_k", self.backbone_k),
            ("heads", self.heads),
            ("encoder_mlp", self.encoder_mlp),
            ("decoder_mlp", self.decoder_mlp),
            ("fourier_freqs", self.fourier_freqs),
            ("refine_k_min", self.refine_k_min),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.fourier_freqs > 30 {
            return Err(Error::Config("fourier_freqs must be at most 30".into()));
        }
        if !(self.refine_k_per_ratio > 0.0 && self.refine_k_per_ratio.is_finite()) {
            return Err(Error::Config("refine_k_per_ratio must be positive".into()));
        }
        Ok(())
    }

    /// `max(refine_k_min, round(refine_k_per_ratio · r))`.
    pub fn refine_k(&self, ratio: f64) -> usize {
        ((self.refine_k_per_ratio * ratio).round() as usize).max(self.refine_k_min)
    }

    pub fn to_header(&self) -> BTreeMap<String, String> {
        let mut h = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            h.insert(format!("model.{k}"), v);
        };
        put("width", self.width.to_string());
        put("backbone_k", self.backbone_k.to_string());
        put("heads", self.heads.to_string());
        put("encoder_layers", self.encoder_layers.to_string());
        put("encoder_mlp", self.encoder_mlp.to_string());
        put("decoder_layers", self.decoder_layers.to_string());
        put("decoder_mlp", self.decoder_mlp.to_string());
        put("fourier_freqs", self.fourier_freqs.to_string());
        put("refine_k_per_ratio", self.refine_k_per_ratio.to_string());
        put("refine_k_min", self.refine_k_min.to_string());
        put("refine", self.refine.to_string());
        put("sampling", self.sampling.to_string());
        put("components", self.components.to_string());
        put("init_seed", self.init_seed.to_string());
        h
    }

    pub fn from_header(h: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: FromStr>(h: &BTreeMap<String, String>, k: &str) -> Result<V> {
            let key = format!("model.{k}");
            let raw = h
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing header key {key}")))?;
            raw.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value {raw:?} for {key}")))
        }
        let c = Self {
            width: get(h, "width")?,
            backbone_k: get(h, "backbone_k")?,
            heads: get(h, "heads")?,
            encoder_layers: get(h, "encoder_layers")?,
            encoder_mlp: get(h, "encoder_mlp")?,
            decoder_layers: get(h, "decoder_layers")?,
            decoder_mlp: get(h, "decoder_mlp")?,
            fourier_freqs: get(h, "fourier_freqs")?,
            refine_k_per_ratio: get(h, "refine_k_per_ratio")?,
            refine_k_min: get(h, "refine_k_min")?,
            refine: get(h, "refine")?,
            sampling: get(h, "sampling")?,
            components: get(h, "components")?,
            init_seed: get(h, "init_seed")?,
        };
        c.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_roundtrip() {
        let mut c = ModelConfig::desk();
        c.sampling = SamplingMode::Uniform;
        c.components = ComponentMode::Quarter;
        c.refine = false;
        assert_eq!(ModelConfig::from_header(&c.to_header()).unwrap(), c);
    }

    #[test]
    fn refine_k_rule() {
        let c = ModelConfig::paper();
        assert_eq!(c.refine_k(4.0), 16);
        assert_eq!(c.refine_k(2.34), 9);
        assert_eq!(c.refine_k(0.5), 4);
        assert_eq!(c.refine_k(1.0), 4);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::paper().validate().is_ok());
        let c = ModelConfig {
            heads: 3,
            ..ModelConfig::paper()
        };
        assert!(c.validate().is_err());
    }
}
