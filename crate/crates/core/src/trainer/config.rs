use std::fmt;
use std::str::FromStr;

use super::optim::AdamWConfig;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, ProjectionConfig};

/// Distance used for the two upsampling terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsamplingLoss {
    Projection,
    Acd,
}

impl fmt::Display for UpsamplingLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Projection => "projection",
            Self::Acd => "acd",
        })
    }
}

impl FromStr for UpsamplingLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projection" => Ok(Self::Projection),
            "acd" => Ok(Self::Acd),
            _ => Err(Error::Config(format!(
                "unknown upsampling loss {s:?} (expected projection or acd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub train_ratio: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub grad_clip_norm: f64,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub augment_rotation: bool,
    pub augment_jitter: bool,
    pub perturbation_sigma: f64,
    pub weights: LossWeights,
    pub projection: ProjectionConfig,
    pub upsampling_loss: UpsamplingLoss,
    /// Steps between checkpoints; 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train_ratio: 4.0,
            batch_size: 8,
            iterations: 2000,
            lr_start: 5e-4,
            lr_end: 1e-6,
            grad_clip_norm: 0.1,
            optimizer: AdamWConfig::default(),
            seed: 0,
            augment_rotation: true,
            augment_jitter: true,
            perturbation_sigma: 0.005,
            weights: LossWeights::default(),
            projection: ProjectionConfig::default(),
            upsampling_loss: UpsamplingLoss::Projection,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Batch 64 for 100 000 iterations.
    pub fn paper() -> Self {
        Self {
            batch_size: 64,
            iterations: 100_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.train_ratio > 0.0 && self.train_ratio.is_finite()) {
            return bad(format!(
                "train_ratio must be positive, got {}",
                self.train_ratio
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start > self.lr_end && self.lr_start.is_finite()) {
            return bad(format!(
                "learning rates must satisfy lr_start > lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad(format!(
                "grad_clip_norm must be positive, got {}",
                self.grad_clip_norm
            ));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return bad(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                o.beta1, o.beta2
            ));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return bad("adam eps must be positive and weight_decay non-negative".into());
        }
        if !(self.perturbation_sigma >= 0.0 && self.perturbation_sigma.is_finite()) {
            return bad(format!(
                "perturbation_sigma must be non-negative, got {}",
                self.perturbation_sigma
            ));
        }
        self.weights.validate()?;
        self.projection.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_valid() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::paper().validate().unwrap();
    }

    #[test]
    fn lr_order_enforced() {
        let c = TrainConfig {
            lr_end: 1e-3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn loss_names() {
        for l in [UpsamplingLoss::Projection, UpsamplingLoss::Acd] {
            assert_eq!(l.to_string().parse::<UpsamplingLoss>().unwrap(), l);
        }
        assert!("l2".parse::<UpsamplingLoss>().is_err());
    }
}
