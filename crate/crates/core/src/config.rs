//! Run configuration shared by training, evaluation and the CLI.

use serde::{Deserialize, Serialize};

use crate::attribution::{OcclusionConfig, DEFAULT_TOP_DIMS};
use crate::diffcore::AdamWConfig;
use crate::error::{Error, Result};
use crate::harmonize::DEFAULT_DISCARD;
use crate::losses::LossWeights;
use crate::model::{EncoderConfig, HeadConfig};
use crate::topology::DiagramDistance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl StageConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..Default::default() }
    }

    fn validate(&self, stage: &str) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("{stage}: epochs, patience and batch size must be at least 1")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("{stage}: need lr > 0 and weight decay >= 0")));
        }
        Ok(())
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { lr: 5e-5, weight_decay: 5e-2, epochs: 100, patience: 15, batch_size: 8 }
    }
}

/// Synthetic cohort layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomCohortConfig {
    pub count: usize,
    pub hollow_fraction: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Cavity radius as a fraction of the outer radius for hollow tumors.
    pub cavity_ratio: f64,
    pub noise_sigma: f32,
}

impl Default for PhantomCohortConfig {
    fn default() -> Self {
        Self { count: 32, hollow_fraction: 0.5, min_radius: 3.0, max_radius: 6.0, cavity_ratio: 0.5, noise_sigma: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub loss: LossWeights,
    pub alpha: [f64; 3],
    pub distance: DiagramDistance,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    /// Minimum validation C-index gain that resets the patience counter.
    pub tolerance: f64,
    /// Train, validation and test fractions.
    pub splits: [f64; 3],
    pub occlusion: OcclusionConfig,
    pub top_dims: usize,
    pub harmonize: bool,
    pub harmonize_k: usize,
    pub phantom: PhantomCohortConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            loss: LossWeights::default(),
            alpha: [1.0; 3],
            distance: DiagramDistance::default(),
            stage1: StageConfig { lr: 1e-3, ..Default::default() },
            stage2: StageConfig::default(),
            tolerance: 1e-4,
            splits: [0.7, 0.15, 0.15],
            occlusion: OcclusionConfig::default(),
            top_dims: DEFAULT_TOP_DIMS,
            harmonize: true,
            harmonize_k: DEFAULT_DISCARD,
            phantom: PhantomCohortConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.head.validate()?;
        if self.head.latent_dim != self.encoder.latent_dim {
            return Err(Error::Config(format!("head latent dim {} differs from encoder latent dim {}", self.head.latent_dim, self.encoder.latent_dim)));
        }
        self.loss.validate()?;
        if self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("alpha weights must be non-negative".into()));
        }
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")?;
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be non-negative".into()));
        }
        if self.splits.iter().any(|f| !(*f >= 0.0)) || (self.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.splits[0] == 0.0 {
            return Err(Error::Config(format!("split fractions {:?} must be non-negative, sum to 1, with a non-empty train split", self.splits)));
        }
        self.occlusion.validate()?;
        if self.harmonize && self.harmonize_k > self.encoder.latent_dim {
            return Err(Error::Config(format!("cannot discard {} of {} components", self.harmonize_k, self.encoder.latent_dim)));
        }
        let p = &self.phantom;
        if !(0.0..=1.0).contains(&p.hollow_fraction) || !(0.0 < p.cavity_ratio && p.cavity_ratio < 1.0) || !(0.0 < p.min_radius && p.min_radius <= p.max_radius) || !(p.noise_sigma >= 0.0) {
            return Err(Error::Config("invalid phantom cohort settings".into()));
        }
        Ok(())
    }
}
