//! Inference over a trained encoder, optional harmonization and head.

use crate::attribution::Attributable;
use crate::container::Checkpoint;
use crate::diffcore::BatchStandardizer;
use crate::error::{Error, Result};
use crate::harmonize::PcaModel;
use crate::model::{bin_probabilities, risk_from_probabilities, HeadConfig, StageOneModel, SurvivalHead};
use crate::survival::BinEdges;
use crate::train::{HeadSample, StageTwoResult};
use crate::volume::MultiModalVolume;

/// Per-patient model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub risk: f64,
    pub gate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalPipeline {
    pub encoder: StageOneModel,
    pub pca: Option<PcaModel>,
    pub head: SurvivalHead,
    pub standardizer: BatchStandardizer,
    pub bins: BinEdges,
}

impl SurvivalPipeline {
    pub fn new(encoder: StageOneModel, pca: Option<PcaModel>, stage2: StageTwoResult) -> Self {
        Self { encoder, pca, head: stage2.head, standardizer: stage2.standardizer, bins: stage2.bins }
    }

    /// Raw encoder embedding followed by harmonization, if any.
    pub fn embedding(&self, volume: &MultiModalVolume) -> Result<Vec<f64>> {
        self.harmonize(self.encoder.embed(volume)?)
    }

    pub fn harmonize(&self, z: Vec<f64>) -> Result<Vec<f64>> {
        match &self.pca {
            Some(p) => p.remove(&z),
            None => Ok(z),
        }
    }

    /// Head outputs for an already harmonized embedding.
    pub fn predict_embedding(&self, embedding: Vec<f64>, age: f64) -> Result<Prediction> {
        let a = self.standardizer.infer(&[age]);
        let (logits, gate) = self.head.predict(&embedding, &a)?;
        let probabilities = bin_probabilities(&logits);
        let risk = risk_from_probabilities(&probabilities);
        if !risk.is_finite() {
            return Err(Error::Numeric(format!("risk is {risk}")));
        }
        Ok(Prediction { embedding, logits, probabilities, risk, gate })
    }

    pub fn predict(&self, volume: &MultiModalVolume, age: f64) -> Result<Prediction> {
        self.predict_embedding(self.embedding(volume)?, age)
    }

    /// Stage-2 sample for a patient.
    pub fn sample(&self, volume: &MultiModalVolume, age: f64, record: crate::survival::SurvivalRecord) -> Result<HeadSample> {
        Ok(HeadSample { embedding: self.embedding(volume)?, age, record })
    }

    /// Bind a patient's clinical covariate for attribution.
    pub fn for_patient(&self, age: f64) -> PatientModel<'_> {
        PatientModel { pipeline: self, age }
    }
}

/// Head checkpoint: parameters plus the clinical running statistics and the
/// interior bin edges.
pub fn head_checkpoint(head: &SurvivalHead, standardizer: &BatchStandardizer, bins: &BinEdges) -> Checkpoint {
    let mut ck = head.to_checkpoint();
    ck.push("clinical.running", vec![2], vec![standardizer.running_mean as f32, standardizer.running_var as f32]);
    ck.push("bins.interior", vec![bins.interior().len()], bins.interior().iter().map(|&v| v as f32).collect());
    ck
}

pub fn head_from_checkpoint(config: HeadConfig, ck: &Checkpoint) -> Result<(SurvivalHead, BatchStandardizer, BinEdges)> {
    let head = SurvivalHead::from_checkpoint(config, ck)?;
    let run = &ck.require("clinical.running")?.data;
    if run.len() != 2 {
        return Err(Error::Checkpoint("clinical.running must hold mean and variance".into()));
    }
    let standardizer = BatchStandardizer { running_mean: run[0] as f64, running_var: run[1] as f64, ..Default::default() };
    let interior: Vec<f64> = ck.require("bins.interior")?.data.iter().map(|&v| v as f64).collect();
    let bins = BinEdges::from_interior(&interior)?;
    if bins.n_bins() != head.config.bins {
        return Err(Error::Checkpoint(format!("{} bins stored for a head with {}", bins.n_bins(), head.config.bins)));
    }
    Ok((head, standardizer, bins))
}

/// A pipeline with one patient's clinical covariate fixed; the embedding
/// reported to attribution is the raw encoder output.
pub struct PatientModel<'a> {
    pipeline: &'a SurvivalPipeline,
    age: f64,
}

impl Attributable for PatientModel<'_> {
    fn risk_and_embedding(&self, volume: &MultiModalVolume) -> Result<(f64, Vec<f64>)> {
        let z = self.pipeline.encoder.embed(volume)?;
        let p = self.pipeline.predict_embedding(self.pipeline.harmonize(z.clone())?, self.age)?;
        Ok((p.risk, z))
    }
}
