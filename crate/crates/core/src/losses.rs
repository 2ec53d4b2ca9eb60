//! Training objectives.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::survival::SurvivalRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tau: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { tau: 0.1, beta: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative, got tau={} beta={}", self.tau, self.beta)));
        }
        Ok(())
    }
}

/// Mean squared voxel error.
pub fn recon_mse(tape: &mut Tape, target: Var, recon: Var) -> Result<Var> {
    if tape.shape(target) != tape.shape(recon) {
        return Err(Error::ShapeMismatch(format!("recon {:?} vs target {:?}", tape.shape(recon), tape.shape(target))));
    }
    let d = tape.sub(recon, target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// `-log softmax(logits)[label]`.
pub fn ce_bins(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    let bins = tape.value(logits).numel();
    if label >= bins {
        return Err(Error::LabelOutOfRange { label, bins });
    }
    let ls = tape.log_softmax(logits);
    let pick = tape.slice(ls, label, 1)?;
    Ok(tape.neg(pick))
}

/// Breslow negative partial log-likelihood divided by the event count, with
/// its gradient in `eta`. Zero events give zero loss and gradient.
pub fn cox_nll(eta: &[f64], records: &[SurvivalRecord]) -> Result<(f64, Vec<f64>)> {
    if eta.len() != records.len() {
        return Err(Error::ShapeMismatch(format!("{} hazards for {} records", eta.len(), records.len())));
    }
    let n = eta.len();
    let events = records.iter().filter(|r| r.event).count();
    let mut grad = vec![0.0; n];
    if events == 0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for i in (0..n).filter(|&i| records[i].event) {
        let risk: Vec<usize> = (0..n).filter(|&j| records[j].time >= records[i].time).collect();
        let m = risk.iter().map(|&j| eta[j]).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = risk.iter().map(|&j| (eta[j] - m).exp()).sum();
        let lse = m + s.ln();
        loss -= eta[i] - lse;
        grad[i] -= 1.0;
        for &j in &risk {
            grad[j] += (eta[j] - lse).exp();
        }
    }
    let e = events as f64;
    grad.iter_mut().for_each(|g| *g /= e);
    Ok((loss / e, grad))
}

/// [`cox_nll`] on the tape, over one scalar hazard per patient.
pub fn cox_nll_var(tape: &mut Tape, hazards: &[Var], records: &[SurvivalRecord]) -> Result<Var> {
    let eta = tape.concat(hazards);
    let (value, grad) = cox_nll(tape.value(eta).data(), records)?;
    tape.custom_scalar(value, vec![(eta, Tensor::vector(grad))])
}

/// `recon + tau * topo + beta * cox`.
pub fn total_loss(tape: &mut Tape, recon: Var, topo: Var, cox: Var, w: &LossWeights) -> Result<Var> {
    let t = tape.scale(topo, w.tau);
    let c = tape.scale(cox, w.beta);
    let s = tape.add(recon, t)?;
    tape.add(s, c)
}
