//! Two-stage training.
//!
//! Stage 1 fits the encoder, decoder and linear hazard head on the joint
//! objective `recon + tau * topo + beta * cox`. Stage 2 freezes the encoder
//! and trains the gated attention head on discrete-time bins, keeping the
//! epoch with the best validation C-index.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, StageConfig};
use crate::container::Checkpoint;
use crate::dataset::{derive_seed, Patient, STREAM_INIT, STREAM_SHUFFLE};
use crate::diffcore::{AdamW, BatchStandardizer, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{ce_bins, cox_nll_var, recon_mse, total_loss};
use crate::model::{risk_from_logits, volume_tensor, HeadConfig, ParamSet, StageOneModel, SurvivalHead};
use crate::survival::{bin_label, c_index, make_bin_edges, BinEdges, SurvivalRecord};
use crate::topology::{grid_side, input_slice_diagram, latent_topo_loss, PersistenceDiagram};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub topo: f64,
    pub cox: f64,
    pub ce: f64,
    pub total: f64,
    pub val_loss: Option<f64>,
    pub val_c_index: Option<f64>,
    pub best: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.epochs {
            w.serialize(e)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

/// Shuffled batches for one epoch. A trailing batch of one is merged into
/// its predecessor, since batch statistics need two samples.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE, epoch as u64)));
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is {v}")))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Loss components of one Stage-1 batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOneLosses {
    pub recon: f64,
    pub topo: f64,
    pub cox: f64,
    pub total: f64,
}

/// Record the Stage-1 objective for `batch` on `tape`.
///
/// Reconstruction and topology terms are averaged over the batch; the Cox
/// term is taken over the batch's risk sets.
pub fn stage1_batch_loss(
    model: &StageOneModel,
    tape: &mut Tape,
    vars: &[Var],
    batch: &[(&Patient, &PersistenceDiagram)],
    cfg: &RunConfig,
) -> Result<(Var, StageOneLosses)> {
    let mut recons = Vec::with_capacity(batch.len());
    let mut topos = Vec::with_capacity(batch.len());
    let mut hazards = Vec::with_capacity(batch.len());
    let mut records = Vec::with_capacity(batch.len());
    for (p, target) in batch {
        let x = tape.constant(volume_tensor(&p.volume));
        let out = model.forward(tape, vars, x)?;
        recons.push(recon_mse(tape, x, out.recon)?);
        let (value, dz) = latent_topo_loss(tape.value(out.z).data(), target, &cfg.alpha, cfg.distance)?;
        topos.push(tape.custom_scalar(value, vec![(out.z, Tensor::vector(dz))])?);
        hazards.push(out.hazard);
        records.push(p.record.clone());
    }
    let inv = 1.0 / batch.len() as f64;
    let r = tape.concat(&recons);
    let r = tape.sum(r);
    let recon = tape.scale(r, inv);
    let t = tape.concat(&topos);
    let t = tape.sum(t);
    let topo = tape.scale(t, inv);
    let cox = cox_nll_var(tape, &hazards, &records)?;
    let total = total_loss(tape, recon, topo, cox, &cfg.loss)?;
    let losses = StageOneLosses {
        recon: tape.value(recon).item(),
        topo: tape.value(topo).item(),
        cox: tape.value(cox).item(),
        total: tape.value(total).item(),
    };
    Ok((total, losses))
}

/// Everything needed to continue Stage-1 training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneState {
    pub model: StageOneModel,
    pub opt: AdamW,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val: f64,
    pub best_epoch: usize,
    pub since_best: usize,
    pub best_params: ParamSet,
    pub log: TrainLog,
}

impl StageOneState {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let model = StageOneModel::new(cfg.encoder.clone(), derive_seed(cfg.seed, STREAM_INIT, 1))?;
        let mut opt = AdamW::new(cfg.stage1.adamw(), model.params.tensors());
        opt.round_to_f32 = true;
        let best_params = model.params.clone();
        Ok(Self { model, opt, epoch: 0, best_val: f64::INFINITY, best_epoch: 0, since_best: 0, best_params, log: TrainLog::default() })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        self.model.params.write_to(&mut ck, "");
        self.best_params.write_to(&mut ck, "best.");
        let names = self.model.params.names();
        for (i, name) in names.iter().enumerate() {
            ck.push(format!("opt.m.{name}"), self.opt.m[i].shape().to_vec(), self.opt.m[i].to_f32());
            ck.push(format!("opt.v.{name}"), self.opt.v[i].shape().to_vec(), self.opt.v[i].to_f32());
        }
        // Counters stay exact in f32 up to 2^24.
        ck.push("state.counters", vec![4], vec![self.opt.t as f32, self.epoch as f32, self.best_epoch as f32, self.since_best as f32]);
        ck.push("state.best_val", vec![1], vec![self.best_val as f32]);
        ck
    }

    /// Restore training state; the log is not part of the checkpoint.
    pub fn from_checkpoint(cfg: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        let mut s = Self::new(cfg)?;
        s.model.params.read_from(ck, "")?;
        s.best_params.read_from(ck, "best.")?;
        let names = s.model.params.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            for (prefix, slot) in [("opt.m.", &mut s.opt.m[i]), ("opt.v.", &mut s.opt.v[i])] {
                let rec = ck.require(&format!("{prefix}{name}"))?;
                *slot = Tensor::from_f32(rec.shape.clone(), &rec.data)?;
                if slot.shape() != s.model.params.tensors()[i].shape() {
                    return Err(Error::Checkpoint(format!("optimizer state {prefix}{name} has the wrong shape")));
                }
            }
        }
        let c = &ck.require("state.counters")?.data;
        if c.len() != 4 {
            return Err(Error::Checkpoint("state.counters must hold 4 values".into()));
        }
        s.opt.t = c[0] as u64;
        s.epoch = c[1] as usize;
        s.best_epoch = c[2] as usize;
        s.since_best = c[3] as usize;
        s.best_val = ck.require("state.best_val")?.data[0] as f64;
        Ok(s)
    }

    /// Model holding the best parameters seen so far.
    pub fn best_model(&self) -> StageOneModel {
        let mut m = self.model.clone();
        m.params = self.best_params.clone();
        m
    }
}

/// Stage-1 trainer over fixed train and validation cohorts.
pub struct StageOneTrainer<'a> {
    pub cfg: &'a RunConfig,
    train: &'a [Patient],
    val: &'a [Patient],
    train_targets: Vec<PersistenceDiagram>,
    val_targets: Vec<PersistenceDiagram>,
}

impl<'a> StageOneTrainer<'a> {
    pub fn new(cfg: &'a RunConfig, train: &'a [Patient], val: &'a [Patient]) -> Result<Self> {
        cfg.validate()?;
        if train.len() < 2 {
            return Err(Error::DegenerateInput(format!("stage 1 needs at least 2 training patients, got {}", train.len())));
        }
        let side = grid_side(cfg.encoder.latent_dim)?;
        let targets = |ps: &[Patient]| ps.iter().map(|p| input_slice_diagram(&p.volume, side)).collect::<Result<Vec<_>>>();
        Ok(Self { cfg, train, val, train_targets: targets(train)?, val_targets: targets(val)? })
    }

    fn pairs<'b>(ps: &'b [Patient], ts: &'b [PersistenceDiagram], idx: &[usize]) -> Vec<(&'b Patient, &'b PersistenceDiagram)> {
        idx.iter().map(|&i| (&ps[i], &ts[i])).collect()
    }

    /// Mean objective over a cohort, evaluated in batches without updates.
    pub fn evaluate(&self, model: &StageOneModel, on_val: bool) -> Result<StageOneLosses> {
        let (ps, ts) = if on_val { (self.val, &self.val_targets) } else { (self.train, &self.train_targets) };
        let idx: Vec<usize> = (0..ps.len()).collect();
        let mut acc = Vec::new();
        for chunk in idx.chunks(self.cfg.stage1.batch_size) {
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape, false);
            let (_, l) = stage1_batch_loss(model, &mut tape, &vars, &Self::pairs(ps, ts, chunk), self.cfg)?;
            acc.push((l, chunk.len() as f64));
        }
        let n: f64 = acc.iter().map(|a| a.1).sum();
        let w = |f: fn(&StageOneLosses) -> f64| acc.iter().map(|(l, c)| f(l) * c).sum::<f64>() / n;
        Ok(StageOneLosses { recon: w(|l| l.recon), topo: w(|l| l.topo), cox: w(|l| l.cox), total: w(|l| l.total) })
    }

    /// Run one epoch of updates and bookkeeping.
    pub fn step_epoch(&self, state: &mut StageOneState) -> Result<EpochLog> {
        let sc: &StageConfig = &self.cfg.stage1;
        let epoch = state.epoch + 1;
        let mut parts: Vec<StageOneLosses> = Vec::new();
        for batch in epoch_batches(self.train.len(), sc.batch_size, self.cfg.seed, epoch) {
            let mut tape = Tape::new();
            let vars = state.model.params.bind(&mut tape, true);
            let (loss, l) = stage1_batch_loss(&state.model, &mut tape, &vars, &Self::pairs(self.train, &self.train_targets, &batch), self.cfg)?;
            check_finite("stage-1 loss", l.total)?;
            let mut grads = tape.backward(loss)?;
            let g: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
            state.opt.step(state.model.params.tensors_mut(), &g)?;
            parts.push(l);
        }
        let avg = |f: fn(&StageOneLosses) -> f64| mean(&parts.iter().map(f).collect::<Vec<_>>());
        let (recon, topo, cox, total) = (avg(|l| l.recon), avg(|l| l.topo), avg(|l| l.cox), avg(|l| l.total));
        let val_loss = if self.val.is_empty() { None } else { Some(check_finite("validation loss", self.evaluate(&state.model, true)?.total)?) };
        let monitored = (val_loss.unwrap_or(total) as f32) as f64;
        let best = monitored < state.best_val;
        if best {
            state.best_val = monitored;
            state.best_epoch = epoch;
            state.since_best = 0;
            state.best_params = state.model.params.clone();
        } else {
            state.since_best += 1;
        }
        state.epoch = epoch;
        let row = EpochLog { epoch, recon, topo, cox, ce: 0.0, total, val_loss, val_c_index: None, best };
        state.log.epochs.push(row.clone());
        state.log.best_epoch = state.best_epoch;
        Ok(row)
    }

    /// Train until `stage1.epochs` or until validation loss stalls for
    /// `stage1.patience` epochs.
    pub fn run(&self, state: &mut StageOneState) -> Result<()> {
        while state.epoch < self.cfg.stage1.epochs {
            self.step_epoch(state)?;
            if state.since_best >= self.cfg.stage1.patience {
                state.log.stopped_early = true;
                break;
            }
        }
        Ok(())
    }
}

/// Convenience wrapper: fresh state, full run, best model.
pub fn train_stage1(cfg: &RunConfig, train: &[Patient], val: &[Patient]) -> Result<(StageOneModel, TrainLog)> {
    let trainer = StageOneTrainer::new(cfg, train, val)?;
    let mut state = StageOneState::new(cfg)?;
    trainer.run(&mut state)?;
    Ok((state.best_model(), state.log))
}

/// Stage-2 inputs for one patient: a frozen embedding, clinical covariate
/// and survival outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSample {
    pub embedding: Vec<f64>,
    pub age: f64,
    pub record: SurvivalRecord,
}

/// Trained Stage-2 state.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoResult {
    pub head: SurvivalHead,
    pub standardizer: BatchStandardizer,
    pub bins: BinEdges,
    pub log: TrainLog,
}

/// Risk scores for `samples` under inference-mode standardization.
pub fn head_risks(head: &SurvivalHead, standardizer: &BatchStandardizer, samples: &[HeadSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let a = standardizer.infer(&[s.age]);
            let (logits, _) = head.predict(&s.embedding, &a)?;
            Ok(risk_from_logits(&logits))
        })
        .collect()
}

/// C-index with 0.5 when no pair is comparable.
pub fn c_index_or_half(risks: &[f64], records: &[SurvivalRecord]) -> Result<f64> {
    match c_index(risks, records) {
        Err(Error::NoComparablePairs) => Ok(0.5),
        other => other,
    }
}

/// Train the survival head with early stopping on validation C-index.
///
/// Every patient contributes a cross-entropy term on the bin holding its
/// observed time. Bin edges come from the training events.
pub fn train_stage2(cfg: &RunConfig, train: &[HeadSample], val: &[HeadSample]) -> Result<StageTwoResult> {
    let hc: HeadConfig = HeadConfig { latent_dim: train.first().map_or(cfg.head.latent_dim, |s| s.embedding.len()), ..cfg.head.clone() };
    hc.validate()?;
    let sc = &cfg.stage2;
    if sc.epochs == 0 || sc.patience == 0 || sc.batch_size == 0 {
        return Err(Error::Config("stage2: epochs, patience and batch size must be at least 1".into()));
    }
    if train.len() < 2 {
        return Err(Error::DegenerateInput(format!("stage 2 needs at least 2 training patients, got {}", train.len())));
    }
    let records: Vec<SurvivalRecord> = train.iter().map(|s| s.record.clone()).collect();
    let bins = make_bin_edges(&records, hc.bins)?;
    let labels: Vec<usize> = train.iter().map(|s| bin_label(s.record.time, &bins)).collect();
    let val_set: &[HeadSample] = if val.is_empty() { train } else { val };
    let val_records: Vec<SurvivalRecord> = val_set.iter().map(|s| s.record.clone()).collect();

    let mut head = SurvivalHead::new(hc, derive_seed(cfg.seed, STREAM_INIT, 2))?;
    let mut opt = AdamW::new(sc.adamw(), head.params.tensors());
    let mut standardizer = BatchStandardizer::default();
    let mut best: Option<(f64, SurvivalHead, BatchStandardizer)> = None;
    let mut log = TrainLog::default();
    let mut since_best = 0;
    for epoch in 1..=sc.epochs {
        let mut ces = Vec::new();
        for batch in epoch_batches(train.len(), sc.batch_size, derive_seed(cfg.seed, STREAM_SHUFFLE, u64::MAX), epoch) {
            let ages: Vec<f64> = batch.iter().map(|&i| train[i].age).collect();
            let std_ages = standardizer.train(&ages)?;
            let mut tape = Tape::new();
            let vars = head.params.bind(&mut tape, true);
            let mut terms = Vec::with_capacity(batch.len());
            for (&i, &a) in batch.iter().zip(&std_ages) {
                let z = tape.constant(Tensor::vector(train[i].embedding.clone()));
                let c = tape.constant(Tensor::vector(vec![a]));
                let out = head.forward(&mut tape, &vars, z, c)?;
                terms.push(ce_bins(&mut tape, out.logits, labels[i])?);
            }
            let s = tape.concat(&terms);
            let s = tape.sum(s);
            let loss = tape.scale(s, 1.0 / batch.len() as f64);
            let value = check_finite("stage-2 loss", tape.value(loss).item())?;
            let mut grads = tape.backward(loss)?;
            let g: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
            opt.step(head.params.tensors_mut(), &g)?;
            ces.push(value);
        }
        let c_val = c_index_or_half(&head_risks(&head, &standardizer, val_set)?, &val_records)?;
        let improved = best.as_ref().is_none_or(|(b, _, _)| c_val > b + cfg.tolerance);
        if improved {
            best = Some((c_val, head.clone(), standardizer));
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let ce = mean(&ces);
        log.epochs.push(EpochLog { epoch, recon: 0.0, topo: 0.0, cox: 0.0, ce, total: ce, val_loss: None, val_c_index: Some(c_val), best: improved });
        if since_best >= sc.patience {
            log.stopped_early = true;
            break;
        }
    }
    let (_, head, standardizer) = best.expect("at least one epoch ran");
    Ok(StageTwoResult { head, standardizer, bins, log })
}
