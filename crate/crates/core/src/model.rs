//! The Stage-1 convolutional autoencoder with its hazard head, and the
//! Stage-2 gated attention survival head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Checkpoint;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::topology::grid_side;
use crate::volume::MultiModalVolume;

/// Ordered, named parameter tensors. The order is the checkpoint order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Put every tensor on the tape, as parameters or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) }).collect()
    }

    pub fn write_to(&self, ck: &mut Checkpoint, prefix: &str) {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            ck.push(format!("{prefix}{n}"), t.shape().to_vec(), t.to_f32());
        }
    }

    /// Overwrite every tensor from `ck`; names and shapes must match.
    pub fn read_from(&mut self, ck: &Checkpoint, prefix: &str) -> Result<()> {
        for (n, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let rec = ck.require(&format!("{prefix}{n}"))?;
            if rec.shape != t.shape() {
                return Err(Error::Checkpoint(format!("{prefix}{n}: shape {:?} in file, model expects {:?}", rec.shape, t.shape())));
            }
            *t = Tensor::from_f32(rec.shape.clone(), &rec.data)?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    // Rounded through f32 so a freshly initialised model equals its checkpoint.
    let data = (0..n).map(|_| rng.random_range(-bound..bound) as f32 as f64).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn linear_params(p: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize) -> (usize, usize) {
    let w = p.add(format!("{name}.weight"), uniform(rng, &[out, inp], inp));
    let b = p.add(format!("{name}.bias"), uniform(rng, &[out], inp));
    (w, b)
}

/// Volume as a `[C, D, H, W]` tensor.
pub fn volume_tensor(v: &MultiModalVolume) -> Tensor {
    let [d, h, w] = v.extents();
    Tensor::from_f32(vec![v.n_channels(), d, h, w], v.data()).expect("shape")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub extents: [usize; 3],
    pub in_channels: usize,
    /// Output channels of each convolution block.
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    pub kernel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { extents: [16; 3], in_channels: 4, channels: vec![8, 16, 32], latent_dim: 64, kernel: 3 }
    }
}

impl EncoderConfig {
    /// Full-scale configuration for 128^3 inputs.
    pub fn full_scale() -> Self {
        Self { extents: [128; 3], in_channels: 4, channels: vec![16, 32, 64, 128], latent_dim: 256, kernel: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.channels.len();
        if l == 0 || self.channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("encoder needs at least one block and non-zero channel counts".into()));
        }
        if self.extents.iter().any(|&e| e == 0 || e % (1 << l) != 0) {
            return Err(Error::Config(format!("extents {:?} must be divisible by 2^{l}", self.extents)));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        grid_side(self.latent_dim).map_err(|_| Error::Config(format!("latent dim {} is not a perfect square", self.latent_dim)))?;
        Ok(())
    }

    pub fn bottom_extents(&self) -> [usize; 3] {
        self.extents.map(|e| e >> self.channels.len())
    }

    pub fn flat_len(&self) -> usize {
        self.channels.last().copied().unwrap_or(0) * self.bottom_extents().iter().product::<usize>()
    }
}

/// Encoder, decoder and Stage-1 hazard head.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneModel {
    pub config: EncoderConfig,
    pub params: ParamSet,
    conv: Vec<(usize, usize)>,
    enc_fc: (usize, usize),
    dec_fc: (usize, usize),
    deconv: Vec<(usize, usize)>,
    hazard: (usize, usize),
}

/// Outputs of one Stage-1 forward pass.
#[derive(Debug, Clone, Copy)]
pub struct StageOneOutput {
    pub z: Var,
    pub recon: Var,
    pub hazard: Var,
}

impl StageOneModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::default();
        let k = config.kernel;
        let k3 = k * k * k;
        let mut conv = Vec::new();
        let mut cin = config.in_channels;
        for (i, &co) in config.channels.iter().enumerate() {
            let w = p.add(format!("enc.conv{i}.weight"), uniform(&mut rng, &[co, cin, k, k, k], cin * k3));
            let b = p.add(format!("enc.conv{i}.bias"), uniform(&mut rng, &[co], cin * k3));
            conv.push((w, b));
            cin = co;
        }
        let (flat, d) = (config.flat_len(), config.latent_dim);
        let enc_fc = (p.add("enc.fc.weight", uniform(&mut rng, &[d, flat], flat)), p.add("enc.fc.bias", uniform(&mut rng, &[d], flat)));
        let dec_fc = (p.add("dec.fc.weight", uniform(&mut rng, &[flat, d], d)), p.add("dec.fc.bias", uniform(&mut rng, &[flat], d)));
        let mut deconv = Vec::new();
        let mut widths: Vec<usize> = config.channels.iter().rev().copied().collect();
        widths.push(config.in_channels);
        for (i, pair) in widths.windows(2).enumerate() {
            let (ci, co) = (pair[0], pair[1]);
            let w = p.add(format!("dec.deconv{i}.weight"), uniform(&mut rng, &[ci, co, 2, 2, 2], ci * 8));
            let b = p.add(format!("dec.deconv{i}.bias"), uniform(&mut rng, &[co], ci * 8));
            deconv.push((w, b));
        }
        let hazard = (p.add("hazard.weight", uniform(&mut rng, &[1, d], d)), p.add("hazard.bias", uniform(&mut rng, &[1], d)));
        Ok(Self { config, params: p, conv, enc_fc, dec_fc, deconv, hazard })
    }

    pub fn encode(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let [c, d, h, w] = [self.config.in_channels, self.config.extents[0], self.config.extents[1], self.config.extents[2]];
        if tape.shape(x) != [c, d, h, w] {
            return Err(Error::ShapeMismatch(format!("encoder expects {:?}, got {:?}", [c, d, h, w], tape.shape(x))));
        }
        let pad = self.config.kernel / 2;
        let mut hcur = x;
        for &(wi, bi) in &self.conv {
            let y = tape.conv3d(hcur, vars[wi], Some(vars[bi]), 1, pad)?;
            let y = tape.relu(y);
            hcur = tape.maxpool3d(y)?;
        }
        let flat = tape.reshape(hcur, &[self.config.flat_len()])?;
        tape.linear(vars[self.enc_fc.0], flat, vars[self.enc_fc.1])
    }

    pub fn decode(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        if tape.shape(z) != [self.config.latent_dim] {
            return Err(Error::ShapeMismatch(format!("decoder expects [{}], got {:?}", self.config.latent_dim, tape.shape(z))));
        }
        let flat = tape.linear(vars[self.dec_fc.0], z, vars[self.dec_fc.1])?;
        let b = self.config.bottom_extents();
        let mut hcur = tape.reshape(flat, &[*self.config.channels.last().expect("validated"), b[0], b[1], b[2]])?;
        for (i, &(wi, bi)) in self.deconv.iter().enumerate() {
            hcur = tape.conv_transpose3d(hcur, vars[wi], Some(vars[bi]), 2)?;
            if i + 1 < self.deconv.len() {
                hcur = tape.relu(hcur);
            }
        }
        Ok(hcur)
    }

    pub fn hazard(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        tape.linear(vars[self.hazard.0], z, vars[self.hazard.1])
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<StageOneOutput> {
        let z = self.encode(tape, vars, x)?;
        let recon = self.decode(tape, vars, z)?;
        let hazard = self.hazard(tape, vars, z)?;
        Ok(StageOneOutput { z, recon, hazard })
    }

    /// Embedding of one volume with the current parameters.
    pub fn embed(&self, volume: &MultiModalVolume) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(volume_tensor(volume));
        let z = self.encode(&mut tape, &vars, x)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Embedding and decoded volume, off the gradient path.
    pub fn reconstruct(&self, volume: &MultiModalVolume) -> Result<(Vec<f64>, MultiModalVolume)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(volume_tensor(volume));
        let z = self.encode(&mut tape, &vars, x)?;
        let r = self.decode(&mut tape, &vars, z)?;
        let out = MultiModalVolume::new(volume.n_channels(), volume.extents(), tape.value(r).to_f32())?;
        Ok((tape.value(z).data().to_vec(), out))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        self.params.write_to(&mut ck, "");
        ck
    }

    pub fn from_checkpoint(config: EncoderConfig, ck: &Checkpoint) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.read_from(ck, "")?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub latent_dim: usize,
    pub clinical_dim: usize,
    /// Gate bottleneck; 0 means `latent_dim / 4`.
    pub gate_dim: usize,
    pub attn_dim: usize,
    pub heads: usize,
    pub bins: usize,
    pub layer_norm_affine: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { latent_dim: 64, clinical_dim: 1, gate_dim: 0, attn_dim: 32, heads: 4, bins: 5, layer_norm_affine: true }
    }
}

impl HeadConfig {
    pub fn gate_width(&self) -> usize {
        if self.gate_dim == 0 {
            (self.latent_dim / 4).max(1)
        } else {
            self.gate_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.clinical_dim == 0 || self.attn_dim < 2 || self.heads == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        if self.attn_dim % self.heads != 0 {
            return Err(Error::Config(format!("attention dim {} is not divisible by {} heads", self.attn_dim, self.heads)));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {}", self.bins)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct HeadIdx {
    gate1: (usize, usize),
    gate2: (usize, usize),
    proj_f: (usize, usize),
    proj_c: (usize, usize),
    ln_f: Option<(usize, usize)>,
    ln_c: Option<(usize, usize)>,
    q: Vec<usize>,
    k: Vec<usize>,
    v: Vec<usize>,
    out: usize,
    mlp1: (usize, usize),
    mlp2: (usize, usize),
}

/// Gate, clinical-query attention fusion and MLP over survival bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalHead {
    pub config: HeadConfig,
    pub params: ParamSet,
    idx: HeadIdx,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub gate: Var,
    pub gated: Var,
    pub fused: Var,
    pub logits: Var,
}

impl SurvivalHead {
    pub fn new(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::default();
        let (d, r, m, pc, h, kb) = (config.latent_dim, config.gate_width(), config.attn_dim, config.clinical_dim, config.heads, config.bins);
        let dh = m / h;
        let gate1 = linear_params(&mut p, &mut rng, "gate.fc1", r, d);
        let gate2 = linear_params(&mut p, &mut rng, "gate.fc2", d, r);
        let proj_f = linear_params(&mut p, &mut rng, "proj.image", m, d);
        let proj_c = linear_params(&mut p, &mut rng, "proj.clinical", m, pc);
        let ln = |p: &mut ParamSet, name: &str| {
            config.layer_norm_affine.then(|| (p.add(format!("{name}.gain"), Tensor::full(&[m], 1.0)), p.add(format!("{name}.bias"), Tensor::zeros(&[m]))))
        };
        let ln_f = ln(&mut p, "ln.image");
        let ln_c = ln(&mut p, "ln.clinical");
        let mut proj = |kind: &str| -> Vec<usize> { (0..h).map(|i| p.add(format!("attn.{kind}{i}"), uniform(&mut rng, &[dh, m], m))).collect() };
        let q = proj("q");
        let k = proj("k");
        let v = proj("v");
        let out = p.add("attn.out", uniform(&mut rng, &[m, m], m));
        let mlp1 = linear_params(&mut p, &mut rng, "mlp.fc1", m / 2, m);
        let mlp2 = linear_params(&mut p, &mut rng, "mlp.fc2", kb, m / 2);
        let idx = HeadIdx { gate1, gate2, proj_f, proj_c, ln_f, ln_c, q, k, v, out, mlp1, mlp2 };
        Ok(Self { config, params: p, idx })
    }

    /// `g = sigmoid(W2 relu(W1 z + b1) + b2)`; returns `(g, z * g)`.
    pub fn gate_features(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<(Var, Var)> {
        let i = &self.idx;
        let hid = tape.linear(vars[i.gate1.0], z, vars[i.gate1.1])?;
        let hid = tape.relu(hid);
        let pre = tape.linear(vars[i.gate2.0], hid, vars[i.gate2.1])?;
        let g = tape.sigmoid(pre);
        let gated = tape.mul(z, g)?;
        Ok((g, gated))
    }

    /// Clinical features attend to the image embedding; returns `c + A`.
    pub fn fuse_attention(&self, tape: &mut Tape, vars: &[Var], gated: Var, clinical: Var) -> Result<Var> {
        let i = &self.idx;
        let ln = |tape: &mut Tape, x: Var, p: Option<(usize, usize)>| tape.layer_norm(x, p.map(|p| vars[p.0]), p.map(|p| vars[p.1]));
        let fpre = tape.linear(vars[i.proj_f.0], gated, vars[i.proj_f.1])?;
        let f = ln(tape, fpre, i.ln_f)?;
        let cpre = tape.linear(vars[i.proj_c.0], clinical, vars[i.proj_c.1])?;
        let c = ln(tape, cpre, i.ln_c)?;
        let inv_sqrt_m = 1.0 / (self.config.attn_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for hh in 0..self.config.heads {
            let q = tape.matmul(vars[i.q[hh]], c)?;
            let k = tape.matmul(vars[i.k[hh]], f)?;
            let v = tape.matmul(vars[i.v[hh]], f)?;
            let qk = tape.mul(q, k)?;
            let score = tape.sum(qk);
            let score = tape.scale(score, inv_sqrt_m);
            // One key: the softmax weight is identically 1.
            let weight = tape.softmax(score);
            heads.push(tape.mul(weight, v)?);
        }
        let cat = tape.concat(&heads);
        let a = tape.matmul(vars[i.out], cat)?;
        tape.add(c, a)
    }

    pub fn head_logits(&self, tape: &mut Tape, vars: &[Var], u: Var) -> Result<Var> {
        let i = &self.idx;
        let hid = tape.linear(vars[i.mlp1.0], u, vars[i.mlp1.1])?;
        let hid = tape.relu(hid);
        tape.linear(vars[i.mlp2.0], hid, vars[i.mlp2.1])
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], z: Var, clinical: Var) -> Result<HeadOutput> {
        if tape.shape(z) != [self.config.latent_dim] || tape.shape(clinical) != [self.config.clinical_dim] {
            return Err(Error::ShapeMismatch(format!("head expects z [{}] and clinical [{}], got {:?} and {:?}", self.config.latent_dim, self.config.clinical_dim, tape.shape(z), tape.shape(clinical))));
        }
        let (gate, gated) = self.gate_features(tape, vars, z)?;
        let fused = self.fuse_attention(tape, vars, gated, clinical)?;
        let logits = self.head_logits(tape, vars, fused)?;
        Ok(HeadOutput { gate, gated, fused, logits })
    }

    /// `(logits, gate)` for one patient, off the gradient path.
    pub fn predict(&self, z: &[f64], clinical: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let zv = tape.constant(Tensor::vector(z.to_vec()));
        let cv = tape.constant(Tensor::vector(clinical.to_vec()));
        let out = self.forward(&mut tape, &vars, zv, cv)?;
        Ok((tape.value(out.logits).data().to_vec(), tape.value(out.gate).data().to_vec()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        self.params.write_to(&mut ck, "");
        ck
    }

    pub fn from_checkpoint(config: HeadConfig, ck: &Checkpoint) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.read_from(ck, "")?;
        Ok(m)
    }
}

/// Softmax probabilities over bins.
pub fn bin_probabilities(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Negated expected bin index.
pub fn risk_from_probabilities(p: &[f64]) -> f64 {
    -p.iter().enumerate().map(|(k, pk)| k as f64 * pk).sum::<f64>()
}

pub fn risk_from_logits(logits: &[f64]) -> f64 {
    risk_from_probabilities(&bin_probabilities(logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_difference_check_many;

    fn random_volume(seed: u64, ext: [usize; 3]) -> MultiModalVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4 * ext.iter().product::<usize>();
        MultiModalVolume::new(4, ext, (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    fn zero_named(p: &mut ParamSet, pred: impl Fn(&str) -> bool) {
        for i in 0..p.len() {
            if pred(&p.names()[i].clone()) {
                for v in p.tensors_mut()[i].data_mut() {
                    *v = 0.0;
                }
            }
        }
    }

    #[test]
    fn desk_shapes() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.flat_len(), 256);
        let m = StageOneModel::new(cfg, 1).unwrap();
        let mut t = Tape::new();
        let vars = m.params.bind(&mut t, true);
        let x = t.constant(volume_tensor(&random_volume(2, [16; 3])));
        let out = m.forward(&mut t, &vars, x).unwrap();
        assert_eq!(t.shape(out.z), &[64]);
        assert_eq!(t.shape(out.recon), &[4, 16, 16, 16]);
        assert_eq!(t.shape(out.hazard), &[1]);
    }

    #[test]
    fn other_configs_round_trip_shape() {
        for (ext, ch, d) in [([8, 8, 8], vec![4], 16), ([8, 16, 8], vec![3, 5], 9), ([4, 4, 4], vec![2, 2], 4)] {
            let cfg = EncoderConfig { extents: ext, in_channels: 4, channels: ch, latent_dim: d, kernel: 3 };
            let m = StageOneModel::new(cfg, 3).unwrap();
            let mut t = Tape::new();
            let vars = m.params.bind(&mut t, false);
            let x = t.constant(volume_tensor(&random_volume(4, ext)));
            let out = m.forward(&mut t, &vars, x).unwrap();
            assert_eq!(t.shape(out.recon), t.shape(x));
        }
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::default();
        c.latent_dim = 60;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::default();
        c.extents = [12, 16, 16];
        assert!(c.validate().is_err());
        assert!(EncoderConfig::full_scale().validate().is_ok());
    }

    #[test]
    fn zero_input_gives_latent_bias() {
        let mut m = StageOneModel::new(EncoderConfig::default(), 5).unwrap();
        zero_named(&mut m.params, |n| n.starts_with("enc.conv") && n.ends_with("bias"));
        let z = m.embed(&MultiModalVolume::filled(4, [16; 3], 0.0)).unwrap();
        assert_eq!(z, m.params.get("enc.fc.bias").unwrap().data());
        assert_eq!(z, m.embed(&MultiModalVolume::filled(4, [16; 3], 0.0)).unwrap());
    }

    #[test]
    fn zero_latent_zero_biases_decode_to_zero() {
        let mut m = StageOneModel::new(EncoderConfig::default(), 6).unwrap();
        zero_named(&mut m.params, |n| n.starts_with("dec") && n.ends_with("bias"));
        let mut t = Tape::new();
        let vars = m.params.bind(&mut t, false);
        let z = t.constant(Tensor::zeros(&[64]));
        let r = m.decode(&mut t, &vars, z).unwrap();
        assert!(t.value(r).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn both_halves_receive_gradient() {
        let m = StageOneModel::new(EncoderConfig::default(), 7).unwrap();
        let mut t = Tape::new();
        let vars = m.params.bind(&mut t, true);
        let xt = volume_tensor(&random_volume(8, [16; 3]));
        let x = t.constant(xt.clone());
        let out = m.forward(&mut t, &vars, x).unwrap();
        let diff = t.sub(out.recon, x).unwrap();
        let sq = t.mul(diff, diff).unwrap();
        let loss = t.mean(sq);
        let g = t.backward(loss).unwrap();
        for (name, v) in m.params.names().iter().zip(&vars) {
            if name.starts_with("enc") || name.starts_with("dec") {
                assert!(g.get(*v).unwrap().max_abs() > 0.0, "{name}");
            }
        }
    }

    #[test]
    fn hazard_is_linear() {
        let mut m = StageOneModel::new(EncoderConfig::default(), 9).unwrap();
        let mut t = Tape::new();
        let vars = m.params.bind(&mut t, false);
        let mut e = vec![0.0; 64];
        e[5] = 1.0;
        let z = t.param(Tensor::vector(e));
        let hz = m.hazard(&mut t, &vars, z).unwrap();
        let w = m.params.get("hazard.weight").unwrap().data().to_vec();
        let b = m.params.get("hazard.bias").unwrap().item();
        assert!((t.value(hz).item() - (w[5] + b)).abs() < 1e-15);
        assert_eq!(t.backward(hz).unwrap().get(z).unwrap().data(), &w[..]);
        zero_named(&mut m.params, |n| n == "hazard.weight");
        let mut t = Tape::new();
        let vars = m.params.bind(&mut t, false);
        let z = t.constant(Tensor::full(&[64], 3.0));
        let hz = m.hazard(&mut t, &vars, z).unwrap();
        assert_eq!(t.value(hz).item(), b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = StageOneModel::new(EncoderConfig::default(), 11).unwrap();
        let ck = crate::container::Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap();
        let back = StageOneModel::from_checkpoint(EncoderConfig::default(), &ck).unwrap();
        assert_eq!(back, m);
        let h = SurvivalHead::new(HeadConfig::default(), 3).unwrap();
        assert_eq!(SurvivalHead::from_checkpoint(HeadConfig::default(), &h.to_checkpoint()).unwrap(), h);
        let small = EncoderConfig { channels: vec![8, 16, 16], ..Default::default() };
        assert!(matches!(StageOneModel::from_checkpoint(small, &ck), Err(Error::Checkpoint(_))));
    }

    fn head_with(f: impl Fn(&str, &mut Tensor)) -> SurvivalHead {
        let mut h = SurvivalHead::new(HeadConfig { heads: 1, ..Default::default() }, 1).unwrap();
        for i in 0..h.params.len() {
            let name = h.params.names()[i].clone();
            f(&name, &mut h.params.tensors_mut()[i]);
        }
        h
    }

    fn set_identity(t: &mut Tensor) {
        let n = t.shape()[0];
        for v in t.data_mut() {
            *v = 0.0;
        }
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
    }

    #[test]
    fn gate_limits() {
        let zero = head_with(|n, t| {
            if n.starts_with("gate") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0)
            }
        });
        let z: Vec<f64> = (0..64).map(|i| i as f64 / 10.0 - 3.0).collect();
        let mut t = Tape::new();
        let vars = zero.params.bind(&mut t, false);
        let zv = t.constant(Tensor::vector(z.clone()));
        let (g, gz) = zero.gate_features(&mut t, &vars, zv).unwrap();
        assert!(t.value(g).data().iter().all(|&v| v == 0.5));
        assert!(t.value(gz).data().iter().zip(&z).all(|(a, b)| *a == 0.5 * b));

        let open = head_with(|n, t| {
            if n == "gate.fc2.bias" {
                t.data_mut().iter_mut().for_each(|v| *v = 20.0)
            } else if n == "gate.fc2.weight" {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0)
            }
        });
        let mut t = Tape::new();
        let vars = open.params.bind(&mut t, false);
        let zv = t.constant(Tensor::vector(z.clone()));
        let (g, gz) = open.gate_features(&mut t, &vars, zv).unwrap();
        assert!(t.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(t.value(gz).data().iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn single_token_attention_is_linear() {
        // Identity per-head projections, one head: A = f and u = c + f.
        let h = head_with(|n, t| {
            if n.starts_with("attn.") {
                set_identity(t)
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gz: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut t = Tape::new();
        let vars = h.params.bind(&mut t, false);
        let gv = t.constant(Tensor::vector(gz.clone()));
        let a = t.constant(Tensor::vector(vec![0.7]));
        let u = h.fuse_attention(&mut t, &vars, gv, a).unwrap();
        let fpre = t.linear(vars[h.idx.proj_f.0], gv, vars[h.idx.proj_f.1]).unwrap();
        let f = t.layer_norm(fpre, None, None).unwrap();
        let cpre = t.linear(vars[h.idx.proj_c.0], a, vars[h.idx.proj_c.1]).unwrap();
        let c = t.layer_norm(cpre, None, None).unwrap();
        let want = t.add(c, f).unwrap();
        for (x, y) in t.value(u).data().iter().zip(t.value(want).data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let blank = head_with(|n, t| {
            if n.starts_with("attn.") {
                set_identity(t)
            } else if n.starts_with("proj.image") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0)
            }
        });
        let mut t = Tape::new();
        let vars = blank.params.bind(&mut t, false);
        let gv = t.constant(Tensor::vector(gz));
        let a = t.constant(Tensor::vector(vec![0.7]));
        let u = blank.fuse_attention(&mut t, &vars, gv, a).unwrap();
        let cpre = t.linear(vars[blank.idx.proj_c.0], a, vars[blank.idx.proj_c.1]).unwrap();
        let c = t.layer_norm(cpre, None, None).unwrap();
        assert_eq!(t.value(u), t.value(c));
    }

    #[test]
    fn gradient_reaches_embedding_and_clinical() {
        let h = SurvivalHead::new(HeadConfig::default(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Tape::new();
        let vars = h.params.bind(&mut t, false);
        let z = t.param(Tensor::vector((0..64).map(|_| rng.random_range(-1.0..1.0)).collect()));
        let a = t.param(Tensor::vector(vec![0.3]));
        let out = h.forward(&mut t, &vars, z, a).unwrap();
        let ls = t.log_softmax(out.logits);
        let pick = t.slice(ls, 2, 1).unwrap();
        let g = t.backward(pick).unwrap();
        assert!(g.get(z).unwrap().max_abs() > 0.0);
        assert!(g.get(a).unwrap().max_abs() > 0.0);
    }

    #[test]
    fn zero_mlp_gives_uniform_risk() {
        let h = head_with(|n, t| {
            if n.starts_with("mlp") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0)
            }
        });
        let (logits, _) = h.predict(&[0.1; 64], &[1.0]).unwrap();
        assert_eq!(logits, vec![0.0; 5]);
        assert!((risk_from_logits(&logits) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let h = SurvivalHead::new(HeadConfig::default(), 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = Tensor::vector((0..32).map(|_| rng.random_range(-1.0..1.0)).collect());
        let pts: Vec<Tensor> = ["mlp.fc1.weight", "mlp.fc1.bias", "mlp.fc2.weight", "mlp.fc2.bias"].iter().map(|n| h.params.get(n).unwrap().clone()).collect();
        let r = finite_difference_check_many(&pts, 1e-6, |t, v| {
            let uv = t.constant(u.clone());
            let hid = t.linear(v[0], uv, v[1])?;
            let hid = t.relu(hid);
            let l = t.linear(v[2], hid, v[3])?;
            let ls = t.log_softmax(l);
            t.slice(ls, 1, 1)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
    }

    #[test]
    fn risk_examples() {
        assert_eq!(risk_from_probabilities(&[1.0, 0.0, 0.0, 0.0, 0.0]), 0.0);
        assert_eq!(risk_from_probabilities(&[0.0, 0.0, 0.0, 0.0, 1.0]), -4.0);
        assert!((risk_from_logits(&[0.0; 5]) + 2.0).abs() < 1e-12);
        let l = [0.3, -1.0, 2.0, 0.1, 0.5];
        let shifted: Vec<f64> = l.iter().map(|v| v + 50.0).collect();
        assert!((risk_from_logits(&l) - risk_from_logits(&shifted)).abs() < 1e-9);
    }

    #[test]
    fn head_config_validation() {
        assert!(HeadConfig { attn_dim: 30, heads: 4, ..Default::default() }.validate().is_err());
        assert!(HeadConfig { bins: 1, ..Default::default() }.validate().is_err());
        assert_eq!(HeadConfig::default().gate_width(), 16);
    }
}
