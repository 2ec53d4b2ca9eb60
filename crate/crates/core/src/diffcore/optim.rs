use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 5e-5, weight_decay: 5e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    /// Round parameters and moments to `f32` after every step, so that state
    /// saved in single precision resumes bit-exactly.
    pub round_to_f32: bool,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.shape());
        Self { config, m: params.iter().map(zeros).collect(), v: params.iter().map(zeros).collect(), t: 0, round_to_f32: false }
    }

    /// One update. Parameters without a gradient are still decayed.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!("adamw: {} params, {} grads, {} states", params.len(), grads.len(), self.m.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::ShapeMismatch(format!("adamw: grad {:?} for param {:?}", g.shape(), p.shape())));
                }
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let round = |x: f64| if self.round_to_f32 { x as f32 as f64 } else { x };
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            for (k, w) in pd.iter_mut().enumerate() {
                let gk = g.as_ref().map_or(0.0, |g| g.data()[k]);
                *w -= c.lr * c.weight_decay * *w;
                let mk = round(c.beta1 * m.data()[k] + (1.0 - c.beta1) * gk);
                let vk = round(c.beta2 * v.data()[k] + (1.0 - c.beta2) * gk * gk);
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                *w = round(*w - c.lr * (mk / bc1) / ((vk / bc2).sqrt() + c.eps));
            }
        }
        Ok(())
    }
}

/// Batch standardization of a scalar covariate with running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStandardizer {
    pub running_mean: f64,
    pub running_var: f64,
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchStandardizer {
    fn default() -> Self {
        Self { running_mean: 0.0, running_var: 1.0, momentum: 0.1, eps: 1e-5 }
    }
}

impl BatchStandardizer {
    /// Standardize with batch statistics (population variance) and update
    /// the running ones.
    pub fn train(&mut self, column: &[f64]) -> Result<Vec<f64>> {
        let n = column.len();
        if n < 2 {
            return Err(Error::DegenerateBatch(n));
        }
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        self.running_mean += self.momentum * (mean - self.running_mean);
        self.running_var += self.momentum * (var - self.running_var);
        let inv = 1.0 / (var + self.eps).sqrt();
        Ok(column.iter().map(|a| (a - mean) * inv).collect())
    }

    pub fn infer(&self, column: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (self.running_var + self.eps).sqrt();
        column.iter().map(|a| (a - self.running_mean) * inv).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(w: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let mut p = vec![Tensor::scalar(w)];
        let mut opt = AdamW::new(AdamWConfig { lr, weight_decay: wd, ..Default::default() }, &p);
        opt.step(&mut p, &[Some(Tensor::scalar(g))]).unwrap();
        p[0].item()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        assert!((one_step(1.0, 1.0, 0.1, 0.0) - 0.9).abs() < 1e-6);
        assert!((one_step(1.0, 1.0, 0.1, 0.05) - 0.895).abs() < 1e-6);
        assert_eq!(one_step(1.0, 0.0, 0.1, 0.0), 1.0);
    }

    #[test]
    fn missing_gradient_only_decays() {
        let mut p = vec![Tensor::scalar(2.0)];
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() }, &p);
        opt.step(&mut p, &[None]).unwrap();
        assert!((p[0].item() - 1.9).abs() < 1e-12);
    }

    #[test]
    fn rounding_keeps_values_representable() {
        let mut p = vec![Tensor::vector(vec![0.1, -0.3])];
        let mut opt = AdamW::new(AdamWConfig { lr: 1e-3, ..Default::default() }, &p);
        opt.round_to_f32 = true;
        for _ in 0..3 {
            opt.step(&mut p, &[Some(Tensor::vector(vec![0.7, -0.01]))]).unwrap();
        }
        for t in p.iter().chain(&opt.m).chain(&opt.v) {
            assert!(t.data().iter().all(|&x| x as f32 as f64 == x));
        }
    }

    #[test]
    fn standardizer() {
        let mut s = BatchStandardizer { eps: 0.0, ..Default::default() };
        assert_eq!(s.train(&[40.0, 60.0]).unwrap(), vec![-1.0, 1.0]);
        assert!((s.running_mean - 5.0).abs() < 1e-12);
        assert!(matches!(s.train(&[1.0]), Err(Error::DegenerateBatch(1))));
        let s = BatchStandardizer { running_mean: 3.0, running_var: 4.0, ..Default::default() };
        assert_eq!(s.infer(&[3.0]), vec![0.0]);
    }
}
