//! Removal of leading principal components from embeddings, to strip
//! cohort-level acquisition bias. The model is fit on training data only.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::container::Checkpoint;
use crate::error::{Error, Result};

pub const DEFAULT_DISCARD: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal rows, ordered by decreasing explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Leading components removed by [`PcaModel::remove`].
    pub k: usize,
}

impl PcaModel {
    /// Fit on the rows of `data` (N x d) with sample covariance.
    pub fn fit(data: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = data.len();
        if n < 2 {
            return Err(Error::DegenerateInput(format!("PCA needs at least 2 embeddings, got {n}")));
        }
        let d = data[0].len();
        if d == 0 || data.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("embeddings must share a non-zero length".into()));
        }
        if k > d {
            return Err(Error::Config(format!("cannot discard {k} of {d} components")));
        }
        let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for r in data {
            for a in 0..d {
                let da = r[a] - mean[a];
                for b in a..d {
                    cov[(a, b)] += da * (r[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / (n - 1) as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
        let mut components = Vec::with_capacity(d);
        let mut explained_variance = Vec::with_capacity(d);
        for &i in &order {
            let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = c.iter().enumerate().fold(0, |best, (j, v)| if v.abs() > c[best].abs() { j } else { best });
            if c[lead] < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            components.push(c);
            explained_variance.push(eig.eigenvalues[i].max(0.0));
        }
        Ok(Self { mean, components, explained_variance, k })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Remove the first `k` components from an already centered vector.
    pub fn project_out(&self, centered: &[f64]) -> Vec<f64> {
        let mut x = centered.to_vec();
        for c in &self.components[..self.k] {
            let dot: f64 = x.iter().zip(c).map(|(a, b)| a * b).sum();
            x.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        x
    }

    /// Center with the training mean and remove the first `k` components.
    pub fn remove(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!("embedding length {} vs model {}", z.len(), self.dim())));
        }
        let centered: Vec<f64> = z.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.project_out(&centered))
    }

    pub fn remove_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|z| self.remove(z)).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let d = self.dim();
        let mut ck = Checkpoint::default();
        ck.push("pca.mean", vec![d], self.mean.iter().map(|&v| v as f32).collect());
        ck.push("pca.components", vec![d, d], self.components.iter().flatten().map(|&v| v as f32).collect());
        ck.push("pca.explained_variance", vec![d], self.explained_variance.iter().map(|&v| v as f32).collect());
        ck.push("pca.k", vec![1], vec![self.k as f32]);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mean = ck.require("pca.mean")?;
        let d = mean.data.len();
        let comps = ck.require("pca.components")?;
        let var = ck.require("pca.explained_variance")?;
        let k = ck.require("pca.k")?.data.first().copied().unwrap_or(0.0) as usize;
        if comps.data.len() != d * d || var.data.len() != d || k > d {
            return Err(Error::Checkpoint("inconsistent PCA records".into()));
        }
        let mut components: Vec<Vec<f64>> = comps.data.chunks(d).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        // Single-precision storage leaves the rows slightly off orthonormal.
        for i in 0..d {
            for j in 0..i {
                let dot: f64 = components[i].iter().zip(&components[j]).map(|(a, b)| a * b).sum();
                let prev = components[j].clone();
                components[i].iter_mut().zip(&prev).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = components[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Checkpoint("degenerate PCA component".into()));
            }
            components[i].iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self {
            mean: mean.data.iter().map(|&v| v as f64).collect(),
            components,
            explained_variance: var.data.iter().map(|&v| v as f64).collect(),
            k,
        })
    }
}
