//! Occlusion sensitivity and its split over tumor, peri-tumoral rings and
//! normal tissue.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{occlude, occluder_ranges, MultiModalVolume, RegionPartition};

pub const DEFAULT_TOP_DIMS: usize = 16;

/// Anything that maps a volume to a risk score and an embedding.
pub trait Attributable {
    fn risk_and_embedding(&self, volume: &MultiModalVolume) -> Result<(f64, Vec<f64>)>;
}

impl<F> Attributable for F
where
    F: Fn(&MultiModalVolume) -> Result<(f64, Vec<f64>)>,
{
    fn risk_and_embedding(&self, volume: &MultiModalVolume) -> Result<(f64, Vec<f64>)> {
        self(volume)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub side: usize,
    pub fill: f32,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self { side: 2, fill: 0.0 }
    }
}

impl OcclusionConfig {
    pub fn stride(&self) -> usize {
        (self.side / 2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return Err(Error::Config("occluder side must be at least 1".into()));
        }
        Ok(())
    }

    /// Occluder centers along an axis of length `n`.
    pub fn centers(&self, n: usize) -> Vec<usize> {
        (0..n).step_by(self.stride()).collect()
    }
}

/// Voxel-wise sensitivity of the risk and of the selected embedding dims.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMaps {
    pub extents: [usize; 3],
    pub hazard: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// Slide the occluder over the stride grid. Each placement's change in
/// risk, and its summed absolute change over `dims`, is spread over the
/// voxels it covered; voxels covered more than once take the mean.
pub fn occlusion_map<M: Attributable + ?Sized>(model: &M, volume: &MultiModalVolume, cfg: &OcclusionConfig, dims: &[usize]) -> Result<OcclusionMaps> {
    cfg.validate()?;
    let ext = volume.extents();
    let n = volume.voxels();
    let (r0, z0) = model.risk_and_embedding(volume)?;
    if let Some(&bad) = dims.iter().find(|&&j| j >= z0.len()) {
        return Err(Error::Config(format!("embedding dim {bad} out of range for length {}", z0.len())));
    }
    let mut hsum = vec![0.0; n];
    let mut esum = vec![0.0; n];
    let mut visits = vec![0u32; n];
    let [cz, cy, cx] = [cfg.centers(ext[0]), cfg.centers(ext[1]), cfg.centers(ext[2])];
    for &z in &cz {
        for &y in &cy {
            for &x in &cx {
                let center = [z, y, x];
                let (r, e) = model.risk_and_embedding(&occlude(volume, center, cfg.side, cfg.fill))?;
                let dr = (r - r0).abs();
                let de: f64 = dims.iter().map(|&j| (e[j] - z0[j]).abs()).sum();
                let [rz, ry, rx] = occluder_ranges(ext, center, cfg.side);
                for vz in rz {
                    for vy in ry.clone() {
                        for vx in rx.clone() {
                            let i = (vz * ext[1] + vy) * ext[2] + vx;
                            hsum[i] += dr;
                            esum[i] += de;
                            visits[i] += 1;
                        }
                    }
                }
            }
        }
    }
    let avg = |s: Vec<f64>| s.into_iter().zip(&visits).map(|(v, &c)| if c > 0 { v / c as f64 } else { 0.0 }).collect();
    Ok(OcclusionMaps { extents: ext, hazard: avg(hsum), embedding: avg(esum) })
}

/// Share of a sensitivity map per region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFractions {
    pub fractions: Vec<f64>,
    /// The map was all zero and voxel-count proportions were used instead.
    pub fallback: bool,
}

pub fn regional_fractions(delta: &[f64], partition: &RegionPartition) -> Result<RegionFractions> {
    if delta.len() != partition.labels.len() {
        return Err(Error::ShapeMismatch(format!("map of {} voxels vs partition of {}", delta.len(), partition.labels.len())));
    }
    let mut sums = vec![0.0; partition.n_regions()];
    for (d, &l) in delta.iter().zip(&partition.labels) {
        sums[l as usize] += d;
    }
    let total: f64 = sums.iter().sum();
    if total > 0.0 {
        return Ok(RegionFractions { fractions: sums.iter().map(|s| s / total).collect(), fallback: false });
    }
    log::warn!("occlusion map is all zero; reporting voxel-count proportions");
    let n = partition.labels.len() as f64;
    Ok(RegionFractions { fractions: partition.counts().iter().map(|&c| c as f64 / n).collect(), fallback: true })
}

/// Hazard and embedding fractions for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalAttribution {
    pub regions: Vec<String>,
    pub hazard: RegionFractions,
    pub embedding: RegionFractions,
}

pub fn regional_attribution(maps: &OcclusionMaps, partition: &RegionPartition) -> Result<RegionalAttribution> {
    Ok(RegionalAttribution {
        regions: partition.names.clone(),
        hazard: regional_fractions(&maps.hazard, partition)?,
        embedding: regional_fractions(&maps.embedding, partition)?,
    })
}

/// The `j` embedding dims with the largest mean gate over a cohort; ties go
/// to the lower index.
pub fn top_embedding_dims(gates: &[Vec<f64>], j: usize) -> Result<Vec<usize>> {
    let d = gates.first().map(|g| g.len()).ok_or_else(|| Error::DegenerateInput("no gate vectors".into()))?;
    if gates.iter().any(|g| g.len() != d) {
        return Err(Error::ShapeMismatch("gate vectors differ in length".into()));
    }
    let mean: Vec<f64> = (0..d).map(|k| gates.iter().map(|g| g[k]).sum::<f64>() / gates.len() as f64).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]).then(a.cmp(&b)));
    order.truncate(j.min(d));
    Ok(order)
}
