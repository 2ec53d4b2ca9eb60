//! Reconstruction fidelity metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::{Mask, MultiModalVolume};

pub const PSNR_EPS: f64 = 1e-8;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const MAX_SSIM_SLICES: usize = 16;

fn check_shapes(x: &MultiModalVolume, y: &MultiModalVolume) -> Result<()> {
    if x.extents() != y.extents() || x.n_channels() != y.n_channels() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{:?} vs {}x{:?}",
            x.n_channels(),
            x.extents(),
            y.n_channels(),
            y.extents()
        )));
    }
    Ok(())
}

/// Per-channel and channel-averaged MAE and MSE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub mae: Vec<f64>,
    pub mse: Vec<f64>,
    pub mean_mae: f64,
    pub mean_mse: f64,
}

pub fn mae_mse(x: &MultiModalVolume, xhat: &MultiModalVolume) -> Result<ErrorSummary> {
    check_shapes(x, xhat)?;
    let (mut mae, mut mse) = (Vec::new(), Vec::new());
    for c in 0..x.n_channels() {
        let (a, b) = (x.channel(c), xhat.channel(c));
        let n = a.len() as f64;
        let (mut sa, mut ss) = (0.0, 0.0);
        for (p, q) in a.iter().zip(b) {
            let d = *q as f64 - *p as f64;
            sa += d.abs();
            ss += d * d;
        }
        mae.push(sa / n);
        mse.push(ss / n);
    }
    let k = mae.len() as f64;
    Ok(ErrorSummary { mean_mae: mae.iter().sum::<f64>() / k, mean_mse: mse.iter().sum::<f64>() / k, mae, mse })
}

/// `10 log10(1 / (mse + 1e-8))` for unit-range signals.
pub fn psnr(mse: f64) -> f64 {
    10.0 * (1.0 / (mse + PSNR_EPS)).log10()
}

/// Axial slice indices between 20% and 80% of the depth, at most 16.
pub fn ssim_slice_indices(depth: usize) -> Vec<usize> {
    let lo = (0.2 * depth as f64).ceil() as usize;
    let hi = ((0.8 * depth as f64).floor() as usize).min(depth.saturating_sub(1));
    if depth == 0 {
        return Vec::new();
    }
    if lo > hi {
        return vec![depth / 2];
    }
    let count = hi - lo + 1;
    let stride = count.div_ceil(MAX_SSIM_SLICES);
    (lo..=hi).step_by(stride).collect()
}

/// Mean SSIM over the valid `w x w` windows of two equally sized images.
pub fn ssim_2d(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let win = SSIM_WINDOW.min(h).min(w);
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    sa += a[y * w + x];
                    sb += b[y * w + x];
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let (da, db) = (a[y * w + x] - ma, b[y * w + x] - mb);
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    total / count as f64
}

/// Slice SSIM averaged over the sampled axial slices and all channels.
pub fn ssim_slices(x: &MultiModalVolume, xhat: &MultiModalVolume) -> Result<f64> {
    check_shapes(x, xhat)?;
    let [d, h, w] = x.extents();
    if h == 0 || w == 0 {
        return Err(Error::ZeroExtent(vec![d, h, w]));
    }
    let slices = ssim_slice_indices(d);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..x.n_channels() {
        for &z in &slices {
            let take = |v: &MultiModalVolume| -> Vec<f64> { v.channel(c)[z * h * w..(z + 1) * h * w].iter().map(|&p| p as f64).collect() };
            total += ssim_2d(&take(x), &take(xhat), h, w);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-channel `(tumor MAE, non-tumor MAE)`.
pub fn region_mae_per_channel(x: &MultiModalVolume, xhat: &MultiModalVolume, mask: &Mask) -> Result<Vec<(f64, f64)>> {
    check_shapes(x, xhat)?;
    if mask.extents != x.extents() {
        return Err(Error::ShapeMismatch(format!("mask {:?} vs volume {:?}", mask.extents, x.extents())));
    }
    let inside = mask.count();
    if inside == 0 {
        return Err(Error::EmptyRegion("tumor"));
    }
    if inside == mask.data.len() {
        return Err(Error::EmptyRegion("non-tumor"));
    }
    let outside = mask.data.len() - inside;
    Ok((0..x.n_channels())
        .map(|c| {
            let (mut t, mut n) = (0.0, 0.0);
            for ((p, q), &m) in x.channel(c).iter().zip(xhat.channel(c)).zip(&mask.data) {
                let e = (*q as f64 - *p as f64).abs();
                if m {
                    t += e;
                } else {
                    n += e;
                }
            }
            (t / inside as f64, n / outside as f64)
        })
        .collect())
}

/// Tumor and non-tumor MAE, each averaged over channels.
pub fn region_mae(x: &MultiModalVolume, xhat: &MultiModalVolume, mask: &Mask) -> Result<(f64, f64)> {
    let per = region_mae_per_channel(x, xhat, mask)?;
    let k = per.len() as f64;
    Ok((per.iter().map(|p| p.0).sum::<f64>() / k, per.iter().map(|p| p.1).sum::<f64>() / k))
}

/// One row of the reconstruction table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconReport {
    pub patient_id: String,
    pub split: String,
    pub mae: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub mae_tumor: Option<f64>,
    pub mae_nontumor: Option<f64>,
    #[serde(skip)]
    pub channel_mae: Vec<f64>,
    #[serde(skip)]
    pub channel_mse: Vec<f64>,
}

impl ReconReport {
    /// Region errors are filled only when a usable mask is given.
    pub fn compute(patient_id: &str, split: &str, x: &MultiModalVolume, xhat: &MultiModalVolume, mask: Option<&Mask>) -> Result<Self> {
        let e = mae_mse(x, xhat)?;
        let ssim = ssim_slices(x, xhat)?;
        let regions = match mask {
            Some(m) => match region_mae(x, xhat, m) {
                Ok(r) => Some(r),
                Err(Error::EmptyRegion(_)) => None,
                Err(err) => return Err(err),
            },
            None => None,
        };
        Ok(Self {
            patient_id: patient_id.to_string(),
            split: split.to_string(),
            mae: e.mean_mae,
            mse: e.mean_mse,
            psnr: psnr(e.mean_mse),
            ssim,
            mae_tumor: regions.map(|r| r.0),
            mae_nontumor: regions.map(|r| r.1),
            channel_mae: e.mae,
            channel_mse: e.mse,
        })
    }
}

/// Mean with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// 95% percentile bootstrap of the mean.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64) -> Result<MeanCi> {
    if values.is_empty() || resamples == 0 {
        return Err(Error::DegenerateInput("bootstrap needs values and at least one resample".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok(MeanCi { mean, lo: quantile_sorted(&means, 0.025), hi: quantile_sorted(&means, 0.975) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(ext: [usize; 3], f: impl Fn(usize, usize) -> f32) -> MultiModalVolume {
        let n = ext.iter().product::<usize>();
        let mut data = Vec::with_capacity(4 * n);
        for c in 0..4 {
            for i in 0..n {
                data.push(f(c, i));
            }
        }
        MultiModalVolume::new(4, ext, data).unwrap()
    }

    fn seeded(ext: [usize; 3], seed: u64) -> MultiModalVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4 * ext.iter().product::<usize>();
        MultiModalVolume::new(4, ext, (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn mae_mse_examples() {
        let x = vol([4, 4, 4], |_, _| 0.25);
        let e = mae_mse(&x, &x).unwrap();
        assert_eq!((e.mean_mae, e.mean_mse), (0.0, 0.0));
        let y = vol([4, 4, 4], |_, _| 0.75);
        let e = mae_mse(&x, &y).unwrap();
        assert_eq!((e.mean_mae, e.mean_mse), (0.5, 0.25));
        assert!(mae_mse(&x, &vol([4, 4, 2], |_, _| 0.0)).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr(0.01) - 20.0).abs() < 1e-5);
        assert!((psnr(0.0) - 80.0).abs() < 1e-9);
        assert!((psnr(0.009) - 20.4576).abs() < 1e-3);
        let mut last = f64::INFINITY;
        for k in 0..100 {
            let p = psnr(k as f64 * 0.01);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn slice_selection() {
        assert_eq!(ssim_slice_indices(16), (4..=12).collect::<Vec<_>>());
        let many = ssim_slice_indices(128);
        assert!(many.len() <= 16);
        assert_eq!(many[0], 26);
        assert!(*many.last().unwrap() <= 102);
        assert_eq!(ssim_slice_indices(5), vec![1, 2, 3, 4]);
    }

    #[test]
    fn ssim_examples() {
        let x = seeded([16; 3], 1);
        assert_eq!(ssim_slices(&x, &x).unwrap(), 1.0);
        let a = vol([16; 3], |_, _| 0.2);
        let b = vol([16; 3], |_, _| 0.8);
        let want = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.04 + 0.64 + SSIM_C1);
        assert!((ssim_slices(&a, &b).unwrap() - want).abs() < 1e-6);
        assert!((want - 0.4707).abs() < 1e-4);
        // Checkerboard around 0.5 against its mirror image.
        let p = vol([16; 3], |_, i| if (i + i / 16 + i / 256) % 2 == 0 { 0.9 } else { 0.1 });
        let q = vol([16; 3], |_, i| if (i + i / 16 + i / 256) % 2 == 0 { 0.1 } else { 0.9 });
        assert!(ssim_slices(&p, &q).unwrap() < 0.0);
    }

    #[test]
    fn ssim_symmetric() {
        for seed in 0..5 {
            let (x, y) = (seeded([10, 9, 8], seed), seeded([10, 9, 8], seed + 100));
            assert!((ssim_slices(&x, &y).unwrap() - ssim_slices(&y, &x).unwrap()).abs() < 1e-9);
        }
    }

    fn ball_mask(ext: [usize; 3]) -> Mask {
        let n = ext.iter().product::<usize>();
        Mask::new(ext, (0..n).map(|i| i % 3 == 0).collect()).unwrap()
    }

    #[test]
    fn region_examples() {
        let ext = [6, 6, 6];
        let m = ball_mask(ext);
        let x = vol(ext, |_, _| 0.5);
        assert_eq!(region_mae(&x, &x, &m).unwrap(), (0.0, 0.0));
        let y = vol(ext, |_, i| if i % 3 == 0 { 0.7 } else { 0.5 });
        let (t, n) = region_mae(&x, &y, &m).unwrap();
        assert!((t - 0.2).abs() < 1e-6 && n == 0.0);
        assert!(matches!(region_mae(&x, &y, &Mask::empty(ext)), Err(Error::EmptyRegion("tumor"))));
        let full = Mask::new(ext, vec![true; 216]).unwrap();
        assert!(matches!(region_mae(&x, &y, &full), Err(Error::EmptyRegion("non-tumor"))));
    }

    #[test]
    fn region_decomposition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..10 {
            let ext = [5, 7, 6];
            let (x, y) = (seeded(ext, seed), seeded(ext, seed + 50));
            let n = 210;
            let mut bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            bits[0] = true;
            bits[1] = false;
            let m = Mask::new(ext, bits).unwrap();
            let per = region_mae_per_channel(&x, &y, &m).unwrap();
            let e = mae_mse(&x, &y).unwrap();
            let inside = m.count() as f64;
            for c in 0..4 {
                let lhs = inside * per[c].0 + (n as f64 - inside) * per[c].1;
                assert!((lhs - n as f64 * e.mae[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bootstrap_interval() {
        let v: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let ci = bootstrap_mean_ci(&v, 1000, 3).unwrap();
        assert!((ci.mean - 2.45).abs() < 1e-12);
        assert!(ci.lo < ci.mean && ci.mean < ci.hi);
        assert_eq!(ci, bootstrap_mean_ci(&v, 1000, 3).unwrap());
        let c = bootstrap_mean_ci(&[1.0; 5], 100, 0).unwrap();
        assert_eq!((c.lo, c.hi), (1.0, 1.0));
    }
}
