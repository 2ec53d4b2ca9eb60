//! Multi-modal volumes, preprocessing, tumor-region geometry and synthetic
//! phantoms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::SurvivalRecord;

/// Modality order used everywhere.
pub const MODALITIES: [&str; 4] = ["t1", "t1ce", "t2", "flair"];

/// `C x D x H x W` intensities, channel-major, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalVolume {
    channels: usize,
    extents: [usize; 3],
    data: Vec<f32>,
}

impl MultiModalVolume {
    pub fn new(channels: usize, extents: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if channels == 0 || extents.contains(&0) {
            return Err(Error::ZeroExtent(vec![channels, extents[0], extents[1], extents[2]]));
        }
        let n = channels * extents.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!("{channels}x{extents:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { channels, extents, data })
    }

    pub fn filled(channels: usize, extents: [usize; 3], value: f32) -> Self {
        let n = channels * extents.iter().product::<usize>();
        Self { channels, extents, data: vec![value; n] }
    }

    /// Stack single-channel `D x H x W` arrays.
    pub fn from_channels(extents: [usize; 3], channels: &[Vec<f32>]) -> Result<Self> {
        let data: Vec<f32> = channels.iter().flatten().copied().collect();
        Self::new(channels.len(), extents, data)
    }

    pub fn n_channels(&self) -> usize {
        self.channels
    }
    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }
    pub fn voxels(&self) -> usize {
        self.extents.iter().product()
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }
    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.extents[1] + y) * self.extents[2] + x
    }
    pub fn get(&self, c: usize, z: usize, y: usize, x: usize) -> f32 {
        self.data[c * self.voxels() + self.index(z, y, x)]
    }
}

/// Boolean tumor mask over `D x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub extents: [usize; 3],
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(extents: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != extents.iter().product::<usize>() {
            return Err(Error::ShapeMismatch("mask length disagrees with extents".into()));
        }
        Ok(Self { extents, data })
    }

    pub fn empty(extents: [usize; 3]) -> Self {
        Self { extents, data: vec![false; extents.iter().product()] }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Indicator as 0.0 (inside) / 1.0 (outside): its sublevel set at 0 is the mask.
    pub fn as_sublevel_indicator(&self) -> Vec<f64> {
        self.data.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect()
    }
}

/// Resample every channel to `target` with trilinear interpolation.
///
/// Align-corners convention: target index `t` samples source coordinate
/// `t * (S - 1) / (T - 1)`. A source axis of extent 1 is constant along that
/// axis; a target axis of extent 1 samples source index 0.
pub fn resample_trilinear(volume: &MultiModalVolume, target: [usize; 3]) -> Result<MultiModalVolume> {
    if target.contains(&0) {
        return Err(Error::ZeroExtent(target.to_vec()));
    }
    if target == volume.extents {
        return Ok(volume.clone());
    }
    let src = volume.extents;
    let axis = |s: usize, t: usize| -> Vec<(usize, usize, f64)> {
        (0..t)
            .map(|i| {
                if s == 1 || t == 1 {
                    return (0, 0, 0.0);
                }
                let pos = i as f64 * (s - 1) as f64 / (t - 1) as f64;
                let lo = (pos.floor() as usize).min(s - 2);
                (lo, lo + 1, pos - lo as f64)
            })
            .collect()
    };
    let (az, ay, ax) = (axis(src[0], target[0]), axis(src[1], target[1]), axis(src[2], target[2]));
    let n_out = target.iter().product::<usize>();
    let mut out = Vec::with_capacity(volume.channels * n_out);
    for c in 0..volume.channels {
        let ch = volume.channel(c);
        let at = |z: usize, y: usize, x: usize| ch[(z * src[1] + y) * src[2] + x] as f64;
        for &(z0, z1, fz) in &az {
            for &(y0, y1, fy) in &ay {
                for &(x0, x1, fx) in &ax {
                    let lerp = |a: f64, b: f64, f: f64| if f == 0.0 { a } else { a + (b - a) * f };
                    let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), fx);
                    let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), fx);
                    let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), fx);
                    let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), fx);
                    let v = lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
                    out.push(v as f32);
                }
            }
        }
    }
    MultiModalVolume::new(volume.channels, target, out)
}

/// `(x - min) / (max - min)`; a constant channel maps to zeros.
pub fn minmax_normalize(channel: &[f32]) -> Result<Vec<f32>> {
    if channel.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let (lo, hi) = channel
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if channel.is_empty() || hi <= lo {
        return Ok(vec![0.0; channel.len()]);
    }
    let span = (hi - lo) as f64;
    Ok(channel.iter().map(|&v| ((v - lo) as f64 / span) as f32).collect())
}

/// Normalize each modality channel independently, in place.
pub fn normalize_channels(volume: &mut MultiModalVolume) -> Result<()> {
    for c in 0..volume.n_channels() {
        let normalized = minmax_normalize(volume.channel(c))?;
        volume.channel_mut(c).copy_from_slice(&normalized);
    }
    Ok(())
}

/// Exact squared Euclidean distance from every voxel to the nearest set voxel.
///
/// Separable lower-envelope transform, one pass per axis. Voxels with no set
/// voxel anywhere get `f64::INFINITY`.
pub fn squared_distance_transform(mask: &Mask) -> Vec<f64> {
    let [d, h, w] = mask.extents;
    let mut f: Vec<f64> = mask.data.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let strides = [h * w, w, 1];
    let lens = [d, h, w];
    let mut line = Vec::new();
    let mut out_line = Vec::new();
    for ax in 0..3 {
        let n = lens[ax];
        let stride = strides[ax];
        // Enumerate all line starts: indices whose coordinate along `ax` is 0.
        let starts: Vec<usize> = (0..d * h * w)
            .filter(|&i| (i / stride) % n == 0)
            .collect();
        for s in starts {
            line.clear();
            line.extend((0..n).map(|k| f[s + k * stride]));
            distance_1d(&line, &mut out_line);
            for k in 0..n {
                f[s + k * stride] = out_line[k];
            }
        }
    }
    f
}

fn distance_1d(f: &[f64], out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        return;
    }
    let mut v = vec![0usize; sites.len()];
    let mut z = vec![0f64; sites.len() + 1];
    let mut k = 0usize;
    v[0] = sites[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| -> f64 {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
    };
    for &q in &sites[1..] {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
}

/// Default ring boundaries, in voxels.
pub const DEFAULT_RING_EDGES: [f64; 4] = [0.0, 5.0, 10.0, 20.0];

/// Per-voxel region codes: 0 = tumor, `1..=R` = rings, `R + 1` = normal,
/// and optionally `R + 2` = CSF-like (see [`split_low_intensity`]).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    pub extents: [usize; 3],
    pub labels: Vec<u8>,
    pub names: Vec<String>,
}

impl RegionPartition {
    pub fn n_regions(&self) -> usize {
        self.names.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_regions()];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    pub fn normal_code(&self) -> u8 {
        self.names.iter().position(|n| n == "normal").expect("partition always has normal") as u8
    }
}

/// Label tumor, distance rings around it, and normal tissue.
///
/// `ring_edges` must start at 0 and increase; a non-tumor voxel at Euclidean
/// distance `r` from the nearest tumor voxel lands in ring `k` when
/// `edges[k] <= r < edges[k + 1]` and is normal past the last edge.
pub fn region_partition(mask: &Mask, ring_edges: &[f64]) -> RegionPartition {
    let rings = ring_edges.len().saturating_sub(1);
    let mut names = vec!["tumor".to_string()];
    names.extend(ring_edges.windows(2).map(|w| format!("ring[{},{})", w[0], w[1])));
    names.push("normal".to_string());
    let normal = (rings + 1) as u8;

    let dist2 = squared_distance_transform(mask);
    let labels = mask
        .data
        .iter()
        .zip(&dist2)
        .map(|(&inside, &d2)| {
            if inside {
                return 0;
            }
            let r = d2.sqrt();
            ring_edges
                .windows(2)
                .position(|w| w[0] <= r && r < w[1])
                .map_or(normal, |k| (k + 1) as u8)
        })
        .collect();
    RegionPartition { extents: mask.extents, labels, names }
}

/// Opt-in refinement: normal voxels whose channel-mean intensity falls below
/// `threshold` are relabelled as a separate `csf` region.
pub fn split_low_intensity(partition: &RegionPartition, volume: &MultiModalVolume, threshold: f32) -> RegionPartition {
    let normal = partition.normal_code();
    let csf = partition.n_regions() as u8;
    let c = volume.n_channels();
    let labels = partition
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mean = (0..c).map(|ch| volume.channel(ch)[i]).sum::<f32>() / c as f32;
            if l == normal && mean < threshold { csf } else { l }
        })
        .collect();
    let mut names = partition.names.clone();
    names.push("csf".into());
    RegionPartition { extents: partition.extents, labels, names }
}

/// Parameters for one synthetic patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub extents: [usize; 3],
    pub center: [usize; 3],
    pub outer_radius: f64,
    /// 0 gives a solid ball.
    pub cavity_radius: f64,
    pub rim_intensity: f32,
    pub core_intensity: f32,
    pub background_intensity: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extents.contains(&0) {
            return Err(Error::ZeroExtent(self.extents.to_vec()));
        }
        if !(0.0 <= self.cavity_radius && self.cavity_radius < self.outer_radius) {
            return Err(Error::Config(format!(
                "need 0 <= cavity radius ({}) < outer radius ({})",
                self.cavity_radius, self.outer_radius
            )));
        }
        for ax in 0..3 {
            let c = self.center[ax] as f64;
            if c - self.outer_radius < 0.0 || c + self.outer_radius > (self.extents[ax] - 1) as f64 {
                return Err(Error::Config(format!("tumor leaves the volume along axis {ax}")));
            }
        }
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        if !(unit(self.rim_intensity) && unit(self.core_intensity) && unit(self.background_intensity)) {
            return Err(Error::Config("phantom intensities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Fraction of phantom patients whose event is censored.
pub const PHANTOM_CENSORING_RATE: f64 = 0.2;
const CHANNEL_GAINS: [f32; 4] = [1.0, 0.9, 0.8, 0.7];

/// Planted survival time in days, decreasing in tumor radius.
pub fn planted_survival_days(outer_radius: f64) -> f64 {
    3000.0 * (-outer_radius / 3.0).exp()
}

/// Render a phantom: a spherical tumor (optionally with a central cavity)
/// in four correlated channels, its mask, and a planted survival record.
///
/// The mask is the tumor tissue itself (`cavity < r <= outer`), so a hollow
/// tumor has the topology of a spherical shell.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(MultiModalVolume, Mask, SurvivalRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [d, h, w] = spec.extents;
    let n = d * h * w;
    let mut base = vec![spec.background_intensity; n];
    let mut mask = vec![false; n];
    let c = spec.center.map(|v| v as f64);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let r = ((z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2)).sqrt();
                let i = (z * h + y) * w + x;
                if r <= spec.outer_radius {
                    if spec.cavity_radius > 0.0 && r <= spec.cavity_radius {
                        base[i] = spec.core_intensity;
                    } else {
                        base[i] = spec.rim_intensity;
                        mask[i] = true;
                    }
                }
            }
        }
    }

    let mut data = Vec::with_capacity(4 * n);
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for gain in CHANNEL_GAINS {
            data.extend(base.iter().map(|&b| (b * gain + noise.sample(&mut rng)).clamp(0.0, 1.0)));
        }
    } else {
        for gain in CHANNEL_GAINS {
            data.extend(base.iter().map(|&b| (b * gain).clamp(0.0, 1.0)));
        }
    }

    let std_normal = Normal::new(0.0f64, 1.0).expect("valid");
    let time = planted_survival_days(spec.outer_radius) * (0.1 * std_normal.sample(&mut rng)).exp();
    let event = !rng.random_bool(PHANTOM_CENSORING_RATE);
    let age = 55.0 + 10.0 * std_normal.sample(&mut rng);
    let record = SurvivalRecord::new(time, event, vec![age]);

    Ok((MultiModalVolume::new(4, spec.extents, data)?, Mask::new(spec.extents, mask)?, record))
}

/// Copy of `volume` with an axis-aligned cube replaced by `fill`.
///
/// The cube covers `[center - side/2, center - side/2 + side)` on each axis,
/// clipped to the volume.
pub fn occlude(volume: &MultiModalVolume, center: [usize; 3], side: usize, fill: f32) -> MultiModalVolume {
    let mut out = volume.clone();
    let ranges = occluder_ranges(volume.extents, center, side);
    let n = volume.voxels();
    for c in 0..volume.channels {
        for z in ranges[0].clone() {
            for y in ranges[1].clone() {
                for x in ranges[2].clone() {
                    let i = volume.index(z, y, x);
                    out.data[c * n + i] = fill;
                }
            }
        }
    }
    out
}

/// The in-bounds index ranges covered by an occluder.
pub fn occluder_ranges(extents: [usize; 3], center: [usize; 3], side: usize) -> [std::ops::Range<usize>; 3] {
    let side = side.max(1) as i64;
    std::array::from_fn(|ax| {
        let lo = center[ax] as i64 - side / 2;
        let hi = lo + side;
        let lo = lo.clamp(0, extents[ax] as i64) as usize;
        let hi = hi.clamp(0, extents[ax] as i64) as usize;
        lo..hi
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_distance2(mask: &Mask, z: usize, y: usize, x: usize) -> f64 {
        let [_, h, w] = mask.extents;
        mask.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| {
                let (vz, vy, vx) = (i / (h * w), (i / w) % h, i % w);
                (vz as f64 - z as f64).powi(2) + (vy as f64 - y as f64).powi(2) + (vx as f64 - x as f64).powi(2)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn resample_constant_and_identity() {
        let v = MultiModalVolume::filled(2, [3, 4, 5], 0.5);
        let r = resample_trilinear(&v, [7, 2, 9]).unwrap();
        assert!(r.data().iter().all(|&x| x == 0.5));
        let ramp = MultiModalVolume::new(1, [2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        assert_eq!(resample_trilinear(&ramp, [2, 2, 2]).unwrap(), ramp);
        assert!(matches!(resample_trilinear(&ramp, [0, 2, 2]), Err(Error::ZeroExtent(_))));
    }

    #[test]
    fn resample_ramp_align_corners() {
        let ramp = MultiModalVolume::new(1, [1, 1, 2], vec![0.0, 1.0]).unwrap();
        let r = resample_trilinear(&ramp, [1, 1, 3]).unwrap();
        assert_eq!(r.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn resample_stays_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..60).map(|_| rng.random_range(-2.0..3.0)).collect();
        let (lo, hi) = data.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let v = MultiModalVolume::new(1, [3, 4, 5], data).unwrap();
        let r = resample_trilinear(&v, [6, 7, 3]).unwrap();
        assert!(r.data().iter().all(|&x| x >= lo - 1e-6 && x <= hi + 1e-6));
    }

    #[test]
    fn minmax_cases() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[-1.0, 0.0, 1.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[3.0; 4]).unwrap(), vec![0.0; 4]);
        assert!(matches!(minmax_normalize(&[1.0, f32::NAN]), Err(Error::NonFiniteInput)));
        let once = minmax_normalize(&[0.3, 0.9, 0.1, 0.5]).unwrap();
        assert_eq!(minmax_normalize(&once).unwrap(), once);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ext = [5, 6, 7];
        let data: Vec<bool> = (0..210).map(|_| rng.random_bool(0.05)).collect();
        let mask = Mask::new(ext, data).unwrap();
        let fast = squared_distance_transform(&mask);
        for z in 0..5 {
            for y in 0..6 {
                for x in 0..7 {
                    let i = (z * 6 + y) * 7 + x;
                    assert_eq!(fast[i], brute_distance2(&mask, z, y, x), "voxel {z},{y},{x}");
                }
            }
        }
    }

    #[test]
    fn single_voxel_rings() {
        let ext = [9, 9, 9];
        let mut m = Mask::empty(ext);
        m.data[(4 * 9 + 4) * 9 + 4] = true;
        let p = region_partition(&m, &DEFAULT_RING_EDGES);
        assert_eq!(p.names, ["tumor", "ring[0,5)", "ring[5,10)", "ring[10,20)", "normal"]);
        for (dz, dy, dx) in [(1i32, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
            let i = (((4 + dz) * 9 + 4 + dy) * 9 + 4 + dx) as usize;
            assert_eq!(p.labels[i], 1);
        }
        assert_eq!(p.labels[(4 * 9 + 4) * 9 + 4], 0);
        assert_eq!(p.counts().iter().sum::<usize>(), 729);
    }

    #[test]
    fn empty_mask_is_all_normal() {
        let p = region_partition(&Mask::empty([3, 3, 3]), &DEFAULT_RING_EDGES);
        assert!(p.labels.iter().all(|&l| l == 4));
    }

    #[test]
    fn sphere_ring_at_distance_twelve() {
        let ext = [32, 32, 32];
        let mut m = Mask::empty(ext);
        for z in 0..32usize {
            for y in 0..32usize {
                for x in 0..32usize {
                    let r2 = (z as i64 - 10).pow(2) + (y as i64 - 10).pow(2) + (x as i64 - 10).pow(2);
                    if r2 <= 9 {
                        m.data[(z * 32 + y) * 32 + x] = true;
                    }
                }
            }
        }
        let p = region_partition(&m, &DEFAULT_RING_EDGES);
        // (10, 10, 25) sits 12 voxels past the surface voxel (10, 10, 13).
        assert_eq!(brute_distance2(&m, 10, 10, 25), 144.0);
        assert_eq!(p.labels[(10 * 32 + 10) * 32 + 25], 3);
        assert_eq!(p.labels[(10 * 32 + 10) * 32 + 31], 3);
        assert_eq!(p.labels[(31 * 32 + 31) * 32 + 31], 4);
    }

    #[test]
    fn csf_split_only_touches_normal() {
        let mut m = Mask::empty([1, 1, 30]);
        m.data[0] = true;
        let p = region_partition(&m, &DEFAULT_RING_EDGES);
        let v = MultiModalVolume::filled(4, [1, 1, 30], 0.05);
        let s = split_low_intensity(&p, &v, 0.1);
        assert_eq!(s.names.last().unwrap(), "csf");
        assert_eq!(s.labels[0], 0);
        assert_eq!(s.labels[3], 1);
        assert_eq!(s.labels[25], 5);
    }

    fn spec(outer: f64, cavity: f64, seed: u64) -> PhantomSpec {
        PhantomSpec {
            extents: [32, 32, 32],
            center: [16, 16, 16],
            outer_radius: outer,
            cavity_radius: cavity,
            rim_intensity: 0.9,
            core_intensity: 0.2,
            background_intensity: 0.4,
            noise_sigma: 0.05,
            seed,
        }
    }

    #[test]
    fn phantom_mask_volume() {
        let (v, m, rec) = make_phantom(&spec(6.0, 0.0, 1)).unwrap();
        let expected = 4.0 / 3.0 * std::f64::consts::PI * 216.0;
        assert!((m.count() as f64 - expected).abs() / expected < 0.15, "{}", m.count());
        assert!(v.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(rec.time > 0.0);
    }

    #[test]
    fn phantom_is_deterministic() {
        let a = make_phantom(&spec(5.0, 2.0, 9)).unwrap();
        let b = make_phantom(&spec(5.0, 2.0, 9)).unwrap();
        assert_eq!(a.0.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   b.0.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.2, b.2);
        assert!(make_phantom(&spec(20.0, 0.0, 1)).is_err());
        assert!(make_phantom(&spec(5.0, 5.0, 1)).is_err());
    }

    #[test]
    fn phantom_censoring_rate_near_target() {
        let censored = (0..500).filter(|&s| !make_phantom(&PhantomSpec { extents: [8, 8, 8], center: [4, 4, 4], outer_radius: 2.0, ..spec(2.0, 0.0, s) }).unwrap().2.event).count();
        assert!((censored as f64 / 500.0 - 0.2).abs() < 0.05, "{censored}");
    }

    #[test]
    fn occlusion_counts() {
        let v = MultiModalVolume::filled(4, [4, 5, 6], 1.0);
        let all = occlude(&v, [2, 2, 3], 12, 0.0);
        assert!(all.data().iter().all(|&x| x == 0.0));
        let one = occlude(&v, [1, 2, 3], 1, 0.0);
        for c in 0..4 {
            assert_eq!(one.channel(c).iter().filter(|&&x| x == 0.0).count(), 1);
        }
        assert_eq!(v.data().iter().filter(|&&x| x == 0.0).count(), 0);

        // Corner cube of side 2: enumerate the 8 candidate voxels and keep the in-bounds ones.
        let candidates = (-1i64..1).flat_map(|z| (-1i64..1).flat_map(move |y| (-1i64..1).map(move |x| (z, y, x))));
        let in_bounds = candidates.filter(|&(z, y, x)| z >= 0 && y >= 0 && x >= 0).count();
        let corner = occlude(&v, [0, 0, 0], 2, 0.0);
        assert_eq!(corner.channel(0).iter().filter(|&&x| x == 0.0).count(), in_bounds);
    }
}
