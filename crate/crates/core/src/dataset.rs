//! Patient cohorts: loading from a manifest, splitting, and synthetic
//! phantom cohorts with planted topology and survival.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::PhantomCohortConfig;
use crate::error::{Error, Result};
use crate::manifest::{read_manifest, write_manifest, CohortManifest, ManifestRow};
use crate::nifti::{parse_nifti, write_nifti, write_nifti_u8, NdVolume};
use crate::survival::SurvivalRecord;
use crate::volume::{make_phantom, normalize_channels, resample_trilinear, Mask, MultiModalVolume, PhantomSpec};

pub const MODALITIES: [&str; 4] = ["t1", "t1ce", "t2", "flair"];

/// Independent seed for one purpose (`stream`) and item (`index`).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_PHANTOM: u64 = 3;
pub const STREAM_SPLIT: u64 = 4;
pub const STREAM_BOOTSTRAP: u64 = 5;

/// A preprocessed patient.
#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub id: String,
    pub volume: MultiModalVolume,
    pub mask: Option<Mask>,
    pub record: SurvivalRecord,
}

impl Patient {
    pub fn age(&self) -> f64 {
        self.record.covariates.first().copied().unwrap_or(0.0)
    }
}

fn read_volume(path: &Path) -> Result<NdVolume> {
    let bytes = fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let (_, vol) = parse_nifti(&bytes)?;
    if vol.shape.len() != 3 {
        return Err(Error::BadRank(vol.shape.len()));
    }
    Ok(vol)
}

fn extents_of(v: &NdVolume) -> [usize; 3] {
    [v.shape[0], v.shape[1], v.shape[2]]
}

/// Load, resample to `extents` and min-max normalize one manifest row.
/// Masks are resampled trilinearly and thresholded at 0.5.
pub fn load_patient(row: &ManifestRow, base: &Path, extents: [usize; 3]) -> Result<Patient> {
    let vols: Vec<NdVolume> = row.modality_paths().iter().map(|p| read_volume(&base.join(p))).collect::<Result<_>>()?;
    let src = extents_of(&vols[0]);
    if vols.iter().any(|v| extents_of(v) != src) {
        return Err(Error::ShapeMismatch(format!("modalities of {} differ in shape", row.patient_id)));
    }
    let chans: Vec<Vec<f32>> = vols.into_iter().map(|v| v.data).collect();
    let raw = MultiModalVolume::from_channels(src, &chans)?;
    let mut volume = resample_trilinear(&raw, extents)?;
    normalize_channels(&mut volume)?;
    let mask = match &row.mask {
        Some(p) => {
            let m = read_volume(&base.join(p))?;
            if extents_of(&m) != src {
                return Err(Error::ShapeMismatch(format!("mask of {} has shape {:?}, volume {:?}", row.patient_id, m.shape, src)));
            }
            let mv = MultiModalVolume::new(1, src, m.data.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect())?;
            let r = resample_trilinear(&mv, extents)?;
            Some(Mask::new(extents, r.data().iter().map(|&v| v >= 0.5).collect())?)
        }
        None => None,
    };
    let record = SurvivalRecord::new(row.time_days, row.event != 0, vec![row.age]);
    Ok(Patient { id: row.patient_id.clone(), volume, mask, record })
}

/// Load every patient of a manifest file; paths are relative to its directory.
pub fn load_cohort(manifest_path: &Path, extents: [usize; 3]) -> Result<Vec<Patient>> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", manifest_path.display()))))?;
    let manifest = read_manifest(&text)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut patients: Vec<Patient> = manifest.rows.iter().map(|r| load_patient(r, &base, extents)).collect::<Result<_>>()?;
    patients.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(patients)
}

/// Seeded split of `0..n` into train, validation and test index lists.
/// Validation and test sizes are rounded; train takes the remainder.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT, 0)));
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n);
    let n_test = ((fractions[2] * n as f64).round() as usize).min(n - n_val);
    let test = idx.split_off(n - n_test);
    let val = idx.split_off(n - n_test - n_val);
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    [sorted(idx), sorted(val), sorted(test)]
}

/// Phantom specs for a cohort: exactly `round(hollow_fraction * count)`
/// hollow tumors, the rest solid.
pub fn phantom_specs(cfg: &PhantomCohortConfig, extents: [usize; 3], seed: u64) -> Result<Vec<PhantomSpec>> {
    let min_ext = *extents.iter().min().unwrap_or(&0);
    if cfg.max_radius * 2.0 > (min_ext as f64 - 1.0) {
        return Err(Error::Config(format!("max radius {} does not fit extents {extents:?}", cfg.max_radius)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_PHANTOM, u64::MAX));
    let n_hollow = ((cfg.hollow_fraction * cfg.count as f64).round() as usize).min(cfg.count);
    let mut hollow = vec![false; cfg.count];
    hollow[..n_hollow].iter_mut().for_each(|h| *h = true);
    hollow.shuffle(&mut rng);
    let mut specs = Vec::with_capacity(cfg.count);
    for (i, &is_hollow) in hollow.iter().enumerate() {
        let outer = if cfg.max_radius > cfg.min_radius { rng.random_range(cfg.min_radius..=cfg.max_radius) } else { cfg.min_radius };
        let mut center = [0; 3];
        for ax in 0..3 {
            let lo = outer.ceil() as usize;
            let hi = ((extents[ax] - 1) as f64 - outer).floor() as usize;
            center[ax] = rng.random_range(lo..=hi);
        }
        specs.push(PhantomSpec {
            extents,
            center,
            outer_radius: outer,
            cavity_radius: if is_hollow { cfg.cavity_ratio * outer } else { 0.0 },
            rim_intensity: 0.9,
            core_intensity: 0.3,
            background_intensity: 0.1,
            noise_sigma: cfg.noise_sigma,
            seed: derive_seed(seed, STREAM_PHANTOM, i as u64),
        });
    }
    Ok(specs)
}

pub fn phantom_id(i: usize) -> String {
    format!("phantom_{i:03}")
}

/// In-memory phantom cohort, already normalized.
pub fn phantom_cohort(cfg: &PhantomCohortConfig, extents: [usize; 3], seed: u64) -> Result<Vec<Patient>> {
    phantom_specs(cfg, extents, seed)?
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let (mut volume, mask, record) = make_phantom(spec)?;
            normalize_channels(&mut volume)?;
            Ok(Patient { id: phantom_id(i), volume, mask: Some(mask), record })
        })
        .collect()
}

/// Write a phantom cohort as NIfTI files plus `manifest.csv` under `dir`.
/// Returns the manifest path.
pub fn write_phantom_cohort(dir: &Path, cfg: &PhantomCohortConfig, extents: [usize; 3], seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = CohortManifest::default();
    for (i, spec) in phantom_specs(cfg, extents, seed)?.iter().enumerate() {
        let (volume, mask, record) = make_phantom(spec)?;
        let id = phantom_id(i);
        let shape = extents.to_vec();
        let mut paths = Vec::with_capacity(4);
        for (c, m) in MODALITIES.iter().enumerate() {
            let name = format!("{id}_{m}.nii");
            fs::write(dir.join(&name), write_nifti(&NdVolume::new(shape.clone(), volume.channel(c).to_vec())?, &[])?)?;
            paths.push(name);
        }
        let mask_name = format!("{id}_mask.nii");
        let mask_data = mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        fs::write(dir.join(&mask_name), write_nifti_u8(&NdVolume::new(shape, mask_data)?, &[])?)?;
        let [t1, t1ce, t2, flair]: [String; 4] = paths.try_into().expect("four modalities");
        manifest.rows.push(ManifestRow {
            patient_id: id,
            t1,
            t1ce,
            t2,
            flair,
            mask: Some(mask_name),
            time_days: record.time,
            event: record.event as u8,
            age: record.covariates[0],
        });
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, write_manifest(&manifest)?)?;
    Ok(path)
}
