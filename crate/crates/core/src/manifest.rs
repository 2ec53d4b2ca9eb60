//! Cohort manifest CSV.
//!
//! Columns are matched by header name:
//! `patient_id,t1,t1ce,t2,flair,mask,time_days,event,age`.

use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One patient row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patient_id: String,
    pub t1: String,
    pub t1ce: String,
    pub t2: String,
    pub flair: String,
    pub mask: Option<String>,
    pub time_days: f64,
    pub event: u8,
    pub age: f64,
}

impl ManifestRow {
    /// Modality paths in T1, T1ce, T2, FLAIR order.
    pub fn modality_paths(&self) -> [&str; 4] {
        [&self.t1, &self.t1ce, &self.t2, &self.flair]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortManifest {
    pub rows: Vec<ManifestRow>,
}

#[derive(Deserialize)]
struct RawRow {
    patient_id: String,
    t1: String,
    t1ce: String,
    t2: String,
    flair: String,
    #[serde(default)]
    mask: String,
    time_days: f64,
    event: String,
    age: f64,
}

pub fn read_manifest(text: &str) -> Result<CohortManifest> {
    read_manifest_from(text.as_bytes())
}

pub fn read_manifest_from<R: Read>(reader: R) -> Result<CohortManifest> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<RawRow>() {
        let raw = rec?;
        if !seen.insert(raw.patient_id.clone()) {
            return Err(Error::DuplicatePatient(raw.patient_id));
        }
        if !(raw.time_days > 0.0) || !raw.time_days.is_finite() {
            return Err(Error::NonPositiveTime(raw.patient_id));
        }
        let event = match raw.event.as_str() {
            "0" => 0,
            "1" => 1,
            _ => return Err(Error::BadEventFlag(raw.patient_id, raw.event)),
        };
        rows.push(ManifestRow {
            patient_id: raw.patient_id,
            t1: raw.t1,
            t1ce: raw.t1ce,
            t2: raw.t2,
            flair: raw.flair,
            mask: (!raw.mask.is_empty()).then_some(raw.mask),
            time_days: raw.time_days,
            event,
            age: raw.age,
        });
    }
    Ok(CohortManifest { rows })
}

pub fn write_manifest(manifest: &CohortManifest) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["patient_id", "t1", "t1ce", "t2", "flair", "mask", "time_days", "event", "age"])?;
    for r in &manifest.rows {
        w.write_record([
            r.patient_id.as_str(),
            &r.t1,
            &r.t1ce,
            &r.t2,
            &r.flair,
            r.mask.as_deref().unwrap_or(""),
            &format!("{}", r.time_days),
            &r.event.to_string(),
            &format!("{}", r.age),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}
