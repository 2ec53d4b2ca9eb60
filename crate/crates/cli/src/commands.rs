use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use topogbm::attribution::{occlusion_map, regional_attribution, top_embedding_dims};
use topogbm::config::RunConfig;
use topogbm::container::Checkpoint;
use topogbm::dataset::{derive_seed, load_cohort, split_indices, write_phantom_cohort, Patient, STREAM_BOOTSTRAP};
use topogbm::harmonize::PcaModel;
use topogbm::model::StageOneModel;
use topogbm::nifti::parse_nifti;
use topogbm::pipeline::{head_checkpoint, head_from_checkpoint, SurvivalPipeline};
use topogbm::recon::{bootstrap_mean_ci, ReconReport};
use topogbm::survival::{kaplan_meier, stratify_median, RiskGroup, SurvivalRecord};
use topogbm::topology::{compute_persistence, grid_side, input_slice_diagram, latent_grid_diagram, wasserstein2, CubicalFiltration, FiltrationMode};
use topogbm::train::{self, HeadSample, StageOneState, StageOneTrainer};
use topogbm::volume::{region_partition, DEFAULT_RING_EDGES};
use topogbm::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
const BOOTSTRAP_RESAMPLES: usize = 1000;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read(path)?)
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    write(&dir.join("config.json"), crate::config::to_json(cfg))
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

/// Patients sorted by id with their split name.
struct Cohort {
    patients: Vec<Patient>,
    split: Vec<&'static str>,
}

impl Cohort {
    fn load(manifest: &Path, cfg: &RunConfig) -> Result<Self> {
        let patients = load_cohort(manifest, cfg.encoder.extents)?;
        let mut split = vec![""; patients.len()];
        for (s, idx) in split_indices(patients.len(), cfg.splits, cfg.seed).iter().enumerate() {
            for &i in idx {
                split[i] = SPLITS[s];
            }
        }
        log::info!("loaded {} patients", patients.len());
        Ok(Self { patients, split })
    }

    fn subset(&self, name: &str) -> Vec<Patient> {
        self.patients.iter().zip(&self.split).filter(|(_, s)| **s == name).map(|(p, _)| p.clone()).collect()
    }

    fn indices(&self, name: &str) -> Vec<usize> {
        (0..self.patients.len()).filter(|&i| name == "all" || self.split[i] == name).collect()
    }
}

fn load_encoder(cfg: &RunConfig, path: &Path) -> Result<StageOneModel> {
    StageOneModel::from_checkpoint(cfg.encoder.clone(), &read_checkpoint(path)?)
}

fn load_pipeline(cfg: &RunConfig, stage1: &Path, head: &Path, pca: Option<&Path>) -> Result<SurvivalPipeline> {
    let encoder = load_encoder(cfg, stage1)?;
    let pca = pca.map(|p| PcaModel::from_checkpoint(&read_checkpoint(p)?)).transpose()?;
    let (head, standardizer, bins) = head_from_checkpoint(cfg.head.clone(), &read_checkpoint(head)?)?;
    Ok(SurvivalPipeline { encoder, pca, head, standardizer, bins })
}

pub fn phantom(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare_out(out, cfg)?;
    let manifest = write_phantom_cohort(out, &cfg.phantom, cfg.encoder.extents, cfg.seed)?;
    log::info!("wrote {} phantoms to {}", cfg.phantom.count, manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct SplitRow<'a> {
    patient_id: &'a str,
    split: &'a str,
}

fn write_splits(out: &Path, cohort: &Cohort) -> Result<()> {
    let rows: Vec<SplitRow> = cohort.patients.iter().zip(&cohort.split).map(|(p, s)| SplitRow { patient_id: &p.id, split: s }).collect();
    write(&out.join("splits.csv"), csv_string(&rows)?)
}

pub fn train_stage1(cfg: &RunConfig, manifest: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let cohort = Cohort::load(manifest, cfg)?;
    prepare_out(out, cfg)?;
    write_splits(out, &cohort)?;
    let (train, val) = (cohort.subset("train"), cohort.subset("val"));
    let trainer = StageOneTrainer::new(cfg, &train, &val)?;
    let mut state = match resume {
        Some(p) => {
            let s = StageOneState::from_checkpoint(cfg, &read_checkpoint(p)?)?;
            log::info!("resuming after epoch {}", s.epoch);
            s
        }
        None => StageOneState::new(cfg)?,
    };
    let start = state.epoch;
    while state.epoch < cfg.stage1.epochs {
        let row = trainer.step_epoch(&mut state)?;
        log::info!("stage 1 epoch {}: recon {:.5} topo {:.5} cox {:.5} total {:.5}", row.epoch, row.recon, row.topo, row.cox, row.total);
        if state.since_best >= cfg.stage1.patience {
            state.log.stopped_early = true;
            break;
        }
    }
    write(&out.join("stage1.tgv"), state.best_model().to_checkpoint().to_bytes())?;
    write(&out.join("stage1_state.tgv"), state.to_checkpoint().to_bytes())?;
    let log_name = if start == 0 { "stage1_log.csv".to_string() } else { format!("stage1_log_from_{start}.csv") };
    write(&out.join(log_name), state.log.to_csv()?)
}

fn samples(pipeline_encoder: &StageOneModel, pca: Option<&PcaModel>, patients: &[Patient]) -> Result<Vec<HeadSample>> {
    patients
        .iter()
        .map(|p| {
            let z = pipeline_encoder.embed(&p.volume)?;
            let embedding = match pca {
                Some(m) => m.remove(&z)?,
                None => z,
            };
            Ok(HeadSample { embedding, age: p.age(), record: p.record.clone() })
        })
        .collect()
}

fn fit_pca(cfg: &RunConfig, encoder: &StageOneModel, train: &[Patient]) -> Result<PcaModel> {
    let raw: Vec<Vec<f64>> = train.iter().map(|p| encoder.embed(&p.volume)).collect::<Result<_>>()?;
    PcaModel::fit(&raw, cfg.harmonize_k)
}

pub fn train_stage2(cfg: &RunConfig, manifest: &Path, stage1: &Path, out: &Path) -> Result<()> {
    let cohort = Cohort::load(manifest, cfg)?;
    prepare_out(out, cfg)?;
    let encoder = load_encoder(cfg, stage1)?;
    let frozen = encoder.to_checkpoint().to_bytes();
    let (train, val) = (cohort.subset("train"), cohort.subset("val"));
    let pca = if cfg.harmonize { Some(fit_pca(cfg, &encoder, &train)?) } else { None };
    let result = train::train_stage2(cfg, &samples(&encoder, pca.as_ref(), &train)?, &samples(&encoder, pca.as_ref(), &val)?)?;
    if encoder.to_checkpoint().to_bytes() != frozen {
        return Err(Error::Numeric("encoder parameters changed during stage 2".into()));
    }
    for e in &result.log.epochs {
        log::info!("stage 2 epoch {}: ce {:.5} c_val {:.4}{}", e.epoch, e.ce, e.val_c_index.unwrap_or(f64::NAN), if e.best { " *" } else { "" });
    }
    if let Some(p) = &pca {
        write(&out.join("pca.tgv"), p.to_checkpoint().to_bytes())?;
    }
    write(&out.join("head.tgv"), head_checkpoint(&result.head, &result.standardizer, &result.bins).to_bytes())?;
    write(&out.join("stage2_log.csv"), result.log.to_csv()?)
}

pub fn harmonize(cfg: &RunConfig, manifest: &Path, stage1: &Path, out: &Path) -> Result<()> {
    let cohort = Cohort::load(manifest, cfg)?;
    prepare_out(out, cfg)?;
    let encoder = load_encoder(cfg, stage1)?;
    let model = fit_pca(cfg, &encoder, &cohort.subset("train"))?;
    let bytes = model.to_checkpoint().to_bytes();
    let mut rows = String::from("patient_id,split,dim,value\n");
    for (p, s) in cohort.patients.iter().zip(&cohort.split) {
        for (j, v) in model.remove(&encoder.embed(&p.volume)?)?.iter().enumerate() {
            rows.push_str(&format!("{},{s},{j},{v}\n", p.id));
        }
    }
    if model.to_checkpoint().to_bytes() != bytes {
        return Err(Error::Numeric("harmonization model changed while applied".into()));
    }
    write(&out.join("pca.tgv"), bytes)?;
    let var: Vec<String> = model.explained_variance.iter().enumerate().map(|(i, v)| format!("{i},{v}\n")).collect();
    write(&out.join("explained_variance.csv"), format!("component,variance\n{}", var.concat()))?;
    write(&out.join("harmonized_embeddings.csv"), rows)
}

#[derive(Serialize)]
struct KmRow {
    group: &'static str,
    time: f64,
    survival: f64,
    at_risk: usize,
    events: usize,
}

fn group_name(g: RiskGroup) -> &'static str {
    match g {
        RiskGroup::Low => "low",
        RiskGroup::High => "high",
    }
}

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is {v}")))
    }
}

pub fn eval(cfg: &RunConfig, manifest: &Path, stage1: &Path, head: &Path, pca: Option<&Path>, out: &Path) -> Result<()> {
    let cohort = Cohort::load(manifest, cfg)?;
    prepare_out(out, cfg)?;
    let pipe = load_pipeline(cfg, stage1, head, pca)?;
    let k = pipe.head.config.bins;

    let mut pred = String::from("patient_id,split,time_days,event,risk,group");
    for b in 0..k {
        pred.push_str(&format!(",p{b}"));
    }
    pred.push('\n');
    let mut risks = Vec::new();
    let mut recon_rows = Vec::new();
    let mut probs = Vec::new();
    for (p, s) in cohort.patients.iter().zip(&cohort.split) {
        let (z, xhat) = pipe.encoder.reconstruct(&p.volume)?;
        let r = pipe.predict_embedding(pipe.harmonize(z)?, p.age())?;
        risks.push(r.risk);
        probs.push(r.probabilities);
        let rep = ReconReport::compute(&p.id, s, &p.volume, &xhat, p.mask.as_ref())?;
        finite("reconstruction error", rep.mse)?;
        recon_rows.push(rep);
    }
    let groups = stratify_median(&risks)?;
    for (i, (p, s)) in cohort.patients.iter().zip(&cohort.split).enumerate() {
        pred.push_str(&format!("{},{s},{},{},{},{}", p.id, p.record.time, p.record.event as u8, risks[i], group_name(groups[i])));
        for v in &probs[i] {
            pred.push_str(&format!(",{v}"));
        }
        pred.push('\n');
    }
    write(&out.join("predictions.csv"), pred)?;

    let mut km = Vec::new();
    for g in [RiskGroup::Low, RiskGroup::High] {
        let recs: Vec<SurvivalRecord> = cohort.patients.iter().zip(&groups).filter(|(_, gg)| **gg == g).map(|(p, _)| p.record.clone()).collect();
        let c = kaplan_meier(&recs);
        for i in 0..c.times.len() {
            km.push(KmRow { group: group_name(g), time: c.times[i], survival: c.survival[i], at_risk: c.at_risk[i], events: c.events[i] });
        }
    }
    write(&out.join("km.csv"), csv_string(&km)?)?;
    write(&out.join("recon.csv"), csv_string(&recon_rows)?)?;

    let mut c_index = BTreeMap::new();
    let mut recon_summary = BTreeMap::new();
    let mut table = String::from("split,metric,mean,lo,hi\n");
    for name in ["all", "train", "val", "test"] {
        let idx = cohort.indices(name);
        let recs: Vec<SurvivalRecord> = idx.iter().map(|&i| cohort.patients[i].record.clone()).collect();
        let rs: Vec<f64> = idx.iter().map(|&i| risks[i]).collect();
        c_index.insert(name, topogbm::survival::c_index(&rs, &recs).ok());
        if idx.is_empty() {
            continue;
        }
        let mut metrics = BTreeMap::new();
        let columns: [(&str, Box<dyn Fn(&ReconReport) -> Option<f64>>); 6] = [
            ("mae", Box::new(|r| Some(r.mae))),
            ("mse", Box::new(|r| Some(r.mse))),
            ("psnr", Box::new(|r| Some(r.psnr))),
            ("ssim", Box::new(|r| Some(r.ssim))),
            ("mae_tumor", Box::new(|r| r.mae_tumor)),
            ("mae_nontumor", Box::new(|r| r.mae_nontumor)),
        ];
        for (m, (metric, get)) in columns.iter().enumerate() {
            let vals: Vec<f64> = idx.iter().filter_map(|&i| get(&recon_rows[i])).collect();
            if vals.is_empty() {
                continue;
            }
            let ci = bootstrap_mean_ci(&vals, BOOTSTRAP_RESAMPLES, derive_seed(cfg.seed, STREAM_BOOTSTRAP, m as u64))?;
            table.push_str(&format!("{name},{metric},{},{},{}\n", ci.mean, ci.lo, ci.hi));
            metrics.insert(*metric, ci);
        }
        recon_summary.insert(name, metrics);
    }
    write(&out.join("recon_summary.csv"), table)?;
    let summary = json!({ "c_index": c_index, "recon": recon_summary, "bins": pipe.bins.edges() });
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("serializable") + "\n")
}

#[derive(Serialize)]
struct AttributionRow<'a> {
    patient_id: &'a str,
    target: &'static str,
    region: String,
    fraction: f64,
    fallback: bool,
}

pub fn attribute(cfg: &RunConfig, manifest: &Path, stage1: &Path, head: &Path, pca: Option<&Path>, out: &Path, split: &str, limit: Option<usize>) -> Result<()> {
    if split != "all" && !SPLITS.contains(&split) {
        return Err(Error::Config(format!("unknown split `{split}`")));
    }
    let cohort = Cohort::load(manifest, cfg)?;
    prepare_out(out, cfg)?;
    let pipe = load_pipeline(cfg, stage1, head, pca)?;
    let gates: Vec<Vec<f64>> = cohort.patients.iter().map(|p| pipe.predict(&p.volume, p.age()).map(|r| r.gate)).collect::<Result<_>>()?;
    let dims = top_embedding_dims(&gates, cfg.top_dims)?;
    let mut idx = cohort.indices(split);
    idx.truncate(limit.unwrap_or(usize::MAX));

    let mut rows = Vec::new();
    let mut sums: BTreeMap<(&'static str, usize), (String, f64)> = BTreeMap::new();
    for &i in &idx {
        let p = &cohort.patients[i];
        let mask = p.mask.as_ref().ok_or_else(|| Error::MissingMask(p.id.clone()))?;
        let partition = region_partition(mask, &DEFAULT_RING_EDGES);
        let maps = occlusion_map(&pipe.for_patient(p.age()), &p.volume, &cfg.occlusion, &dims)?;
        let attr = regional_attribution(&maps, &partition)?;
        for (target, fr) in [("hazard", &attr.hazard), ("embedding", &attr.embedding)] {
            for (r, (name, &f)) in attr.regions.iter().zip(&fr.fractions).enumerate() {
                rows.push(AttributionRow { patient_id: &p.id, target, region: name.clone(), fraction: f, fallback: fr.fallback });
                let e = sums.entry((target, r)).or_insert((name.clone(), 0.0));
                e.1 += f;
            }
        }
        log::info!("attributed {}", p.id);
    }
    write(&out.join("attribution.csv"), csv_string(&rows)?)?;
    let mut summary = String::from("target,region,mean_fraction\n");
    for ((target, _), (name, s)) in &sums {
        summary.push_str(&format!("{target},{name},{}\n", s / idx.len() as f64));
    }
    write(&out.join("attribution_summary.csv"), summary)?;
    let dims_csv: Vec<String> = dims.iter().enumerate().map(|(rank, d)| format!("{rank},{d}\n")).collect();
    write(&out.join("top_dims.csv"), format!("rank,dim\n{}", dims_csv.concat()))
}

pub fn persistence(cfg: &RunConfig, input: Option<&Path>, mode: FiltrationMode, manifest: Option<&Path>, stage1: Option<&Path>, out: &Path) -> Result<()> {
    match (input, manifest, stage1) {
        (Some(path), None, None) => {
            let (_, vol) = parse_nifti(&read(path)?)?;
            let values: Vec<f64> = vol.data.iter().map(|&v| v as f64).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
            let f = match mode {
                FiltrationMode::Sublevel => CubicalFiltration::sublevel(vol.shape.clone(), values),
                FiltrationMode::Superlevel => CubicalFiltration::superlevel(vol.shape.clone(), values),
            };
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write(out, compute_persistence(&f).to_csv(&[0, 1, 2]))
        }
        (None, Some(manifest), Some(stage1)) => {
            let cohort = Cohort::load(manifest, cfg)?;
            prepare_out(out, cfg)?;
            let encoder = load_encoder(cfg, stage1)?;
            let side = grid_side(cfg.encoder.latent_dim)?;
            let mut diagrams = String::from("patient_id,source,q,birth,death\n");
            let mut dist = String::from("patient_id,split,w2_h0,w2_h1\n");
            for (p, s) in cohort.patients.iter().zip(&cohort.split) {
                let target = input_slice_diagram(&p.volume, side)?;
                let (latent, _) = latent_grid_diagram(&encoder.embed(&p.volume)?)?;
                for (source, d) in [("input", &target), ("latent", &latent)] {
                    for line in d.to_csv(&[0, 1]).lines().skip(1) {
                        diagrams.push_str(&format!("{},{source},{line}\n", p.id));
                    }
                }
                dist.push_str(&format!("{},{s},{},{}\n", p.id, wasserstein2(&target, &latent, 0), wasserstein2(&target, &latent, 1)));
            }
            write(&out.join("diagrams.csv"), diagrams)?;
            write(&out.join("distances.csv"), dist)
        }
        _ => Err(Error::Config("persistence takes either --input, or --manifest with --stage1".into())),
    }
}
