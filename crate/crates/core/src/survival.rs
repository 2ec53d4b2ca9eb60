//! Survival records, discrete-time binning, concordance, Kaplan–Meier and
//! median risk stratification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed time, event flag (`true` = event, `false` = right-censored) and
/// clinical covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool, covariates: Vec<f64>) -> Self {
        Self { time, event, covariates }
    }
}

/// `0 = tau_0 < tau_1 < ... < tau_{K-1} < tau_K = inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    edges: Vec<f64>,
}

impl BinEdges {
    /// Build from the `K - 1` interior edges.
    pub fn from_interior(interior: &[f64]) -> Result<Self> {
        let mut edges = Vec::with_capacity(interior.len() + 2);
        edges.push(0.0);
        edges.extend_from_slice(interior);
        edges.push(f64::INFINITY);
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(format!("bin edges must increase strictly: {edges:?}")));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn interior(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Interior edges at the `j / K` quantiles of the uncensored training times.
pub fn make_bin_edges(records: &[SurvivalRecord], bins: usize) -> Result<BinEdges> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
    }
    let mut times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    let mut distinct = times.clone();
    distinct.dedup();
    if distinct.len() < bins {
        return Err(Error::TooFewEvents { needed: bins, found: distinct.len() });
    }
    let mut interior: Vec<f64> = (1..bins).map(|j| quantile_sorted(&times, j as f64 / bins as f64)).collect();
    for j in 0..interior.len() {
        let floor = if j == 0 { 0.0 } else { interior[j - 1] };
        if interior[j] <= floor {
            interior[j] = next_up(floor);
        }
    }
    BinEdges::from_interior(&interior)
}

fn next_up(x: f64) -> f64 {
    let bumped = x + x.abs() * 1e-9;
    if bumped > x { bumped } else { f64::from_bits(x.to_bits() + 1) }
}

/// `max { k : tau_k <= t }`.
pub fn bin_label(t: f64, edges: &BinEdges) -> usize {
    let e = edges.edges();
    // e[0] = 0 <= t for every valid time.
    e[..e.len() - 1].partition_point(|&tau| tau <= t).saturating_sub(1)
}

/// Harrell's concordance.
///
/// A pair is comparable when `t_i < t_j` and patient `i` had an event; it is
/// concordant when `r_i > r_j`, and a risk tie earns half credit.
pub fn c_index(risks: &[f64], records: &[SurvivalRecord]) -> Result<f64> {
    let counts = concordance_counts(risks, records)?;
    counts.index()
}

/// Raw pair counts behind [`c_index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl ConcordanceCounts {
    pub fn index(&self) -> Result<f64> {
        if self.comparable == 0 {
            return Err(Error::NoComparablePairs);
        }
        Ok((self.concordant as f64 + 0.5 * self.tied as f64) / self.comparable as f64)
    }
}

/// Sweep patients from the latest time down, keeping a Fenwick tree over risk
/// ranks of everyone strictly later than the current time.
pub fn concordance_counts(risks: &[f64], records: &[SurvivalRecord]) -> Result<ConcordanceCounts> {
    if risks.len() != records.len() {
        return Err(Error::ShapeMismatch(format!("{} risks for {} records", risks.len(), records.len())));
    }
    if risks.iter().any(|r| r.is_nan()) {
        return Err(Error::NonFiniteInput);
    }
    let mut levels: Vec<f64> = risks.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let rank = |r: f64| levels.partition_point(|&l| l < r);

    let mut order: Vec<usize> = (0..risks.len()).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));

    let mut tree = Fenwick::new(levels.len());
    let mut counts = ConcordanceCounts::default();
    let mut inserted = 0u64;
    let mut start = 0;
    while start < order.len() {
        let t = records[order[start]].time;
        let end = start + order[start..].iter().take_while(|&&i| records[i].time == t).count();
        for &i in &order[start..end] {
            if records[i].event {
                let k = rank(risks[i]);
                let below = tree.prefix(k);
                let equal = tree.prefix(k + 1) - below;
                counts.concordant += below;
                counts.tied += equal;
                counts.comparable += inserted;
            }
        }
        for &i in &order[start..end] {
            tree.add(rank(risks[i]));
            inserted += 1;
        }
        start = end;
    }
    Ok(counts)
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }
    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }
    /// Sum over ranks `< i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i.min(self.tree.len() - 1);
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Step-function survival estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// `S(t)`; equals 1 before the first event time.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 { 1.0 } else { self.survival[k - 1] }
    }
}

/// Kaplan–Meier product over distinct event times. Patients censored at an
/// event time still count as at risk for it.
pub fn kaplan_meier(records: &[SurvivalRecord]) -> KmCurve {
    let mut times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut s = 1.0;
    let mut curve = KmCurve { times: Vec::new(), survival: Vec::new(), at_risk: Vec::new(), events: Vec::new() };
    for t in times {
        let n = records.iter().filter(|r| r.time >= t).count();
        let d = records.iter().filter(|r| r.event && r.time == t).count();
        s *= 1.0 - d as f64 / n as f64;
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(n);
        curve.events.push(d);
    }
    curve
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskGroup {
    Low,
    High,
}

/// Split at the median risk; exactly-median patients go to the low group.
pub fn stratify_median(risks: &[f64]) -> Result<Vec<RiskGroup>> {
    if risks.len() < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 patients, got {}", risks.len())));
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    Ok(risks.iter().map(|&r| if r > median { RiskGroup::High } else { RiskGroup::Low }).collect())
}
