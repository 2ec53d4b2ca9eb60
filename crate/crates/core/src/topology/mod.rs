//! Cubical persistent homology, diagram distances and the topological
//! regularizer on the latent grid.
//!
//! Diagrams come from a lower-star filtration of a 1–3 dimensional grid
//! (see [`cubical`]). Every finite point remembers the grid vertices that
//! realise its birth and death values, which is what makes the diagram
//! differentiable with respect to the grid: moving a critical vertex moves
//! the point, as long as the pairing itself does not change.

pub mod cubical;
pub mod matching;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{resample_trilinear, MultiModalVolume};

pub use cubical::{compute_persistence, compute_persistence_naive, CubicalFiltration};
pub use matching::{diagonal_cost, optimal_matching, Matching};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FiltrationMode {
    Sublevel,
    Superlevel,
}

/// One `(birth, death)` feature in homology dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePoint {
    pub birth: f64,
    /// `f64::INFINITY` for essential classes.
    pub death: f64,
    pub dim: u8,
    /// Grid index whose value is `birth`.
    pub birth_vertex: usize,
    /// Grid index whose value is `death`; `None` for essential classes.
    pub death_vertex: Option<usize>,
}

impl PersistencePoint {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }
    pub fn is_essential(&self) -> bool {
        self.death_vertex.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    pub points: Vec<PersistencePoint>,
    pub mode: FiltrationMode,
}

impl PersistenceDiagram {
    /// Build from bare `(birth, death, dim)` triples, dropping zero-persistence
    /// points. Critical vertices are left at 0.
    pub fn from_triples(triples: &[(f64, f64, u8)]) -> Self {
        let points = triples
            .iter()
            .filter(|(b, d, _)| d > b)
            .map(|&(birth, death, dim)| PersistencePoint {
                birth,
                death,
                dim,
                birth_vertex: 0,
                death_vertex: death.is_finite().then_some(0),
            })
            .collect();
        Self { points, mode: FiltrationMode::Sublevel }
    }

    /// Finite points of dimension `dim`, as `(index into points, (b, d))`.
    pub fn finite(&self, dim: u8) -> Vec<(usize, (f64, f64))> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.dim == dim && !p.is_essential())
            .map(|(i, p)| (i, (p.birth, p.death)))
            .collect()
    }

    pub fn essential_count(&self, dim: u8) -> usize {
        self.points.iter().filter(|p| p.dim == dim && p.is_essential()).count()
    }

    /// Betti numbers of the sublevel set at `level`.
    pub fn betti_at(&self, level: f64) -> [usize; 3] {
        let mut b = [0; 3];
        for p in &self.points {
            if p.birth <= level && level < p.death && (p.dim as usize) < 3 {
                b[p.dim as usize] += 1;
            }
        }
        b
    }

    /// `q,birth,death` rows; essential deaths print as `inf`.
    pub fn to_csv(&self, dims: &[u8]) -> String {
        let mut s = String::from("q,birth,death\n");
        for p in self.points.iter().filter(|p| dims.contains(&p.dim)) {
            s.push_str(&format!("{},{},{}\n", p.dim, p.birth, if p.death.is_finite() { p.death.to_string() } else { "inf".into() }));
        }
        s
    }
}

fn finite_pairs(d: &PersistenceDiagram, q: u8) -> Vec<(f64, f64)> {
    d.finite(q).into_iter().map(|(_, p)| p).collect()
}

/// Wasserstein-2 distance between the finite dimension-`q` points.
pub fn wasserstein2(a: &PersistenceDiagram, b: &PersistenceDiagram, q: u8) -> f64 {
    let (pa, pb) = (finite_pairs(a, q), finite_pairs(b, q));
    optimal_matching(&pa, &pb).cost(&pa, &pb).sqrt()
}

/// Sum of squared persistence differences over the optimal Wasserstein
/// matching; unmatched points contribute their own persistence squared.
pub fn matched_persistence_mse(pred: &PersistenceDiagram, truth: &PersistenceDiagram, q: u8) -> f64 {
    let (pa, pb) = (finite_pairs(pred, q), finite_pairs(truth, q));
    let m = optimal_matching(&pa, &pb);
    persistence_mse_of(&m, &pa, &pb)
}

fn persistence_mse_of(m: &Matching, a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let pers = |p: (f64, f64)| p.1 - p.0;
    let mut total = 0.0;
    for (i, mj) in m.matched_to.iter().enumerate() {
        let diff = match mj {
            Some(j) => pers(a[i]) - pers(b[*j]),
            None => pers(a[i]),
        };
        total += diff * diff;
    }
    for &j in &m.unmatched_b {
        total += pers(b[j]) * pers(b[j]);
    }
    total
}

/// Which diagram discrepancy the regularizer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagramDistance {
    #[default]
    SquaredWasserstein,
    MatchedPersistenceMse,
}

/// Per-dimension weights `alpha_q` and the overall weight `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopoWeights {
    pub alpha: [f64; 3],
    pub tau: f64,
}

impl Default for TopoWeights {
    fn default() -> Self {
        Self { alpha: [1.0; 3], tau: 0.1 }
    }
}

impl TopoWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().chain([&self.tau]).any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("topological weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Value and point-wise gradients of the regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoLoss {
    pub value: f64,
    pub per_dim: [f64; 3],
    /// `(point index in the latent diagram, dL/dbirth, dL/ddeath)`.
    pub point_grads: Vec<(usize, f64, f64)>,
}

impl TopoLoss {
    /// Scatter point gradients onto the latent grid through the critical
    /// vertices. Superlevel diagrams live in negated units, so the sign flips.
    pub fn grid_gradient(&self, latent: &PersistenceDiagram, grid_len: usize) -> Vec<f64> {
        let sign = match latent.mode {
            FiltrationMode::Sublevel => 1.0,
            FiltrationMode::Superlevel => -1.0,
        };
        let mut g = vec![0.0; grid_len];
        for &(i, db, dd) in &self.point_grads {
            let p = &latent.points[i];
            g[p.birth_vertex] += sign * db;
            if let Some(v) = p.death_vertex {
                g[v] += sign * dd;
            }
        }
        g
    }
}

/// `sum_q alpha_q * dist_q(target, latent)` with gradients for the latent
/// points, holding the optimal matching fixed. `tau` is applied by the
/// caller when forming the total objective.
pub fn topo_loss(target: &PersistenceDiagram, latent: &PersistenceDiagram, alpha: &[f64; 3], distance: DiagramDistance) -> TopoLoss {
    let mut out = TopoLoss { value: 0.0, per_dim: [0.0; 3], point_grads: Vec::new() };
    for q in 0..3u8 {
        let w = alpha[q as usize];
        if w == 0.0 {
            continue;
        }
        let lat = latent.finite(q);
        let tgt = finite_pairs(target, q);
        let lp: Vec<(f64, f64)> = lat.iter().map(|(_, p)| *p).collect();
        let m = optimal_matching(&lp, &tgt);
        let dist = match distance {
            DiagramDistance::SquaredWasserstein => m.cost(&lp, &tgt),
            DiagramDistance::MatchedPersistenceMse => persistence_mse_of(&m, &lp, &tgt),
        };
        out.per_dim[q as usize] = dist;
        out.value += w * dist;
        for (k, &(idx, (b, d))) in lat.iter().enumerate() {
            let (db, dd) = match (distance, m.matched_to[k]) {
                (DiagramDistance::SquaredWasserstein, Some(j)) => (2.0 * (b - tgt[j].0), 2.0 * (d - tgt[j].1)),
                (DiagramDistance::SquaredWasserstein, None) => (-(d - b), d - b),
                (DiagramDistance::MatchedPersistenceMse, Some(j)) => {
                    let diff = (d - b) - (tgt[j].1 - tgt[j].0);
                    (-2.0 * diff, 2.0 * diff)
                }
                (DiagramDistance::MatchedPersistenceMse, None) => (-2.0 * (d - b), 2.0 * (d - b)),
            };
            if db != 0.0 || dd != 0.0 {
                out.point_grads.push((idx, w * db, w * dd));
            }
        }
    }
    out
}

/// Side of the square grid for a latent of length `d`.
pub fn grid_side(d: usize) -> Result<usize> {
    let s = (d as f64).sqrt().round() as usize;
    if s * s != d || d == 0 {
        return Err(Error::NonSquareDim(d));
    }
    Ok(s)
}

fn minmax_f64(z: &[f64]) -> (Vec<f64>, usize, usize, f64) {
    let (mut lo, mut hi) = (0usize, 0usize);
    for (i, &v) in z.iter().enumerate() {
        if v < z[lo] {
            lo = i;
        }
        if v > z[hi] {
            hi = i;
        }
    }
    let span = z[hi] - z[lo];
    let grid = if span > 0.0 { z.iter().map(|&v| (v - z[lo]) / span).collect() } else { vec![0.0; z.len()] };
    (grid, lo, hi, span)
}

/// Sublevel H0/H1 diagram of `z`, min-max normalized and reshaped row-major
/// into a `sqrt(d) x sqrt(d)` grid. Also returns the normalized grid.
pub fn latent_grid_diagram(z: &[f64]) -> Result<(PersistenceDiagram, Vec<f64>)> {
    let side = grid_side(z.len())?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let (grid, ..) = minmax_f64(z);
    let diagram = compute_persistence(&CubicalFiltration::sublevel(vec![side, side], grid.clone()));
    Ok((diagram, grid))
}

/// Regularizer value on a latent vector and its gradient with respect to
/// the raw (unnormalized) latent entries.
pub fn latent_topo_loss(z: &[f64], target: &PersistenceDiagram, alpha: &[f64; 3], distance: DiagramDistance) -> Result<(f64, Vec<f64>)> {
    let side = grid_side(z.len())?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let (grid, lo, hi, span) = minmax_f64(z);
    let diagram = compute_persistence(&CubicalFiltration::sublevel(vec![side, side], grid.clone()));
    let loss = topo_loss(target, &diagram, alpha, distance);
    let dg = loss.grid_gradient(&diagram, z.len());
    let mut dz = vec![0.0; z.len()];
    if span > 0.0 {
        // g_k = (z_k - z_lo) / span
        let (mut to_lo, mut to_hi) = (0.0, 0.0);
        for k in 0..z.len() {
            if k == lo || k == hi {
                continue;
            }
            dz[k] += dg[k] / span;
            to_lo += dg[k] * (grid[k] - 1.0) / span;
            to_hi -= dg[k] * grid[k] / span;
        }
        dz[lo] += to_lo;
        dz[hi] += to_hi;
    }
    Ok((loss.value, dz))
}

/// Reference diagram for a volume: channel mean of the middle axial slice,
/// resampled to `side x side`, min-max normalized, sublevel H0/H1.
pub fn input_slice_diagram(volume: &MultiModalVolume, side: usize) -> Result<PersistenceDiagram> {
    let [d, h, w] = volume.extents();
    let z = d / 2;
    let c = volume.n_channels();
    let slice: Vec<f32> = (0..h * w)
        .map(|i| (0..c).map(|ch| volume.channel(ch)[z * h * w + i]).sum::<f32>() / c as f32)
        .collect();
    let slice = MultiModalVolume::new(1, [1, h, w], slice)?;
    let small = resample_trilinear(&slice, [1, side, side])?;
    let vals: Vec<f64> = small.data().iter().map(|&v| v as f64).collect();
    let (grid, ..) = minmax_f64(&vals);
    Ok(compute_persistence(&CubicalFiltration::sublevel(vec![side, side], grid)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn diag(points: &[(f64, f64)]) -> PersistenceDiagram {
        PersistenceDiagram::from_triples(&points.iter().map(|&(b, d)| (b, d, 1)).collect::<Vec<_>>())
    }

    #[test]
    fn wasserstein_analytic_cases() {
        let a = diag(&[(0.0, 1.0)]);
        assert_eq!(wasserstein2(&a, &a, 1), 0.0);
        assert!((wasserstein2(&a, &diag(&[]), 1) - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((wasserstein2(&diag(&[(0.0, 2.0)]), &a, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn essential_and_other_dims_ignored() {
        let a = PersistenceDiagram::from_triples(&[(0.0, f64::INFINITY, 0), (0.0, 1.0, 0), (0.2, 0.9, 1)]);
        let b = PersistenceDiagram::from_triples(&[(0.0, 1.0, 0)]);
        assert_eq!(wasserstein2(&a, &b, 0), 0.0);
    }

    #[test]
    fn persistence_mse_cases() {
        let a = diag(&[(0.0, 2.0), (0.0, 1.0)]);
        assert_eq!(matched_persistence_mse(&a, &a, 1), 0.0);
        assert_eq!(matched_persistence_mse(&diag(&[(0.0, 2.0)]), &diag(&[(0.0, 1.0)]), 1), 1.0);
        assert_eq!(matched_persistence_mse(&a, &diag(&[(0.0, 2.0)]), 1), 1.0);
    }

    #[test]
    fn topo_loss_weighted_sum() {
        // Single-point diagrams against empty targets: dist_q = p^2 / 2.
        let p = |x: f64| (2.0 * x).sqrt();
        let lat = PersistenceDiagram::from_triples(&[(0.0, p(0.1), 0), (0.0, p(0.2), 1), (0.0, p(0.3), 2)]);
        let empty = PersistenceDiagram::from_triples(&[]);
        let l = topo_loss(&empty, &lat, &[1.0; 3], DiagramDistance::SquaredWasserstein);
        assert!((l.value - 0.6).abs() < 1e-12);
        for (q, want) in [0.1, 0.2, 0.3].iter().enumerate() {
            assert!((l.per_dim[q] - want).abs() < 1e-12);
        }
        let half = topo_loss(&empty, &lat, &[0.0, 1.0, 0.5], DiagramDistance::SquaredWasserstein);
        assert!((half.value - 0.35).abs() < 1e-12);
    }

    #[test]
    fn identical_grids_give_zero_loss_and_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let z: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let (target, _) = latent_grid_diagram(&z).unwrap();
        let (v, g) = latent_topo_loss(&z, &target, &[1.0; 3], DiagramDistance::SquaredWasserstein).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn latent_grid_shapes() {
        assert_eq!(grid_side(256).unwrap(), 16);
        assert_eq!(grid_side(100).unwrap(), 10);
        assert!(matches!(grid_side(200), Err(Error::NonSquareDim(200))));
        let (d, g) = latent_grid_diagram(&[0.7; 16]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        assert_eq!(d.points.len(), 1);
        assert_eq!((d.points[0].birth, d.points[0].death, d.points[0].dim), (0.0, f64::INFINITY, 0));
    }

    fn central_difference(z: &[f64], target: &PersistenceDiagram, distance: DiagramDistance, k: usize, h: f64) -> f64 {
        let f = |z: &[f64]| latent_topo_loss(z, target, &[1.0, 0.7, 0.0], distance).unwrap().0;
        let mut zp = z.to_vec();
        zp[k] += h;
        let mut zm = z.to_vec();
        zm[k] -= h;
        (f(&zp) - f(&zm)) / (2.0 * h)
    }

    #[test]
    fn latent_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for distance in [DiagramDistance::SquaredWasserstein, DiagramDistance::MatchedPersistenceMse] {
            for _ in 0..5 {
                let z: Vec<f64> = (0..36).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
                let t: Vec<f64> = (0..36).map(|_| rng.random::<f64>()).collect();
                let (target, _) = latent_grid_diagram(&t).unwrap();
                let (_, g) = latent_topo_loss(&z, &target, &[1.0, 0.7, 0.0], distance).unwrap();
                let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for k in 0..36 {
                    let fd = central_difference(&z, &target, distance, k, 1e-7);
                    assert!((fd - g[k]).abs() <= 1e-3 * scale.max(1e-9), "coord {k}: fd {fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn superlevel_gradient_sign() {
        let vals = vec![0.9, 0.1, 0.8];
        let f = CubicalFiltration::superlevel(vec![3], vals);
        let d = compute_persistence(&f);
        let l = topo_loss(&PersistenceDiagram::from_triples(&[]), &d, &[1.0; 3], DiagramDistance::SquaredWasserstein);
        let g = l.grid_gradient(&d, 3);
        // Finite H0 point in negated units is (-0.8, -0.1); growing it raises
        // the loss, which on the original scale means raising 0.8 or lowering 0.1.
        assert!(g[2] > 0.0 && g[1] < 0.0);
    }
}
