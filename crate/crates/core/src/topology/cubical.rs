//! Lower-star cubical complexes and Z/2 boundary-matrix reduction.
//!
//! Grid values sit on vertices (V-construction). A cell is addressed in the
//! doubled grid of extent `2n - 1` per axis: even coordinates are vertex
//! positions, odd ones span an edge, and the cell dimension is the number of
//! odd coordinates. Each cell takes the maximum of its vertices.

use super::{FiltrationMode, PersistenceDiagram, PersistencePoint};

/// Scalar grid with a filtration direction.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicalFiltration {
    pub extents: Vec<usize>,
    pub values: Vec<f64>,
    pub mode: FiltrationMode,
}

impl CubicalFiltration {
    pub fn sublevel(extents: Vec<usize>, values: Vec<f64>) -> Self {
        Self { extents, values, mode: FiltrationMode::Sublevel }
    }

    pub fn superlevel(extents: Vec<usize>, values: Vec<f64>) -> Self {
        Self { extents, values, mode: FiltrationMode::Superlevel }
    }
}

/// The filtered complex with cells listed in filtration order.
pub(crate) struct Complex {
    /// Cell value, indexed by filtration position.
    pub value: Vec<f64>,
    pub dim: Vec<u8>,
    /// Grid index of the vertex realising each cell's value.
    pub critical_vertex: Vec<usize>,
    /// Sorted boundary rows (filtration positions) for each column.
    pub boundary: Vec<Vec<u32>>,
    pub max_dim: u8,
}

impl Complex {
    pub fn build(extents: &[usize], values: &[f64]) -> Self {
        assert!(!extents.is_empty() && extents.len() <= 3, "rank must be 1..=3");
        assert_eq!(extents.iter().product::<usize>(), values.len());
        let rank = extents.len();
        let doubled: Vec<usize> = extents.iter().map(|&n| 2 * n - 1).collect();
        let n_cells: usize = doubled.iter().product();
        let mut dstride = vec![1usize; rank];
        let mut vstride = vec![1usize; rank];
        for a in (0..rank - 1).rev() {
            dstride[a] = dstride[a + 1] * doubled[a + 1];
            vstride[a] = vstride[a + 1] * extents[a + 1];
        }

        let mut cell_value = vec![0.0; n_cells];
        let mut cell_vertex = vec![0usize; n_cells];
        let mut cell_dim = vec![0u8; n_cells];
        let mut coord = vec![0usize; rank];
        for cell in 0..n_cells {
            let mut rem = cell;
            for a in 0..rank {
                coord[a] = rem / dstride[a];
                rem %= dstride[a];
            }
            let odd: Vec<usize> = (0..rank).filter(|&a| coord[a] % 2 == 1).collect();
            cell_dim[cell] = odd.len() as u8;
            let mut best: Option<(f64, usize)> = None;
            for corner in 0..(1usize << odd.len()) {
                let mut v = 0usize;
                for a in 0..rank {
                    let c = match odd.iter().position(|&o| o == a) {
                        Some(bit) => (coord[a] + ((corner >> bit) & 1) * 2 - 1) / 2,
                        None => coord[a] / 2,
                    };
                    v += c * vstride[a];
                }
                let x = values[v];
                // Vertex order: by value, then by grid index.
                if best.is_none_or(|(bx, bv)| x > bx || (x == bx && v > bv)) {
                    best = Some((x, v));
                }
            }
            let (x, v) = best.expect("every cell has a vertex");
            cell_value[cell] = x;
            cell_vertex[cell] = v;
        }

        let mut order: Vec<usize> = (0..n_cells).collect();
        order.sort_by(|&a, &b| {
            cell_value[a]
                .total_cmp(&cell_value[b])
                .then(cell_dim[a].cmp(&cell_dim[b]))
                .then(cell_vertex[a].cmp(&cell_vertex[b]))
                .then(a.cmp(&b))
        });
        let mut position = vec![0u32; n_cells];
        for (p, &c) in order.iter().enumerate() {
            position[c] = p as u32;
        }

        let mut boundary = Vec::with_capacity(n_cells);
        for &cell in &order {
            let mut rem = cell;
            for a in 0..rank {
                coord[a] = rem / dstride[a];
                rem %= dstride[a];
            }
            let mut col: Vec<u32> = Vec::with_capacity(2 * rank);
            for a in 0..rank {
                if coord[a] % 2 == 1 {
                    col.push(position[cell - dstride[a]]);
                    col.push(position[cell + dstride[a]]);
                }
            }
            col.sort_unstable();
            boundary.push(col);
        }

        Complex {
            value: order.iter().map(|&c| cell_value[c]).collect(),
            dim: order.iter().map(|&c| cell_dim[c]).collect(),
            critical_vertex: order.iter().map(|&c| cell_vertex[c]).collect(),
            boundary,
            max_dim: rank as u8,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }
}

/// Symmetric difference of two sorted columns.
fn add_columns(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

/// Persistence pairs as `(birth position, death position)` plus essential
/// positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Pairing {
    pub pairs: Vec<(u32, u32)>,
    pub essential: Vec<u32>,
}

fn reduce_column(j: usize, complex: &Complex, reduced: &[Vec<u32>], owner: &[u32], scratch: &mut Vec<u32>) -> Vec<u32> {
    let mut col = complex.boundary[j].clone();
    while let Some(&low) = col.last() {
        let o = owner[low as usize];
        if o == u32::MAX {
            break;
        }
        add_columns(&col, &reduced[o as usize], scratch);
        std::mem::swap(&mut col, scratch);
    }
    col
}

fn finish(complex: &Complex, owner: &[u32], reduced: &[Vec<u32>]) -> Pairing {
    let mut pairs = Vec::new();
    let mut essential = Vec::new();
    let mut killed = vec![false; complex.len()];
    for (low, &o) in owner.iter().enumerate() {
        if o != u32::MAX {
            pairs.push((low as u32, o));
            killed[low] = true;
        }
    }
    for j in 0..complex.len() {
        if !killed[j] && reduced[j].is_empty() {
            essential.push(j as u32);
        }
    }
    pairs.sort_unstable();
    Pairing { pairs, essential }
}

/// Textbook left-to-right column reduction.
pub(crate) fn reduce_naive(complex: &Complex) -> Pairing {
    let n = complex.len();
    let mut owner = vec![u32::MAX; n];
    let mut reduced: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut scratch = Vec::new();
    for j in 0..n {
        let col = reduce_column(j, complex, &reduced, &owner, &mut scratch);
        if let Some(&low) = col.last() {
            owner[low as usize] = j as u32;
        }
        reduced[j] = col;
    }
    finish(complex, &owner, &reduced)
}

/// Reduction by decreasing dimension with clearing: once a column of
/// dimension `k` has pivot `i`, column `i` is known to reduce to zero and is
/// skipped.
pub(crate) fn reduce_with_clearing(complex: &Complex) -> Pairing {
    let n = complex.len();
    let mut owner = vec![u32::MAX; n];
    let mut reduced: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut cleared = vec![false; n];
    let mut scratch = Vec::new();
    for k in (1..=complex.max_dim).rev() {
        for j in 0..n {
            if complex.dim[j] != k || cleared[j] {
                continue;
            }
            let col = reduce_column(j, complex, &reduced, &owner, &mut scratch);
            if let Some(&low) = col.last() {
                owner[low as usize] = j as u32;
                cleared[low as usize] = true;
            }
            reduced[j] = col;
        }
    }
    finish(complex, &owner, &reduced)
}

pub(crate) fn diagram_from_pairing(complex: &Complex, pairing: &Pairing, mode: FiltrationMode) -> PersistenceDiagram {
    let mut points = Vec::new();
    for &(b, d) in &pairing.pairs {
        let (b, d) = (b as usize, d as usize);
        if complex.value[d] > complex.value[b] {
            points.push(PersistencePoint {
                birth: complex.value[b],
                death: complex.value[d],
                dim: complex.dim[b],
                birth_vertex: complex.critical_vertex[b],
                death_vertex: Some(complex.critical_vertex[d]),
            });
        }
    }
    for &e in &pairing.essential {
        let e = e as usize;
        points.push(PersistencePoint {
            birth: complex.value[e],
            death: f64::INFINITY,
            dim: complex.dim[e],
            birth_vertex: complex.critical_vertex[e],
            death_vertex: None,
        });
    }
    points.sort_by(|a, b| {
        a.dim
            .cmp(&b.dim)
            .then(a.birth.total_cmp(&b.birth))
            .then(a.death.total_cmp(&b.death))
            .then(a.birth_vertex.cmp(&b.birth_vertex))
    });
    PersistenceDiagram { points, mode }
}

fn prepared(filtration: &CubicalFiltration) -> Complex {
    let values: Vec<f64> = match filtration.mode {
        FiltrationMode::Sublevel => filtration.values.clone(),
        FiltrationMode::Superlevel => filtration.values.iter().map(|v| -v).collect(),
    };
    Complex::build(&filtration.extents, &values)
}

/// Persistence diagram of a 1-, 2- or 3-dimensional grid.
///
/// Superlevel filtrations are computed as sublevel filtrations of the negated
/// values, and the diagram is reported in that negated scale so that
/// `death >= birth` holds for every point.
pub fn compute_persistence(filtration: &CubicalFiltration) -> PersistenceDiagram {
    let complex = prepared(filtration);
    let pairing = reduce_with_clearing(&complex);
    diagram_from_pairing(&complex, &pairing, filtration.mode)
}

/// Same result as [`compute_persistence`] through the unoptimised reduction.
pub fn compute_persistence_naive(filtration: &CubicalFiltration) -> PersistenceDiagram {
    let complex = prepared(filtration);
    let pairing = reduce_naive(&complex);
    diagram_from_pairing(&complex, &pairing, filtration.mode)
}
