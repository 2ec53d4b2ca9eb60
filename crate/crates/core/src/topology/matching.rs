//! Optimal partial matchings between persistence diagrams.

/// Exact minimum-cost assignment for a square cost matrix (Hungarian method
/// with row/column potentials). Returns `assignment[row] = col`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == n));
    let inf = f64::INFINITY;
    // 1-based potentials; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Squared distance from `(b, d)` to its diagonal projection.
pub fn diagonal_cost(p: (f64, f64)) -> f64 {
    let h = p.1 - p.0;
    0.5 * h * h
}

pub fn pair_cost(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (db, dd) = (a.0 - b.0, a.1 - b.1);
    db * db + dd * dd
}

/// A partial matching between two point lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `matched_to[i] = Some(j)` pairs `a[i]` with `b[j]`.
    pub matched_to: Vec<Option<usize>>,
    /// Points of `b` left to the diagonal.
    pub unmatched_b: Vec<usize>,
}

impl Matching {
    /// Sum of squared matching costs, accumulated over `a` in order and then
    /// over unmatched `b` in order.
    pub fn cost(&self, a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        let mut total = 0.0;
        for (i, m) in self.matched_to.iter().enumerate() {
            total += match m {
                Some(j) => pair_cost(a[i], b[*j]),
                None => diagonal_cost(a[i]),
            };
        }
        for &j in &self.unmatched_b {
            total += diagonal_cost(b[j]);
        }
        total
    }
}

/// Optimal matching where unmatched points go to their diagonal projection.
///
/// Solved exactly on the `(|a| + |b|)`-square augmented matrix: real-to-real
/// entries hold pair costs, each real point may instead take any diagonal
/// slot at its diagonal cost, and diagonal-to-diagonal entries cost nothing.
pub fn optimal_matching(a: &[(f64, f64)], b: &[(f64, f64)]) -> Matching {
    let (n, m) = (a.len(), b.len());
    let size = n + m;
    let mut cost = vec![vec![0.0; size]; size];
    for i in 0..n {
        for j in 0..m {
            cost[i][j] = pair_cost(a[i], b[j]);
        }
        let dc = diagonal_cost(a[i]);
        for j in m..size {
            cost[i][j] = dc;
        }
    }
    for j in 0..m {
        let dc = diagonal_cost(b[j]);
        for row in cost.iter_mut().skip(n) {
            row[j] = dc;
        }
    }
    let assign = min_cost_assignment(&cost);
    let matched_to: Vec<Option<usize>> = (0..n).map(|i| (assign[i] < m).then_some(assign[i])).collect();
    let mut taken = vec![false; m];
    for j in matched_to.iter().flatten() {
        taken[*j] = true;
    }
    let unmatched_b = (0..m).filter(|&j| !taken[j]).collect();
    Matching { matched_to, unmatched_b }
}
