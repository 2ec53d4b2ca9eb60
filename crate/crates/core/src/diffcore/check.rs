use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Tape gradient against central differences.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// `max |a - n| / max(|a|_inf, |n|_inf)` over all coordinates.
    pub max_rel_error: f64,
}

/// Checks the gradient of a scalar function of several tensors. `f` builds
/// the function on a tape from one leaf per input tensor.
pub fn finite_difference_check_many<F>(points: &[Tensor], h: f64, f: F) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().zip(points).map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape()))).collect();

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = pts.iter().map(|p| t.constant(p.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).item())
    };
    let mut work = points.to_vec();
    let mut numeric = Vec::with_capacity(points.len());
    for pi in 0..points.len() {
        let mut g = Tensor::zeros(points[pi].shape());
        for k in 0..points[pi].numel() {
            let x0 = points[pi].data()[k];
            work[pi].data_mut()[k] = x0 + h;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = x0 - h;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = x0;
            g.data_mut()[k] = (up - down) / (2.0 * h);
        }
        numeric.push(g);
    }
    let mut diff = 0.0f64;
    let mut scale = 1e-12f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (x, y) in a.data().iter().zip(n.data()) {
            diff = diff.max((x - y).abs());
        }
        scale = scale.max(a.max_abs()).max(n.max_abs());
    }
    Ok(FdReport { analytic, numeric, max_rel_error: diff / scale })
}

pub fn finite_difference_check<F>(point: &Tensor, h: f64, f: F) -> Result<FdReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_difference_check_many(std::slice::from_ref(point), h, |t, v| f(t, v[0]))
}
