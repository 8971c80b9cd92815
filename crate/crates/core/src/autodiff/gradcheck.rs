//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval_scalar(graph: &Graph<f64>, v: Var, label: &str) -> Result<f64> {
    if graph.value(v).len() != 1 {
        return Err(Error::NonScalarLoss(graph.shape(v).to_vec()));
    }
    let y = graph.scalar(v);
    if !y.is_finite() {
        return Err(Error::NonFinite {
            op: label.to_string(),
        });
    }
    Ok(y)
}

/// Largest `|analytic − central difference| / max(1, |analytic|)` over every
/// coordinate of `x`, where `f` builds a scalar from a leaf holding `x`.
pub fn gradcheck<F>(f: F, x: &[f64], shape: &[usize], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaf = g.leaf(x.to_vec(), shape)?;
    let out = f(&mut g, leaf)?;
    eval_scalar(&g, out, "gradcheck base point")?;
    let analytic = g.backward(out)?.wrt(&g, leaf);

    let probe = |values: Vec<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(values, shape)?;
        let out = f(&mut g, leaf)?;
        eval_scalar(&g, out, "gradcheck probe")
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        let numeric = (probe(plus)? - probe(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Outcome of [`gradcheck_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheckReport {
    pub max_relative_error: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates_checked: usize,
}

/// Finite-difference check of a loss w.r.t. stored parameters. At most
/// `per_param` evenly spaced coordinates of each tensor are probed.
pub fn gradcheck_params<F>(
    store: &ParamStore<f64>,
    f: F,
    h: f64,
    per_param: usize,
) -> Result<ParamCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    eval_scalar(&g, out, "gradcheck base point")?;
    let analytic = g.backward(out)?.params(store);

    let mut report = ParamCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates_checked: 0,
    };
    let mut work = store.clone();
    for (id, p) in store.iter() {
        let n = p.values.len();
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|i| i * n / per_param).collect()
        };
        for i in picks {
            let orig = p.values[i];
            work.get_mut(id).values[i] = orig + h;
            let mut gp = Graph::new();
            let op = f(&mut gp, &work)?;
            let fp = eval_scalar(&gp, op, "gradcheck probe")?;
            work.get_mut(id).values[i] = orig - h;
            let mut gm = Graph::new();
            let om = f(&mut gm, &work)?;
            let fm = eval_scalar(&gm, om, "gradcheck probe")?;
            work.get_mut(id).values[i] = orig;
            let err = relative_error(analytic[id.0][i], (fp - fm) / (2.0 * h));
            report.coordinates_checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = p.name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
