//! Central finite differences, the reference for gradient checks.

use crate::graph::{Graph, ValueRef};
use crate::interp::{execute_with, ExecError, ExecOptions, Feeds, RngState, VariableStore};
use crate::tensor::{Buffer, TensorValue};

fn eval(g: &Graph, feeds: &Feeds, output: ValueRef) -> Result<TensorValue, ExecError> {
    let mut store = VariableStore::from_initial(g.variables());
    let r = execute_with(g, feeds, &[output], &mut store, &mut RngState::new(0), ExecOptions::default())?;
    Ok(r.outputs.into_iter().next().expect("one fetch"))
}

/// d`output`/d(feed `name`) with shape `output.shape + input.shape`.
pub fn numeric_jacobian(g: &Graph, feeds: &Feeds, output: ValueRef, name: &str, step: f64) -> Result<TensorValue, ExecError> {
    let x = feeds.get(name).ok_or_else(|| ExecError::MissingFeed(name.to_string()))?.clone();
    let base = x.to_f64_vec();
    let y0 = eval(g, feeds, output)?;
    let (m, k) = (y0.numel(), base.len());
    let mut jac = vec![0.0; m * k];
    let mut f = feeds.clone();
    for j in 0..k {
        let mut probe = |delta: f64| -> Result<Vec<f64>, ExecError> {
            let mut v = base.clone();
            v[j] += delta;
            f.insert(name.to_string(), TensorValue::new(x.shape().clone(), Buffer::F64(v)).expect("same shape"));
            Ok(eval(g, &f, output)?.to_f64_vec())
        };
        let hi = probe(step)?;
        let lo = probe(-step)?;
        for i in 0..m {
            jac[i * k + j] = (hi[i] - lo[i]) / (2.0 * step);
        }
    }
    let mut dims = y0.dims().to_vec();
    dims.extend_from_slice(x.dims());
    Ok(TensorValue::f64(&dims, jac))
}

/// Largest relative error between `analytic` and `numeric`, over entries
/// where either magnitude exceeds `floor`.
pub fn max_relative_error(analytic: &TensorValue, numeric: &TensorValue, floor: f64) -> f64 {
    let (a, n) = (analytic.to_f64_vec(), numeric.to_f64_vec());
    a.iter()
        .zip(&n)
        .filter(|(x, y)| x.abs() > floor || y.abs() > floor)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()))
        .fold(0.0, f64::max)
}
