use std::io::Write;
use std::str::FromStr;

use anyhow::bail;
use pforvec::apps::numeric::{max_relative_error, numeric_jacobian};
use pforvec::apps::{jacobian, map_fn, per_example_gradients};
use pforvec::autodiff::gradient;
use pforvec::graph::{Graph, ValueRef};
use pforvec::interp::{execute_with, ExecOptions, Feeds, RngState, VariableStore};
use pforvec::tensor::{reduce_sum, DType, TensorValue, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demo {
    Jacobian,
    PerExample,
    Map,
}

impl FromStr for Demo {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "jacobian" => Ok(Demo::Jacobian),
            "per_example" => Ok(Demo::PerExample),
            "map" => Ok(Demo::Map),
            _ => bail!("unknown demo {s:?}; expected jacobian, per_example or map"),
        }
    }
}

fn eval(g: &Graph, feeds: &Feeds, fetch: &[ValueRef], opts: ExecOptions) -> anyhow::Result<Vec<TensorValue>> {
    let mut st = VariableStore::from_initial(g.variables());
    Ok(execute_with(g, feeds, fetch, &mut st, &mut RngState::new(0), opts)?.outputs)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Run one demo; returns whether its check passed.
pub fn run(demo: Demo, opts: ExecOptions, out: &mut dyn Write) -> anyhow::Result<bool> {
    match demo {
        Demo::Jacobian => {
            let xs = TensorValue::vec_f64(vec![1.0, 2.0, 3.0]);
            let mut g = Graph::new();
            let x = g.placeholder("x", DType::F64, [3])?;
            let y = g.mul(x, x)?;
            let j = jacobian(&mut g, y, x)?;
            let feeds: Feeds = [("x".to_string(), xs.clone())].into();
            let got = eval(&g, &feeds, &[j], opts)?.remove(0);
            let want = TensorValue::f64(&[3, 3], vec![2.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 6.0]);
            let fd = numeric_jacobian(&g, &feeds, y, "x", 1e-6)?;
            let ok = got.all_close(&want, 1e-12) && max_relative_error(&got, &fd, 1e-8) <= 1e-4;
            writeln!(out, "f(x) = x * x")?;
            writeln!(out, "x = {xs}")?;
            writeln!(out, "jacobian = {got}")?;
            writeln!(out, "expected diag(2x) = {want}")?;
            writeln!(out, "verdict: {}", verdict(ok))?;
            Ok(ok)
        }
        Demo::PerExample => {
            let batch = 4;
            let xs = TensorValue::f64(&[batch, 3], (0..batch * 3).map(|v| v as f64 * 0.5 - 2.0).collect());
            let ws = TensorValue::vec_f64(vec![0.3, -0.2, 0.1]);
            let mut g = Graph::new();
            let cx = g.constant(xs.clone())?;
            let w = g.placeholder("w", DType::F64, [3])?;
            let n = g.scalar_i64(batch as i64)?;
            let per = per_example_gradients(&mut g, n, &[w, cx], &[0], |b, i, p| {
                let x = b.gather_rows(p[1], i)?;
                let d = b.mul(p[0], x)?;
                let d = b.reduce_sum(d, &[0])?;
                Ok(b.unary(UnaryOp::Square, d)?)
            })?[0];
            let d = g.mul(cx, w)?;
            let d = g.reduce_sum(d, &[1])?;
            let sq = g.unary(UnaryOp::Square, d)?;
            let total = g.reduce_sum(sq, &[0])?;
            let whole = gradient(&mut g, total, &[w])?[0];
            let feeds: Feeds = [("w".to_string(), ws.clone())].into();
            let got = eval(&g, &feeds, &[per, whole], opts)?;
            let sum = reduce_sum(&got[0], &[0])?;
            let ok = sum.all_close(&got[1], 1e-9);
            writeln!(out, "loss_i = (w . x_i)^2, w = {ws}")?;
            for (k, row) in got[0].to_f64_vec().chunks(3).enumerate() {
                writeln!(out, "grad[{k}] = {row:?}")?;
            }
            writeln!(out, "sum of per-example gradients = {sum}")?;
            writeln!(out, "gradient of summed loss      = {}", got[1])?;
            writeln!(out, "verdict: {}", verdict(ok))?;
            Ok(ok)
        }
        Demo::Map => {
            let xs = TensorValue::f64(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
            let mut g = Graph::new();
            let x = g.placeholder("x", DType::F64, [2, 2])?;
            let y = map_fn(&mut g, x, &[], |_, row, _| Ok(vec![row]))?[0];
            let feeds: Feeds = [("x".to_string(), xs.clone())].into();
            let got = eval(&g, &feeds, &[y], opts)?.remove(0);
            let ok = got == xs;
            writeln!(out, "map_fn(identity, x)")?;
            writeln!(out, "x      = {xs}")?;
            writeln!(out, "result = {got}")?;
            writeln!(out, "verdict: {}", verdict(ok))?;
            Ok(ok)
        }
    }
}
