use std::io::Write;
use std::path::PathBuf;

use pforvec::gen::{check_case, generate, GenConfig, Outcome};
use pforvec::graph::{serialize, Graph, Node};
use pforvec::interp::ExecOptions;
use pforvec::vectorize::{vectorize, Conv, Converter, Cx, IterCount, Policy, Registry, Vectorizer, Wrapped};

/// Iteration counts every generated body is checked at.
pub const ITERATION_COUNTS: [usize; 4] = [0, 1, 3, 7];

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub count: u64,
    pub gen: GenConfig,
    /// Print vectorizer routes for every graph.
    pub explain: bool,
    /// Write failing graphs here as `case-<k>.txt`.
    pub dump: Option<PathBuf>,
    pub exec: ExecOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub passed: u64,
    pub failed: u64,
    pub errors: u64,
}

impl VerifyReport {
    /// 0 if everything passed, 1 on a mismatch, 2 on an internal error.
    pub fn exit_code(&self) -> i32 {
        if self.errors > 0 {
            2
        } else if self.failed > 0 {
            1
        } else {
            0
        }
    }
}

pub fn run(opts: &VerifyOptions, out: &mut dyn Write) -> anyhow::Result<VerifyReport> {
    run_with(&Registry::standard(), opts, out)
}

/// Same as [`run`] with a custom converter registry.
pub fn run_with(registry: &Registry, opts: &VerifyOptions, out: &mut dyn Write) -> anyhow::Result<VerifyReport> {
    if let Some(dir) = &opts.dump {
        std::fs::create_dir_all(dir)?;
    }
    let mut report = VerifyReport::default();
    for k in 0..opts.count {
        let case = match generate(opts.seed, k, &opts.gen) {
            Ok(c) => c,
            Err(e) => {
                writeln!(out, "ERROR graph {k}: generator: {e}")?;
                report.errors += 1;
                continue;
            }
        };
        if opts.explain {
            match vectorize(&case.block, IterCount::Dynamic, Policy::default()) {
                Ok(v) => write!(out, "graph {k} routes:\n{}", v.diagnostics)?,
                Err(e) => writeln!(out, "graph {k} routes: {e}")?,
            }
        }
        let text = serialize(&case.graph);
        match check_case(&case, &ITERATION_COUNTS, registry, opts.exec) {
            Outcome::Pass => {
                report.passed += 1;
                writeln!(out, "PASS graph {k}")?;
            }
            Outcome::Mismatch(why) => {
                report.failed += 1;
                writeln!(out, "FAIL graph {k}: {why}")?;
                dump(opts, k, &text, &why, out)?;
            }
            Outcome::Error(why) => {
                report.errors += 1;
                writeln!(out, "ERROR graph {k}: {why}")?;
                dump(opts, k, &text, &why, out)?;
            }
        }
    }
    writeln!(out, "{} passed, {} failed, {} errors", report.passed, report.failed, report.errors)?;
    Ok(report)
}

fn dump(opts: &VerifyOptions, k: u64, text: &str, why: &str, out: &mut dyn Write) -> anyhow::Result<()> {
    write!(out, "{text}")?;
    if let Some(dir) = &opts.dump {
        std::fs::write(dir.join(format!("case-{k}.txt")), format!("# {why}\n{text}"))?;
    }
    Ok(())
}

fn off_by_one(v: &mut Vectorizer, out: &mut Graph, cx: &Cx, node: &Node, ins: &[Wrapped]) -> pforvec::vectorize::Result<Conv> {
    let standard = Registry::standard();
    let good = standard.get(node.op.kind()).expect("fault injected over a registered kind");
    let Conv::Done(mut ws) = good(v, out, cx, node, ins)? else {
        return Ok(Conv::Unsupported("wrapped converter declined".into()));
    };
    if let Some(w) = ws.first_mut() {
        let x = v.materialize(out, cx, w)?;
        let one = out.constant(pforvec::tensor::TensorValue::scalar_f64(1.0))?;
        let bad = out.add(x, one)?;
        *w = Wrapped::stacked(bad, w.ty.clone());
    }
    Ok(Conv::Done(ws))
}

/// The standard registry with the converter for `kind` replaced by one
/// whose first output is off by one. Only for f64-valued kinds.
pub fn faulty_registry(kind: pforvec::graph::OpKind) -> Registry {
    let mut r = Registry::standard();
    r.insert(kind, off_by_one as Converter);
    r
}
