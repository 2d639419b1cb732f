//! End-to-end acceptance checks, one line per criterion.
//! `PFORVEC_BLESS=1` rewrites the golden converter outputs in `tests/golden/`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use pforvec::apps::numeric::{max_relative_error, numeric_jacobian};
use pforvec::apps::{jacobian, jacobian_with, per_example_gradients, pfor, PforMode};
use pforvec::autodiff::gradient;
use pforvec::gen::{check_case, generate, GenConfig, Outcome, Weights};
use pforvec::graph::{deserialize, serialize, Graph, GraphError, NodeId, Op, OpKind, ParforBlock, ValueRef};
use pforvec::interp::{execute_fragment, execute_parfor_simd, execute_with, ExecOptions, ExecResult, Feeds, RngState, VariableStore};
use pforvec::models::Model;
use pforvec::tensor::{binary, gather_rows, BinaryOp, DType, TensorValue, UnaryOp};
use pforvec::vectorize::{vectorize, IterCount, Policy, Registry, Route};
use pforvec_cli::bench::{self, BenchModel, Mode};
use pforvec_cli::verify::{self, VerifyOptions};

type Check = Result<Verdict, String>;

enum Verdict {
    Pass,
    Warn(String),
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn seq(dims: &[usize], scale: f64) -> TensorValue {
    let k: usize = dims.iter().product();
    TensorValue::f64(dims, (0..k).map(|v| ((v * 7 % 11) as f64 * 0.23 - 1.1) * scale).collect())
}

fn run_counted(g: &Graph, feeds: &Feeds, fetch: &[ValueRef]) -> ExecResult {
    let mut st = VariableStore::from_initial(g.variables());
    execute_with(g, feeds, fetch, &mut st, &mut RngState::new(0), ExecOptions::default()).unwrap()
}

fn run(g: &Graph, feeds: &Feeds, fetch: &[ValueRef]) -> Vec<TensorValue> {
    run_counted(g, feeds, fetch).outputs
}

fn feed(name: &str, v: TensorValue) -> Feeds {
    [(name.to_string(), v)].into_iter().collect()
}

type Body = dyn Fn(&mut Graph, ValueRef, &[ValueRef]) -> Result<Vec<ValueRef>, GraphError>;

fn block(caps: &[TensorValue], body: &Body) -> ParforBlock {
    let mut g = Graph::new();
    let cs: Vec<ValueRef> = caps.iter().map(|c| g.constant(c.clone()).unwrap()).collect();
    let n = g.scalar_i64(1).unwrap();
    g.parfor(n, &cs, |b, i, p| body(b, i, p)).unwrap();
    let Op::Parfor(p) = &g.node(NodeId(g.len() - 1)).op else { panic!("not a parfor") };
    (**p).clone()
}

fn run_block(b: &ParforBlock, n: usize, caps: &[TensorValue], iters: IterCount) -> (ExecResult, ExecResult) {
    let v = vectorize(b, iters, Policy::default()).unwrap();
    let mut params = vec![TensorValue::scalar_i64(n as i64)];
    params.extend(caps.iter().cloned());
    let got = execute_fragment(&v.graph, &params, &mut VariableStore::new(), &mut RngState::new(0), ExecOptions::default()).unwrap();
    let want = execute_parfor_simd(b, n, caps, &mut VariableStore::new(), &mut RngState::new(0)).unwrap();
    (got, ExecResult { outputs: want, dispatch_count: 0 })
}

fn same(got: &[TensorValue], want: &[TensorValue], tol: f64) -> Result<(), String> {
    ensure(got.len() == want.len(), || format!("{} outputs, expected {}", got.len(), want.len()))?;
    for (k, (a, b)) in got.iter().zip(want).enumerate() {
        ensure(a.shape() == b.shape() && a.all_close(b, tol), || format!("output {k}: {a} vs {b}"))?;
    }
    Ok(())
}

fn random_verification() -> Check {
    let opts = VerifyOptions {
        seed: 42,
        count: 200,
        gen: GenConfig { max_depth: 8, ..GenConfig::default() },
        explain: false,
        dump: None,
        exec: ExecOptions { budget: Some(pforvec_cli::DEFAULT_STEP_BUDGET) },
    };
    let mut out = Vec::new();
    let r = verify::run(&opts, &mut out).map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out);
    ensure(r.passed == 200 && r.exit_code() == 0, || {
        format!("{} passed, {} failed, {} errors; first: {}", r.passed, r.failed, r.errors, text.lines().find(|l| !l.starts_with("PASS")).unwrap_or(""))
    })?;
    Ok(Verdict::Pass)
}

struct Example {
    name: &'static str,
    caps: Vec<TensorValue>,
    n: usize,
    body: Box<Body>,
    /// Op kinds the converted graph must not contain.
    absent: &'static [OpKind],
}

fn examples() -> Vec<Example> {
    vec![
        Example {
            name: "gather_identity",
            caps: vec![seq(&[6, 4], 1.0)],
            n: 6,
            body: Box::new(|b, i, p| Ok(vec![b.gather_rows(p[0], i)?])),
            absent: &[OpKind::GatherRows],
        },
        Example {
            name: "invariant_matmul",
            caps: vec![seq(&[5, 2, 3], 1.0), seq(&[3, 4], 0.5)],
            n: 5,
            body: Box::new(|b, i, p| {
                let a = b.gather_rows(p[0], i)?;
                Ok(vec![b.matmul(a, p[1])?])
            }),
            absent: &[OpKind::Parfor, OpKind::While],
        },
        Example {
            name: "conv2d_batch_fold",
            caps: vec![seq(&[3, 2, 5, 5, 2], 0.1), seq(&[3, 3, 2, 3], 0.2)],
            n: 3,
            body: Box::new(|b, i, p| {
                let x = b.gather_rows(p[0], i)?;
                Ok(vec![b.conv2d(x, p[1])?])
            }),
            absent: &[OpKind::Parfor, OpKind::While],
        },
        Example {
            name: "reduce_sum_axes",
            caps: vec![seq(&[4, 2, 3], 1.0)],
            n: 4,
            body: Box::new(|b, i, p| {
                let a = b.gather_rows(p[0], i)?;
                Ok(vec![b.reduce_sum(a, &[0])?, b.reduce_sum(a, &[-1])?])
            }),
            absent: &[OpKind::Parfor, OpKind::While],
        },
        Example {
            name: "concat_axis_shift",
            caps: vec![seq(&[4, 2, 3], 1.0), seq(&[1, 3], 0.5)],
            n: 4,
            body: Box::new(|b, i, p| {
                let a = b.gather_rows(p[0], i)?;
                Ok(vec![b.concat(&[a, p[1]], 0)?])
            }),
            absent: &[OpKind::Parfor, OpKind::While],
        },
        Example {
            name: "broadcast_reshape",
            caps: vec![seq(&[3, 4], 1.0), seq(&[5, 4], 0.3)],
            n: 5,
            body: Box::new(|b, i, p| {
                let y = b.gather_rows(p[1], i)?;
                Ok(vec![b.add(p[0], y)?])
            }),
            absent: &[OpKind::Parfor, OpKind::While],
        },
    ]
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn converter_examples() -> Check {
    // rows of two matrices: sum and difference
    let a = seq(&[10, 20], 1.0);
    let b = seq(&[10, 20], -0.5);
    let mut g = Graph::new();
    let (ca, cb) = (g.constant(a.clone()).unwrap(), g.constant(b.clone()).unwrap());
    let n = g.scalar_i64(10).unwrap();
    let outs = pfor(&mut g, n, &[ca, cb], |b, i, p| {
        let x = b.gather_rows(p[0], i)?;
        let y = b.gather_rows(p[1], i)?;
        Ok(vec![b.add(x, y)?, b.sub(x, y)?])
    })
    .map_err(|e| e.to_string())?;
    let got = run(&g, &Feeds::new(), &outs);
    let want = [binary(BinaryOp::Add, &a, &b).unwrap(), binary(BinaryOp::Sub, &a, &b).unwrap()];
    ensure(got[0] == want[0] && got[1] == want[1], || "gather/add/sub does not give a+b and a-b".into())?;

    let bless = std::env::var_os("PFORVEC_BLESS").is_some();
    for ex in examples() {
        let blk = block(&ex.caps, &*ex.body);
        let v = vectorize(&blk, IterCount::Static(ex.n), Policy::default()).map_err(|e| format!("{}: {e}", ex.name))?;
        ensure(v.diagnostics.count(Route::Fallback) == 0, || format!("{}: fell back", ex.name))?;
        for kind in ex.absent {
            ensure(v.graph.nodes().iter().all(|n| n.op.kind() != *kind), || format!("{}: still has {kind:?}", ex.name))?;
        }
        let text = serialize(&v.graph);
        let path = golden_dir().join(format!("{}.txt", ex.name));
        if bless {
            std::fs::write(&path, &text).unwrap();
        }
        let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(text == golden, || format!("{}: converted graph differs from golden\n{text}", ex.name))?;
        let reparsed = deserialize(&golden).map_err(|e| format!("{}: {e}", ex.name))?;
        ensure(serialize(&reparsed) == golden, || format!("{}: golden text is not a fixed point", ex.name))?;
        for iters in [IterCount::Static(ex.n), IterCount::Dynamic] {
            let (got, want) = run_block(&blk, ex.n, &ex.caps, iters);
            same(&got.outputs, &want.outputs, 1e-9).map_err(|e| format!("{} {iters:?}: {e}", ex.name))?;
        }
    }
    Ok(Verdict::Pass)
}

fn control_flow() -> Check {
    let cond = block(&[], &|b, i, _| {
        let two = b.scalar_i64(2)?;
        let c = b.less(i, two)?;
        b.cond(
            c,
            &[i],
            |t, q| {
                let two = t.scalar_i64(2)?;
                Ok(vec![t.mul(two, q[0])?])
            },
            |e, q| {
                let ten = e.scalar_i64(10)?;
                Ok(vec![e.add(q[0], ten)?])
            },
        )
    });
    let looped = block(&[], &|b, i, _| {
        let r0 = b.scalar_i64(0)?;
        b.while_loop(
            &[r0],
            &[i],
            |c, q| Ok(vec![c.less(q[0], q[1])?]),
            |c, q| {
                let one = c.scalar_i64(1)?;
                Ok(vec![c.add(q[0], one)?])
            },
        )
    });
    for iters in [IterCount::Static(4), IterCount::Dynamic] {
        let (got, want) = run_block(&cond, 4, &[], iters);
        ensure(got.outputs[0] == TensorValue::vec_i64(vec![0, 2, 12, 13]), || format!("cond gave {}", got.outputs[0]))?;
        same(&got.outputs, &want.outputs, 0.0)?;
    }
    for iters in [IterCount::Static(5), IterCount::Dynamic] {
        let (got, want) = run_block(&looped, 5, &[], iters);
        ensure(got.outputs[0] == TensorValue::vec_i64(vec![0, 1, 2, 3, 4]), || format!("while gave {}", got.outputs[0]))?;
        same(&got.outputs, &want.outputs, 0.0)?;
    }
    Ok(Verdict::Pass)
}

fn jacobians() -> Check {
    // x ⊙ x
    let mut g = Graph::new();
    let x = g.placeholder("x", DType::F64, [3]).unwrap();
    let y = g.mul(x, x).unwrap();
    let j = jacobian(&mut g, y, x).map_err(|e| e.to_string())?;
    let got = run(&g, &feed("x", TensorValue::vec_f64(vec![1.0, 2.0, 3.0])), &[j]).remove(0);
    let want = TensorValue::f64(&[3, 3], vec![2.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 6.0]);
    ensure(got.all_close(&want, 1e-12), || format!("diag: {got}"))?;

    // MLP against central differences
    let m = Model::mlp(5, 8, 16, 10);
    let mut g = Graph::new();
    let x = g.placeholder("x", DType::F64, [8]).unwrap();
    let ps = m.constants(&mut g).unwrap();
    let y = m.forward(&mut g, x, &ps).unwrap();
    let j = jacobian(&mut g, y, x).map_err(|e| e.to_string())?;
    let f = feed("x", seq(&[8], 0.9));
    let analytic = run(&g, &f, &[j]).remove(0);
    let numeric = numeric_jacobian(&g, &f, y, "x", 1e-6).map_err(|e| e.to_string())?;
    let err = max_relative_error(&analytic, &numeric, 1e-8);
    ensure(err <= 1e-4, || format!("mlp relative error {err}"))?;

    // dispatch counts across output sizes
    let count = |mo: usize, mode: PforMode| {
        let m = Model::mlp(5, 8, 16, mo);
        let mut g = Graph::new();
        let x = g.placeholder("x", DType::F64, [8]).unwrap();
        let ps = m.constants(&mut g).unwrap();
        let y = m.forward(&mut g, x, &ps).unwrap();
        let j = jacobian_with(&mut g, y, x, mode).unwrap().outputs[0];
        run_counted(&g, &feed("x", seq(&[8], 1.0)), &[j]).dispatch_count
    };
    let ms = [4, 16, 64];
    let v: Vec<u64> = ms.iter().map(|&mo| count(mo, PforMode::default())).collect();
    ensure(v.iter().all(|&c| c == v[0]), || format!("vectorized dispatch varies with m: {v:?}"))?;
    let fb = PforMode::Vectorize(Policy { force_fallback: true, ..Policy::default() });
    let f: Vec<u64> = ms.iter().map(|&mo| count(mo, fb)).collect();
    // linear in m: per-output cost roughly constant
    let per: Vec<f64> = f.iter().zip(&ms).map(|(&c, &mo)| c as f64 / mo as f64).collect();
    ensure(f.windows(2).all(|w| w[1] > w[0]) && per[2] / per[1] < 1.5 && per[2] / per[1] > 0.67, || format!("fallback dispatch {f:?}"))?;
    Ok(Verdict::Pass)
}

fn per_example() -> Check {
    let batch = 8;
    let m = Model::mnist_like(11);
    let xs = m.inputs(batch, 2);
    let ys = m.targets(batch, 2);
    let mut g = Graph::new();
    let cx = g.constant(xs.clone()).unwrap();
    let cy = g.constant(ys.clone()).unwrap();
    let ps = m.constants(&mut g).unwrap();
    let np = ps.len();
    let mut caps = ps.clone();
    caps.extend([cx, cy]);
    let wrt: Vec<usize> = (0..np).collect();
    let n = g.scalar_i64(batch as i64).unwrap();
    let per = per_example_gradients(&mut g, n, &caps, &wrt, |b, i, p| {
        let x = b.gather_rows(p[np], i)?;
        let y = b.gather_rows(p[np + 1], i)?;
        Ok(m.loss(b, x, y, &p[..np])?)
    })
    .map_err(|e| e.to_string())?;
    let per = run(&g, &Feeds::new(), &per);

    let mut h = Graph::new();
    let hp = m.constants(&mut h).unwrap();
    let hx = h.constant(xs).unwrap();
    let hy = h.constant(ys).unwrap();
    let mut losses = vec![];
    let mut separate = vec![];
    for k in 0..batch {
        let idx = h.scalar_i64(k as i64).unwrap();
        let x = h.gather_rows(hx, idx).unwrap();
        let y = h.gather_rows(hy, idx).unwrap();
        let l = m.loss(&mut h, x, y, &hp).unwrap();
        separate.extend(gradient(&mut h, l, &hp).unwrap());
        losses.push(l);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = h.add(total, l).unwrap();
    }
    let summed = gradient(&mut h, total, &hp).unwrap();
    let mut fetch = separate;
    fetch.extend(summed);
    let out = run(&h, &Feeds::new(), &fetch);
    for k in 0..batch {
        for p in 0..np {
            let got = gather_rows(&per[p], &TensorValue::scalar_i64(k as i64)).unwrap();
            ensure(got.all_close(&out[k * np + p], 1e-9), || format!("example {k} param {p}"))?;
        }
    }
    for p in 0..np {
        let s = pforvec::tensor::reduce_sum(&per[p], &[0]).unwrap();
        ensure(s.all_close(&out[batch * np + p], 1e-9), || format!("sum of per-example gradients, param {p}"))?;
    }

    let counts: Vec<u64> = [1, 8, 32]
        .iter()
        .map(|&b| bench::run(BenchModel::PerExampleGrad, Mode::Vectorized, b, 0, ExecOptions::default()).map(|r| r.dispatch_count))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(counts.iter().all(|&c| c == counts[0]), || format!("vectorized dispatch varies with batch: {counts:?}"))?;
    Ok(Verdict::Pass)
}

fn best_time(mode: Mode, batch: usize) -> Result<(f64, u64), String> {
    let p = bench::prepare(BenchModel::Linear, mode, batch).map_err(|e| e.to_string())?;
    let mut best = f64::INFINITY;
    let mut dispatch = 0;
    for _ in 0..5 {
        let mut st = VariableStore::from_initial(p.graph.variables());
        let t = Instant::now();
        let r = execute_with(&p.graph, &p.feeds, &p.fetch, &mut st, &mut RngState::new(0), ExecOptions::default()).map_err(|e| e.to_string())?;
        best = best.min(t.elapsed().as_secs_f64());
        dispatch = r.dispatch_count;
    }
    Ok((best, dispatch))
}

fn throughput() -> Check {
    let batches = [1usize, 16, 256];
    let mut ratios = vec![];
    let mut fallback_dispatch = vec![];
    let mut vector_dispatch = vec![];
    for &b in &batches {
        let (tv, dv) = best_time(Mode::Vectorized, b)?;
        let (tf, df) = best_time(Mode::FallbackLoop, b)?;
        ratios.push(tf / tv);
        vector_dispatch.push(dv);
        fallback_dispatch.push(df);
    }
    ensure(vector_dispatch.iter().all(|&d| d == vector_dispatch[0]), || format!("vectorized dispatch {vector_dispatch:?}"))?;
    ensure(fallback_dispatch.windows(2).all(|w| w[1] > w[0]), || format!("fallback dispatch {fallback_dispatch:?}"))?;
    ensure(ratios[2] > ratios[0], || format!("speedup does not grow with batch: {ratios:?}"))?;
    if ratios[2] >= 5.0 {
        Ok(Verdict::Pass)
    } else {
        Ok(Verdict::Warn(format!("speedup at batch 256 is {:.2}x (< 5x); ratios {ratios:?}", ratios[2])))
    }
}

fn properties() -> Check {
    let registry = Registry::standard();
    let deep = GenConfig { max_depth: 6, ..GenConfig::default() };
    for k in 0..100 {
        let c = generate(7, k, &deep).map_err(|e| e.to_string())?;
        let text = serialize(&c.graph);
        let back = deserialize(&text).map_err(|e| format!("case {k}: {e}"))?;
        ensure(serialize(&back) == text, || format!("case {k}: serialization is not a fixed point"))?;
        match check_case(&c, &[0, 1, 3, 7], &registry, ExecOptions::default()) {
            Outcome::Pass => {}
            Outcome::Mismatch(m) | Outcome::Error(m) => return Err(format!("case {k}: {m}")),
        }
    }
    // no control flow: dispatch count does not depend on n
    let flat = GenConfig { weights: Weights { control: 0, ..Weights::default() }, ..deep };
    for k in 0..30 {
        let c = generate(8, k, &flat).map_err(|e| e.to_string())?;
        let v = vectorize(&c.block, IterCount::Dynamic, Policy::default()).map_err(|e| e.to_string())?;
        let counts: Vec<u64> = [1usize, 4, 7]
            .iter()
            .map(|&n| {
                let mut params = vec![TensorValue::scalar_i64(n as i64)];
                params.extend(c.captures.iter().cloned());
                execute_fragment(&v.graph, &params, &mut c.variable_store(), &mut RngState::new(1), ExecOptions::default())
                    .map(|r| r.dispatch_count)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure(counts.iter().all(|&d| d == counts[0]), || format!("case {k}: dispatch {counts:?}"))?;
    }
    // iteration-independent shapes check against a tanh chain
    let blk = block(&[seq(&[7, 3], 1.0)], &|b, i, p| {
        let r = b.gather_rows(p[0], i)?;
        Ok(vec![b.unary(UnaryOp::Tanh, r)?])
    });
    let (got, want) = run_block(&blk, 7, &[seq(&[7, 3], 1.0)], IterCount::Dynamic);
    same(&got.outputs, &want.outputs, 1e-12)?;
    Ok(Verdict::Pass)
}

fn main() {
    let criteria: [(&str, fn() -> Check); 7] = [
        ("random graph verification (seed 42, 200 graphs, depth 8)", random_verification),
        ("converter examples and golden forms", converter_examples),
        ("cond and while examples", control_flow),
        ("jacobians", jacobians),
        ("per-example gradients of the conv model", per_example),
        ("linear model throughput", throughput),
        ("property checks", properties),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match verdict {
            Ok(Verdict::Pass) => println!("PASS {}: {name}", k + 1),
            Ok(Verdict::Warn(why)) => println!("WARN {}: {name}: {why}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}: {name}: {why}", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
