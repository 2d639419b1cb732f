use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context};
use pforvec::apps::{jacobian_with, map_fn_with, per_example_gradients_with, PforMode};
use pforvec::graph::{Graph, ValueRef};
use pforvec::interp::{execute_with, ExecOptions, Feeds, RngState, VariableStore};
use pforvec::models::Model;
use pforvec::tensor::{DType, TensorValue};
use pforvec::vectorize::Policy;

pub const CSV_HEADER: [&str; 6] = ["model", "mode", "batch", "wall_time_s", "dispatch_count", "throughput"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchModel {
    Linear,
    MnistLike,
    LstmUnrolled,
    PerExampleGrad,
    /// `batch` is the number of outputs, i.e. jacobian rows.
    Jacobian,
}

impl BenchModel {
    pub const ALL: [BenchModel; 5] =
        [BenchModel::Linear, BenchModel::MnistLike, BenchModel::LstmUnrolled, BenchModel::PerExampleGrad, BenchModel::Jacobian];

    pub fn name(self) -> &'static str {
        match self {
            BenchModel::Linear => "linear",
            BenchModel::MnistLike => "mnist_like",
            BenchModel::LstmUnrolled => "lstm_unrolled",
            BenchModel::PerExampleGrad => "per_example_grad",
            BenchModel::Jacobian => "jacobian",
        }
    }
}

impl fmt::Display for BenchModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchModel {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match BenchModel::ALL.iter().find(|m| m.name() == s) {
            Some(m) => Ok(*m),
            None => bail!("unknown model {s:?}; expected one of linear, mnist_like, lstm_unrolled, per_example_grad, jacobian"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Vectorized,
    FallbackLoop,
    /// The parfor left in place for the lock-step interpreter.
    Oracle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Vectorized => "vectorized",
            Mode::FallbackLoop => "fallback_loop",
            Mode::Oracle => "oracle",
        }
    }

    fn pfor(self) -> PforMode {
        match self {
            Mode::Vectorized => PforMode::Vectorize(Policy::default()),
            Mode::FallbackLoop => PforMode::Vectorize(Policy { force_fallback: true, ..Policy::default() }),
            Mode::Oracle => PforMode::Keep,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "vectorized" => Ok(Mode::Vectorized),
            "fallback_loop" => Ok(Mode::FallbackLoop),
            "oracle" => Ok(Mode::Oracle),
            _ => bail!("unknown mode {s:?}; expected vectorized, fallback_loop or oracle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub model: BenchModel,
    pub mode: Mode,
    pub batch: usize,
    pub wall_time_s: f64,
    pub dispatch_count: u64,
    /// Items per second over all timed repeats.
    pub throughput: f64,
}

/// A graph ready to run: feeds and the values to fetch.
pub struct Prepared {
    pub graph: Graph,
    pub feeds: Feeds,
    pub fetch: Vec<ValueRef>,
}

const SEED: u64 = 2024;
const JACOBIAN_IN: usize = 16;
const JACOBIAN_HIDDEN: usize = 32;

pub fn prepare(model: BenchModel, mode: Mode, batch: usize) -> anyhow::Result<Prepared> {
    let mut g = Graph::new();
    let mut feeds = Feeds::new();
    let fetch = match model {
        BenchModel::Linear | BenchModel::MnistLike | BenchModel::LstmUnrolled => {
            let m = match model {
                BenchModel::Linear => Model::linear(SEED),
                BenchModel::MnistLike => Model::mnist_like(SEED),
                _ => Model::lstm_unrolled(SEED),
            };
            let x = g.placeholder("x", DType::F64, m.input.prepend(batch))?;
            feeds.insert("x".into(), m.inputs(batch, SEED));
            let ps = m.constants(&mut g)?;
            map_fn_with(&mut g, x, &ps, mode.pfor(), |b, row, p| Ok(vec![m.forward(b, row, p)?]))?.outputs
        }
        BenchModel::PerExampleGrad => {
            let m = Model::mnist_like(SEED);
            let x = g.placeholder("x", DType::F64, m.input.prepend(batch))?;
            let y = g.placeholder("y", DType::F64, m.output.prepend(batch))?;
            feeds.insert("x".into(), m.inputs(batch, SEED));
            feeds.insert("y".into(), m.targets(batch, SEED));
            let ps = m.constants(&mut g)?;
            let np = ps.len();
            let mut caps = ps;
            caps.extend([x, y]);
            let n = g.scalar_i64(batch as i64)?;
            let wrt: Vec<usize> = (0..np).collect();
            per_example_gradients_with(&mut g, n, &caps, &wrt, mode.pfor(), |b, i, p| {
                let x = b.gather_rows(p[np], i)?;
                let y = b.gather_rows(p[np + 1], i)?;
                Ok(m.loss(b, x, y, &p[..np])?)
            })?
            .outputs
        }
        BenchModel::Jacobian => {
            let m = Model::mlp(SEED, JACOBIAN_IN, JACOBIAN_HIDDEN, batch);
            let x = g.placeholder("x", DType::F64, m.input.clone())?;
            feeds.insert("x".into(), TensorValue::vec_f64(m.inputs(1, SEED).to_f64_vec()));
            let ps = m.constants(&mut g)?;
            let y = m.forward(&mut g, x, &ps)?;
            jacobian_with(&mut g, y, x, mode.pfor())?.outputs
        }
    };
    Ok(Prepared { graph: g, feeds, fetch })
}

/// One warm-up run, then `repeats` timed runs.
pub fn run(model: BenchModel, mode: Mode, batch: usize, repeats: usize, opts: ExecOptions) -> anyhow::Result<BenchRecord> {
    let p = prepare(model, mode, batch).with_context(|| format!("building {model} ({mode}) at batch {batch}"))?;
    let once = || {
        let mut store = VariableStore::from_initial(p.graph.variables());
        execute_with(&p.graph, &p.feeds, &p.fetch, &mut store, &mut RngState::new(0), opts)
    };
    let dispatch_count = once().with_context(|| format!("running {model} ({mode}) at batch {batch}"))?.dispatch_count;
    let start = Instant::now();
    for _ in 0..repeats {
        once()?;
    }
    let wall_time_s = start.elapsed().as_secs_f64();
    let throughput = if wall_time_s > 0.0 { (batch * repeats) as f64 / wall_time_s } else { f64::INFINITY };
    Ok(BenchRecord { model, mode, batch, wall_time_s, dispatch_count, throughput })
}

pub fn run_all(
    model: BenchModel,
    modes: &[Mode],
    batches: &[usize],
    repeats: usize,
    opts: ExecOptions,
) -> anyhow::Result<Vec<BenchRecord>> {
    let mut rows = vec![];
    for &batch in batches {
        for &mode in modes {
            rows.push(run(model, mode, batch, repeats, opts)?);
        }
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[BenchRecord]) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv_to(file, rows)
}

pub fn write_csv_to(w: impl std::io::Write, rows: &[BenchRecord]) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.model.name().to_string(),
            r.mode.name().to_string(),
            r.batch.to_string(),
            format!("{:.6}", r.wall_time_s),
            r.dispatch_count.to_string(),
            format!("{:.3}", r.throughput),
        ])?;
    }
    out.flush()?;
    Ok(())
}
