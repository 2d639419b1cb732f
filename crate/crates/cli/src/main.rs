use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pforvec::gen::{GenConfig, Weights};
use pforvec::graph::OpKind;
use pforvec_cli::bench::{self, BenchModel, Mode};
use pforvec_cli::demo::{self, Demo};
use pforvec_cli::verify::{self, VerifyOptions};

#[derive(Parser)]
#[command(name = "pforvec", version, about = "Parallel-for vectorizer: verification, benchmarks, demos")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check vectorized random bodies against the lock-step interpreter.
    Verify(VerifyArgs),
    /// Time a model under each execution mode and write CSV.
    Bench(BenchArgs),
    /// Run a small application and check it.
    Demo {
        /// jacobian, per_example or map
        name: Demo,
    },
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    count: u64,
    /// Deepest nesting of control-flow blocks.
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
    /// Ops per top-level body.
    #[arg(long, default_value_t = 8)]
    max_ops: usize,
    /// Category weights: elementwise,structural,control,stateful.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [60, 15, 15, 10])]
    weights: Vec<u32>,
    /// Print the route each node took through the vectorizer.
    #[arg(long)]
    explain: bool,
    /// Directory for failing graphs.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Replace the converter of this op kind with a faulty one (harness self-test).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: BenchModel,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 16, 256])]
    batches: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [Mode::Vectorized, Mode::FallbackLoop])]
    modes: Vec<Mode>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let exec = pforvec_cli::exec_options()?;
    let mut stdout = std::io::stdout().lock();
    match cli.cmd {
        Cmd::Verify(a) => {
            let [elementwise, structural, control, stateful] = a.weights[..] else {
                anyhow::bail!("--weights takes four numbers");
            };
            let gen = GenConfig { max_depth: a.max_depth, max_ops: a.max_ops, weights: Weights { elementwise, structural, control, stateful } };
            let opts = VerifyOptions { seed: a.seed, count: a.count, gen, explain: a.explain, dump: a.dump, exec };
            let report = match a.inject_fault {
                Some(kind) => {
                    let kind = OpKind::from_name(&kind).ok_or_else(|| anyhow::anyhow!("unknown op kind {kind:?}"))?;
                    verify::run_with(&verify::faulty_registry(kind), &opts, &mut stdout)?
                }
                None => verify::run(&opts, &mut stdout)?,
            };
            Ok(report.exit_code() as u8)
        }
        Cmd::Bench(a) => {
            let rows = bench::run_all(a.model, &a.modes, &a.batches, a.repeats, exec)?;
            bench::write_csv(&a.out, &rows)?;
            bench::write_csv_to(&mut stdout, &rows)?;
            Ok(0)
        }
        Cmd::Demo { name } => Ok(if demo::run(name, exec, &mut stdout)? { 0 } else { 1 }),
    }
}
