use std::process::Command;

use pforvec::gen::GenConfig;
use pforvec::graph::OpKind;
use pforvec::interp::ExecOptions;
use pforvec_cli::bench::{self, BenchModel, Mode};
use pforvec_cli::demo::{self, Demo};
use pforvec_cli::verify::{self, faulty_registry, VerifyOptions};

fn opts(seed: u64, count: u64) -> VerifyOptions {
    VerifyOptions {
        seed,
        count,
        gen: GenConfig::default(),
        explain: false,
        dump: None,
        exec: ExecOptions { budget: Some(1_000_000) },
    }
}

fn verify_text(o: &VerifyOptions) -> (verify::VerifyReport, String) {
    let mut out = Vec::new();
    let r = verify::run(o, &mut out).unwrap();
    (r, String::from_utf8(out).unwrap())
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pforvec"))
}

#[test]
fn verify_is_deterministic() {
    let (a, ta) = verify_text(&opts(9, 25));
    let (b, tb) = verify_text(&opts(9, 25));
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(a.passed, 25);
    assert_eq!(a.exit_code(), 0);
}

#[test]
fn zero_graphs_pass_vacuously() {
    let (r, text) = verify_text(&opts(1, 0));
    assert_eq!(r.exit_code(), 0);
    assert!(text.contains("0 passed, 0 failed, 0 errors"));
}

#[test]
fn broken_converter_is_caught_and_dumped() {
    let dir = std::env::temp_dir().join(format!("pforvec-dump-{}", std::process::id()));
    let o = VerifyOptions { dump: Some(dir.clone()), ..opts(3, 20) };
    let mut out = Vec::new();
    let r = verify::run_with(&faulty_registry(OpKind::Add), &o, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(r.failed > 0, "{text}");
    assert_eq!(r.exit_code(), 1);
    assert!(text.contains("FAIL graph") && text.contains("graph v1"));
    assert!(std::fs::read_dir(&dir).unwrap().count() as u64 == r.failed);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn explain_lists_routes() {
    let o = VerifyOptions { explain: true, ..opts(4, 3) };
    let (_, text) = verify_text(&o);
    assert!(text.contains("routes:") && text.contains("converted"));
}

#[test]
fn exit_codes_from_the_binary() {
    let ok = bin().args(["verify", "--seed", "2", "--count", "5"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = bin().args(["verify", "--seed", "3", "--count", "20", "--inject-fault", "add"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let starved = bin().args(["verify", "--seed", "2", "--count", "5"]).env("PFORVEC_STEP_BUDGET", "3").output().unwrap();
    assert_eq!(starved.status.code(), Some(2));
    let junk = bin().args(["verify", "--count", "1"]).env("PFORVEC_STEP_BUDGET", "lots").output().unwrap();
    assert_eq!(junk.status.code(), Some(2));
    let unknown = bin().args(["bench", "--model", "resnet", "--out", "/dev/null"]).output().unwrap();
    assert_ne!(unknown.status.code(), Some(0));
}

#[test]
fn bench_writes_the_csv() {
    let path = std::env::temp_dir().join(format!("pforvec-bench-{}.csv", std::process::id()));
    let out = bin()
        .args(["bench", "--model", "linear", "--batches", "1,16,256", "--repeats", "1", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), bench::CSV_HEADER);
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    let vec_counts: Vec<&str> = rows.iter().filter(|r| &r[1] == "vectorized").map(|r| r.get(4).unwrap()).collect();
    assert!(vec_counts.iter().all(|c| *c == vec_counts[0]));
    std::fs::remove_file(path).unwrap();
}

#[test]
fn csv_is_stable_apart_from_timings() {
    let strip = |model| {
        let rows = bench::run_all(model, &[Mode::Vectorized, Mode::FallbackLoop], &[1, 4], 1, ExecOptions::default()).unwrap();
        let mut buf = Vec::new();
        bench::write_csv_to(&mut buf, &rows).unwrap();
        String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{},{}", f[0], f[1], f[2], f[4])
            })
            .collect::<Vec<_>>()
    };
    for model in BenchModel::ALL {
        assert_eq!(strip(model), strip(model));
    }
}

#[test]
fn fallback_dispatch_grows_with_batch() {
    let run = |mode, batch| bench::run(BenchModel::Linear, mode, batch, 0, ExecOptions::default()).unwrap().dispatch_count;
    let (one, many) = (run(Mode::FallbackLoop, 1), run(Mode::FallbackLoop, 256));
    let ratio = many as f64 / one as f64;
    assert!(ratio > 100.0 && ratio < 300.0, "{one} -> {many}");
    assert_eq!(run(Mode::Vectorized, 1), run(Mode::Vectorized, 256));
}

#[test]
fn oracle_mode_agrees_with_vectorized() {
    for model in [BenchModel::Linear, BenchModel::LstmUnrolled, BenchModel::Jacobian] {
        let eval = |mode| {
            let p = bench::prepare(model, mode, 4).unwrap();
            let mut st = pforvec::interp::VariableStore::new();
            pforvec::interp::execute_with(&p.graph, &p.feeds, &p.fetch, &mut st, &mut pforvec::interp::RngState::new(0), ExecOptions::default())
                .unwrap()
                .outputs
        };
        let (o, v, f) = (eval(Mode::Oracle), eval(Mode::Vectorized), eval(Mode::FallbackLoop));
        for ((a, b), c) in o.iter().zip(&v).zip(&f) {
            assert!(a.all_close(b, 1e-9) && a.all_close(c, 1e-9), "{model}");
        }
    }
}

#[test]
fn demos_pass() {
    for (d, needle) in [(Demo::Jacobian, "{2.0,0.0,0.0,0.0,4.0,0.0,0.0,0.0,6.0}"), (Demo::PerExample, "grad[3]"), (Demo::Map, "result = f64[2,2]{1.0,2.0,3.0,4.0}")] {
        let mut out = Vec::new();
        assert!(demo::run(d, ExecOptions::default(), &mut out).unwrap());
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains(needle) && text.contains("verdict: PASS"), "{text}");
    }
    let out = bin().args(["demo", "nope"]).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
}
