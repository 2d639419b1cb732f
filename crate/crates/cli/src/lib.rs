//! Harness around `pforvec`: randomized verification against the
//! interpreter, benchmarks and small demos.

pub mod bench;
pub mod demo;
pub mod verify;

use pforvec::interp::ExecOptions;

/// Interpreter step budget used when `PFORVEC_STEP_BUDGET` is unset.
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

/// Budget from `PFORVEC_STEP_BUDGET`, or the default.
pub fn step_budget() -> anyhow::Result<u64> {
    match std::env::var("PFORVEC_STEP_BUDGET") {
        Ok(v) => v.trim().parse().map_err(|e| anyhow::anyhow!("PFORVEC_STEP_BUDGET={v:?}: {e}")),
        Err(_) => Ok(DEFAULT_STEP_BUDGET),
    }
}

pub fn exec_options() -> anyhow::Result<ExecOptions> {
    Ok(ExecOptions { budget: Some(step_budget()?) })
}
