//! Criterion benchmarks for pforvec live in `benches/`.
