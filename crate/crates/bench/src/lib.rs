//! Criterion benchmarks for the learned pipeline and the classical
//! baselines live in `benches/`; run them with `cargo bench -p efb-bench`.
