//! Criterion benchmarks for the sieve estimator live in `benches/`.
