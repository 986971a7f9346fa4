//! Criterion benchmarks for the lifting kernels; see `benches/`.
