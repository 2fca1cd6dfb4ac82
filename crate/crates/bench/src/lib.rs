//! Criterion benchmarks for the compute kernels; see `benches/kernels.rs`.
