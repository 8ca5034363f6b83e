//! Criterion micro-benchmarks for the simulator kernels; see `benches/kernels.rs`.
//! This crate intentionally exports nothing.
