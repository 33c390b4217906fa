//! Criterion benchmarks for the simulator; see `benches/propagation.rs`.
