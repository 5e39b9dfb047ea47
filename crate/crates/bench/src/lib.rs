//! Criterion benchmarks for bimix; see `benches/`.
