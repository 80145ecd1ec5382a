//! Criterion benchmarks for the solver and learning hot paths; see `benches/`.
