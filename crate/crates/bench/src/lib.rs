//! Criterion benchmarks for the decision engine and the simulator; see `benches/`.
