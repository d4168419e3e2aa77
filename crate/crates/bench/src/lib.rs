//! Criterion benchmarks for gradopt-core live under `benches/`.
