//! Criterion benchmarks for `fst-core`; see `benches/`.
