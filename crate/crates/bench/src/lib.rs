//! Criterion benchmarks for `nec-core`; see `benches/`.
