//! Criterion benchmarks for the modal solver live in `benches/`.
