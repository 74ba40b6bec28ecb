//! Empty library crate; the criterion benchmarks live under `benches/`.
