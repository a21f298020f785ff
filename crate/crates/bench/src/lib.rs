//! Criterion benchmarks for the auction simulator; see `benches/`.
