//! Criterion benchmarks for the retrieval protocol and auditor live in `benches/`.
