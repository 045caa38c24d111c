//! Criterion benchmarks for geotrack; see `benches/`.
