//! Criterion benchmarks of the numeric kernels; see `benches/`.
