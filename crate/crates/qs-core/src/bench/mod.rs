//! Benchmark suite (to be filled in).
