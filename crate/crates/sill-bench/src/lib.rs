//! Benchmark crate for `sill-core`; see `benches/core.rs`.
