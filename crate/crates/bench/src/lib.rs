//! Benchmark-only crate; see `benches/engine.rs` for the measured paths.
