//! Micro-benchmark support crate; see `benches/micro.rs`.
