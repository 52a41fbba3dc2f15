//! EACOF: an energy-aware computing framework.
//!
//! Providers wrap sources of energy data and push Joule samples to a central
//! authority daemon; consumers measure the energy used by device sets between
//! checkpoints. This crate holds everything behind the `eacof` command line:
//! the shared domain model, the wire protocol, the daemon with its accounting
//! registry and derivation solver, the client library, reference providers,
//! and the sorting use-case harness.

pub mod bench;
pub mod client;
pub mod daemon;
pub mod model;
pub mod providers;
pub mod registry;
pub mod solve;
pub mod sort;
pub mod wire;

pub use model::{
    CheckpointId, Device, DeviceClass, DeviceSet, ErrorCode, ProbeId, ProcessSpec, Topology,
};
