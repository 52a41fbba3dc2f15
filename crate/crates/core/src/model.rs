//! Shared domain types: device classification, identifiers, energy values
//! and the error codes returned by every public operation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A node kind in the hierarchical device classification tree.
///
/// The tree runs System -> CPUs -> Socket -> Core alongside Memory, HDDs and
/// GPUs. Every class has a fixed index-path arity; a `Device` pairs a class
/// with that many indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeviceClass {
    System,
    CpuAll,
    CpuSocket,
    CpuCore,
    MemoryAll,
    HddAll,
    HddUnit,
    GpuAll,
    GpuUnit,
}

impl DeviceClass {
    /// Number of path indices a device of this class carries.
    pub fn arity(self) -> usize {
        match self {
            DeviceClass::System
            | DeviceClass::CpuAll
            | DeviceClass::MemoryAll
            | DeviceClass::HddAll
            | DeviceClass::GpuAll => 0,
            DeviceClass::CpuSocket | DeviceClass::HddUnit | DeviceClass::GpuUnit => 1,
            DeviceClass::CpuCore => 2,
        }
    }

    /// Leaf classes are the granularity at which energy is accounted.
    pub fn is_leaf(self) -> bool {
        matches!(
            self,
            DeviceClass::CpuCore
                | DeviceClass::MemoryAll
                | DeviceClass::HddUnit
                | DeviceClass::GpuUnit
        )
    }
}

/// A single monitorable device: a classification node plus its index path.
///
/// Devices are totally ordered (class ordinal, then path lexicographic) so
/// that serialized device sets are byte-stable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Device {
    class: DeviceClass,
    path: Vec<u32>,
}

/// Error raised when a device spec string or (class, path) pair is invalid.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid device spec: {0}")]
pub struct DeviceSpecError(pub String);

impl Device {
    pub fn new(class: DeviceClass, path: Vec<u32>) -> Result<Device, DeviceSpecError> {
        if path.len() != class.arity() {
            return Err(DeviceSpecError(format!(
                "{:?} takes {} path indices, got {}",
                class,
                class.arity(),
                path.len()
            )));
        }
        Ok(Device { class, path })
    }

    pub fn system() -> Device {
        Device { class: DeviceClass::System, path: vec![] }
    }

    pub fn cpu_all() -> Device {
        Device { class: DeviceClass::CpuAll, path: vec![] }
    }

    pub fn cpu_socket(socket: u32) -> Device {
        Device { class: DeviceClass::CpuSocket, path: vec![socket] }
    }

    pub fn cpu_core(socket: u32, core: u32) -> Device {
        Device { class: DeviceClass::CpuCore, path: vec![socket, core] }
    }

    pub fn memory() -> Device {
        Device { class: DeviceClass::MemoryAll, path: vec![] }
    }

    pub fn hdd_all() -> Device {
        Device { class: DeviceClass::HddAll, path: vec![] }
    }

    pub fn hdd_unit(unit: u32) -> Device {
        Device { class: DeviceClass::HddUnit, path: vec![unit] }
    }

    pub fn gpu_all() -> Device {
        Device { class: DeviceClass::GpuAll, path: vec![] }
    }

    pub fn gpu_unit(unit: u32) -> Device {
        Device { class: DeviceClass::GpuUnit, path: vec![unit] }
    }

    pub fn class(&self) -> DeviceClass {
        self.class
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    /// Canonical text form, the inverse of [`parse_device_spec`].
    pub fn spec(&self) -> String {
        match self.class {
            DeviceClass::System => "system".into(),
            DeviceClass::CpuAll => "cpu".into(),
            DeviceClass::CpuSocket => format!("cpu:{}", self.path[0]),
            DeviceClass::CpuCore => format!("cpu:{}.{}", self.path[0], self.path[1]),
            DeviceClass::MemoryAll => "mem".into(),
            DeviceClass::HddAll => "hdd".into(),
            DeviceClass::HddUnit => format!("hdd:{}", self.path[0]),
            DeviceClass::GpuAll => "gpu".into(),
            DeviceClass::GpuUnit => format!("gpu:{}", self.path[0]),
        }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec())
    }
}

impl FromStr for Device {
    type Err = DeviceSpecError;

    fn from_str(s: &str) -> Result<Device, DeviceSpecError> {
        parse_device_spec(s)
    }
}

// On the wire and in config files a device is its spec string.
impl Serialize for Device {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&self.spec())
    }
}

impl<'de> Deserialize<'de> for Device {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Device, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_device_spec(&s).map_err(D::Error::custom)
    }
}

fn parse_index(s: &str) -> Result<u32, DeviceSpecError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(DeviceSpecError(format!("bad index `{s}`")));
    }
    s.parse::<u32>()
        .map_err(|_| DeviceSpecError(format!("index `{s}` out of range")))
}

/// Parse the device grammar:
/// `system | cpu | cpu:<s> | cpu:<s>.<c> | mem | hdd | hdd:<n> | gpu | gpu:<n>`.
pub fn parse_device_spec(text: &str) -> Result<Device, DeviceSpecError> {
    let (head, rest) = match text.split_once(':') {
        Some((h, r)) => (h, Some(r)),
        None => (text, None),
    };
    match (head, rest) {
        ("system", None) => Ok(Device::system()),
        ("cpu", None) => Ok(Device::cpu_all()),
        ("cpu", Some(r)) => match r.split_once('.') {
            Some((s, c)) => Ok(Device::cpu_core(parse_index(s)?, parse_index(c)?)),
            None => Ok(Device::cpu_socket(parse_index(r)?)),
        },
        ("mem", None) => Ok(Device::memory()),
        ("hdd", None) => Ok(Device::hdd_all()),
        ("hdd", Some(r)) => Ok(Device::hdd_unit(parse_index(r)?)),
        ("gpu", None) => Ok(Device::gpu_all()),
        ("gpu", Some(r)) => Ok(Device::gpu_unit(parse_index(r)?)),
        _ => Err(DeviceSpecError(format!("unrecognized device `{text}`"))),
    }
}

/// Canonical (sorted, deduplicated) set of devices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceSet {
    #[serde(deserialize_with = "deserialize_canonical")]
    devices: Vec<Device>,
}

fn deserialize_canonical<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Device>, D::Error> {
    let mut devices = Vec::<Device>::deserialize(d)?;
    devices.sort();
    devices.dedup();
    Ok(devices)
}

impl DeviceSet {
    pub fn new(mut devices: Vec<Device>) -> DeviceSet {
        devices.sort();
        devices.dedup();
        DeviceSet { devices }
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    /// Comma-joined spec strings, e.g. `cpu,hdd:0`.
    pub fn spec(&self) -> String {
        let parts: Vec<String> = self.devices.iter().map(Device::spec).collect();
        parts.join(",")
    }
}

impl fmt::Display for DeviceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec())
    }
}

impl FromIterator<Device> for DeviceSet {
    fn from_iter<I: IntoIterator<Item = Device>>(iter: I) -> DeviceSet {
        DeviceSet::new(iter.into_iter().collect())
    }
}

/// Concrete machine shape: how far each branch of the classification tree
/// fans out. Expansion of aggregate devices is defined against a topology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub sockets: u32,
    pub cores_per_socket: u32,
    pub hdds: u32,
    pub gpus: u32,
    #[serde(rename = "memory")]
    pub has_memory: bool,
}

impl Topology {
    /// All leaf devices of this topology in canonical device order.
    pub fn leaves(&self) -> Vec<Device> {
        let mut out = Vec::new();
        for s in 0..self.sockets {
            for c in 0..self.cores_per_socket {
                out.push(Device::cpu_core(s, c));
            }
        }
        if self.has_memory {
            out.push(Device::memory());
        }
        for h in 0..self.hdds {
            out.push(Device::hdd_unit(h));
        }
        for g in 0..self.gpus {
            out.push(Device::gpu_unit(g));
        }
        out
    }
}

/// Expand a device to the set of leaf devices it covers.
///
/// A leaf expands to itself. Aggregates expand to every leaf beneath them;
/// an aggregate with nothing beneath it (e.g. `gpu` on a GPU-less topology)
/// does not exist in that topology and is rejected.
pub fn expand_to_leaves(device: &Device, topology: &Topology) -> Result<DeviceSet, ErrorCode> {
    let mut leaves = Vec::new();
    match device.class() {
        DeviceClass::System => {
            leaves = topology.leaves();
        }
        DeviceClass::CpuAll => {
            for s in 0..topology.sockets {
                for c in 0..topology.cores_per_socket {
                    leaves.push(Device::cpu_core(s, c));
                }
            }
        }
        DeviceClass::CpuSocket => {
            let s = device.path()[0];
            if s >= topology.sockets {
                return Err(ErrorCode::InvalidDevice);
            }
            for c in 0..topology.cores_per_socket {
                leaves.push(Device::cpu_core(s, c));
            }
        }
        DeviceClass::CpuCore => {
            let (s, c) = (device.path()[0], device.path()[1]);
            if s >= topology.sockets || c >= topology.cores_per_socket {
                return Err(ErrorCode::InvalidDevice);
            }
            leaves.push(device.clone());
        }
        DeviceClass::MemoryAll => {
            if !topology.has_memory {
                return Err(ErrorCode::InvalidDevice);
            }
            leaves.push(Device::memory());
        }
        DeviceClass::HddAll => {
            for h in 0..topology.hdds {
                leaves.push(Device::hdd_unit(h));
            }
        }
        DeviceClass::HddUnit => {
            let h = device.path()[0];
            if h >= topology.hdds {
                return Err(ErrorCode::InvalidDevice);
            }
            leaves.push(device.clone());
        }
        DeviceClass::GpuAll => {
            for g in 0..topology.gpus {
                leaves.push(Device::gpu_unit(g));
            }
        }
        DeviceClass::GpuUnit => {
            let g = device.path()[0];
            if g >= topology.gpus {
                return Err(ErrorCode::InvalidDevice);
            }
            leaves.push(device.clone());
        }
    }
    if leaves.is_empty() {
        return Err(ErrorCode::InvalidDevice);
    }
    Ok(DeviceSet::new(leaves))
}

/// Expand a whole device set to topology leaf indices.
pub fn expand_set_to_indices(
    set: &DeviceSet,
    topology: &Topology,
    leaves: &[Device],
) -> Result<BTreeSet<usize>, ErrorCode> {
    let mut out = BTreeSet::new();
    for device in set.devices() {
        for leaf in expand_to_leaves(device, topology)?.devices() {
            let idx = leaves
                .binary_search(leaf)
                .map_err(|_| ErrorCode::InvalidDevice)?;
            out.insert(idx);
        }
    }
    Ok(out)
}

/// Identifier of a registered probe, unique for the daemon's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbeId(pub u64);

/// Identifier of a checkpoint, unique for the daemon's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CheckpointId(pub u64);

impl fmt::Display for ProbeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for CheckpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which processes a checkpoint accounts energy for: every process, or one
/// specific pid (the consumer itself, resolved by the client library).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProcessSpec {
    All,
    Pid(u32),
}

impl fmt::Display for ProcessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessSpec::All => f.write_str("all"),
            ProcessSpec::Pid(p) => write!(f, "pid:{p}"),
        }
    }
}

impl FromStr for ProcessSpec {
    type Err = DeviceSpecError;

    fn from_str(s: &str) -> Result<ProcessSpec, DeviceSpecError> {
        if s == "all" {
            return Ok(ProcessSpec::All);
        }
        if let Some(p) = s.strip_prefix("pid:") {
            let pid = parse_index(p).map_err(|_| DeviceSpecError(format!("bad pspec `{s}`")))?;
            return Ok(ProcessSpec::Pid(pid));
        }
        Err(DeviceSpecError(format!("bad pspec `{s}`")))
    }
}

impl Serialize for ProcessSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProcessSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<ProcessSpec, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Status of every public operation. `Ok` is the unique success value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "ERR_CONNECTION")]
    Connection,
    #[serde(rename = "ERR_PROTOCOL")]
    Protocol,
    #[serde(rename = "ERR_INVALID_DEVICE")]
    InvalidDevice,
    #[serde(rename = "ERR_INVALID_VALUE")]
    InvalidValue,
    #[serde(rename = "ERR_UNMONITORABLE")]
    Unmonitorable,
    #[serde(rename = "ERR_UNKNOWN_ID")]
    UnknownId,
    #[serde(rename = "ERR_INACTIVE_PROBE")]
    InactiveProbe,
    #[serde(rename = "ERR_ALREADY_ACTIVE")]
    AlreadyActive,
    #[serde(rename = "ERR_COVERAGE_LOST")]
    CoverageLost,
    #[serde(rename = "ERR_PERMISSION")]
    Permission,
}

impl ErrorCode {
    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::Ok => "OK",
            ErrorCode::Connection => "ERR_CONNECTION",
            ErrorCode::Protocol => "ERR_PROTOCOL",
            ErrorCode::InvalidDevice => "ERR_INVALID_DEVICE",
            ErrorCode::InvalidValue => "ERR_INVALID_VALUE",
            ErrorCode::Unmonitorable => "ERR_UNMONITORABLE",
            ErrorCode::UnknownId => "ERR_UNKNOWN_ID",
            ErrorCode::InactiveProbe => "ERR_INACTIVE_PROBE",
            ErrorCode::AlreadyActive => "ERR_ALREADY_ACTIVE",
            ErrorCode::CoverageLost => "ERR_COVERAGE_LOST",
            ErrorCode::Permission => "ERR_PERMISSION",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::error::Error for ErrorCode {}

/// A pushed energy sample must be a finite, non-negative Joule count.
pub fn valid_sample_joules(joules: f64) -> bool {
    joules.is_finite() && joules >= 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn topo(sockets: u32, cores: u32, hdds: u32, gpus: u32, memory: bool) -> Topology {
        Topology { sockets, cores_per_socket: cores, hdds, gpus, has_memory: memory }
    }

    #[test]
    fn leaf_expands_to_itself() {
        let t = topo(2, 4, 1, 0, true);
        let d = Device::cpu_core(0, 1);
        let set = expand_to_leaves(&d, &t).unwrap();
        assert_eq!(set.devices(), &[Device::cpu_core(0, 1)]);
    }

    #[test]
    fn cpu_all_expands_to_every_core() {
        // enumerated by hand: 2 sockets x 2 cores
        let t = topo(2, 2, 0, 0, false);
        let set = expand_to_leaves(&Device::cpu_all(), &t).unwrap();
        assert_eq!(
            set.devices(),
            &[
                Device::cpu_core(0, 0),
                Device::cpu_core(0, 1),
                Device::cpu_core(1, 0),
                Device::cpu_core(1, 1),
            ]
        );
    }

    #[test]
    fn system_expands_to_union_of_all_leaves() {
        let t = topo(1, 1, 1, 0, true);
        let set = expand_to_leaves(&Device::system(), &t).unwrap();
        assert_eq!(
            set.devices(),
            &[Device::cpu_core(0, 0), Device::memory(), Device::hdd_unit(0)]
        );
    }

    #[test]
    fn out_of_topology_socket_is_invalid() {
        let t = topo(2, 2, 0, 0, false);
        let err = expand_to_leaves(&Device::cpu_socket(5), &t).unwrap_err();
        assert_eq!(err, ErrorCode::InvalidDevice);
    }

    #[test]
    fn empty_aggregate_is_invalid() {
        let t = topo(1, 1, 0, 0, false);
        assert_eq!(expand_to_leaves(&Device::gpu_all(), &t), Err(ErrorCode::InvalidDevice));
        assert_eq!(expand_to_leaves(&Device::memory(), &t), Err(ErrorCode::InvalidDevice));
    }

    #[test]
    fn expansion_is_monotone_for_ancestors() {
        let t = topo(2, 3, 2, 1, true);
        let socket = expand_to_leaves(&Device::cpu_socket(1), &t).unwrap();
        let all = expand_to_leaves(&Device::cpu_all(), &t).unwrap();
        let system = expand_to_leaves(&Device::system(), &t).unwrap();
        for d in socket.devices() {
            assert!(all.devices().contains(d));
        }
        for d in all.devices() {
            assert!(system.devices().contains(d));
        }
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_device_spec("cpu:0.1").unwrap(), Device::cpu_core(0, 1));
        assert_eq!(parse_device_spec("system").unwrap(), Device::system());
        assert!(parse_device_spec("cpu:0.1.2").is_err());
        assert!(parse_device_spec("mem:0").is_err());
        assert!(parse_device_spec("disk").is_err());
        assert!(parse_device_spec("cpu:").is_err());
        assert!(parse_device_spec("cpu:+1").is_err());
        assert!(parse_device_spec("").is_err());
    }

    #[test]
    fn parse_normalizes_leading_zeros() {
        let d = parse_device_spec("cpu:00.01").unwrap();
        assert_eq!(d.spec(), "cpu:0.1");
    }

    #[test]
    fn device_order_is_class_then_path() {
        let mut v = vec![
            Device::hdd_unit(0),
            Device::cpu_core(1, 0),
            Device::memory(),
            Device::cpu_core(0, 2),
            Device::system(),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                Device::system(),
                Device::cpu_core(0, 2),
                Device::cpu_core(1, 0),
                Device::memory(),
                Device::hdd_unit(0),
            ]
        );
    }

    #[test]
    fn device_set_canonicalization_is_idempotent() {
        let set = DeviceSet::new(vec![
            Device::memory(),
            Device::cpu_all(),
            Device::memory(),
        ]);
        assert_eq!(set.devices(), &[Device::cpu_all(), Device::memory()]);
        let again = DeviceSet::new(set.devices().to_vec());
        assert_eq!(set, again);
    }

    #[test]
    fn topology_json_shape() {
        let t: Topology = serde_json::from_str(
            r#"{"sockets":2,"cores_per_socket":4,"hdds":1,"gpus":0,"memory":true}"#,
        )
        .unwrap();
        assert_eq!(t, topo(2, 4, 1, 0, true));
        let back = serde_json::to_string(&t).unwrap();
        assert!(back.contains("\"memory\":true"));
    }

    #[test]
    fn pspec_round_trip() {
        assert_eq!("all".parse::<ProcessSpec>().unwrap(), ProcessSpec::All);
        assert_eq!("pid:42".parse::<ProcessSpec>().unwrap(), ProcessSpec::Pid(42));
        assert!("self".parse::<ProcessSpec>().is_err());
        assert_eq!(ProcessSpec::Pid(7).to_string(), "pid:7");
    }

    #[test]
    fn error_code_wire_names() {
        assert_eq!(serde_json::to_string(&ErrorCode::Ok).unwrap(), "\"OK\"");
        assert_eq!(
            serde_json::to_string(&ErrorCode::Unmonitorable).unwrap(),
            "\"ERR_UNMONITORABLE\""
        );
        let c: ErrorCode = serde_json::from_str("\"ERR_COVERAGE_LOST\"").unwrap();
        assert_eq!(c, ErrorCode::CoverageLost);
    }

    fn arb_device() -> impl Strategy<Value = Device> {
        prop_oneof![
            Just(Device::system()),
            Just(Device::cpu_all()),
            (0u32..64).prop_map(Device::cpu_socket),
            (0u32..64, 0u32..64).prop_map(|(s, c)| Device::cpu_core(s, c)),
            Just(Device::memory()),
            Just(Device::hdd_all()),
            (0u32..64).prop_map(Device::hdd_unit),
            Just(Device::gpu_all()),
            (0u32..64).prop_map(Device::gpu_unit),
        ]
    }

    proptest! {
        #[test]
        fn spec_round_trips(d in arb_device()) {
            let s = d.spec();
            let parsed = parse_device_spec(&s).unwrap();
            prop_assert_eq!(&parsed, &d);
            prop_assert_eq!(parsed.spec(), s);
        }

        #[test]
        fn expansion_yields_nonempty_leaf_sets(d in arb_device()) {
            let t = topo(64, 64, 64, 64, true);
            let set = expand_to_leaves(&d, &t).unwrap();
            prop_assert!(!set.is_empty());
            prop_assert!(set.devices().iter().all(|l| l.class().is_leaf()));
        }

        #[test]
        fn canonical_form_is_stable(mut specs in proptest::collection::vec(arb_device(), 1..8)) {
            let a = DeviceSet::new(specs.clone());
            specs.reverse();
            let b = DeviceSet::new(specs);
            prop_assert_eq!(a, b);
        }
    }
}
