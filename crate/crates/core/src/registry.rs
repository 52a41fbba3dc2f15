//! The central authority's registry and accounting engine.
//!
//! Probes accumulate pushed Joules into monotonic counters; checkpoints hold
//! per-probe baselines and a derivation plan, so a sample is the plan-weighted
//! sum of counter deltas since the previous sample. All mutations go through
//! `&mut self`, giving one totally-ordered command sequence regardless of how
//! many connections the transport layer services.
//!
//! Time never comes from a clock in here: callers pass monotonic nanoseconds
//! with each command, which keeps the accounting deterministic under test.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{
    expand_set_to_indices, CheckpointId, Device, DeviceSet, ErrorCode, ProbeId, ProcessSpec,
    Topology,
};
use crate::providers::attribution::ResolvedAttribution;
use crate::solve::{derive_plan, DerivationPlan};
use crate::wire::{CheckpointStatus, ProbeStatus, StatusSnapshot};

/// Identifies the client connection that owns a record.
pub type ConnId = u64;

/// How SELF checkpoints are scaled: whole-machine share 1, or shares looked
/// up in an attribution trace.
#[derive(Debug, Clone, Default)]
pub enum Attribution {
    #[default]
    Whole,
    Trace(ResolvedAttribution),
}

#[derive(Debug, Clone)]
pub struct ProbeRecord {
    pub id: ProbeId,
    pub owner: ConnId,
    pub devices: DeviceSet,
    pub leaves: BTreeSet<usize>,
    pub active: bool,
    /// Total Joules pushed since registration; never decreases.
    pub cumulative: f64,
    /// Later of activation and the last accepted sample, in monotonic ns.
    pub anchor_ns: Option<u64>,
    /// Joules of the last sample over the interval it covered, in Watts.
    pub last_power: f64,
}

#[derive(Debug, Clone)]
pub struct CheckpointRecord {
    pub id: CheckpointId,
    pub owner: ConnId,
    pub pspec: ProcessSpec,
    pub devices: DeviceSet,
    pub request_leaves: BTreeSet<usize>,
    pub plan: DerivationPlan,
    /// Probe cumulative counters at the last sample point.
    pub baselines: BTreeMap<ProbeId, f64>,
    pub continuous: bool,
    /// Set when the plan references deleted probes and no substitute exists.
    pub coverage_lost: bool,
}

/// Registry lifecycle events, logged by the daemon one line each.
#[derive(Debug, Clone, PartialEq)]
pub enum RegistryEvent {
    ProbeRegistered(ProbeId, DeviceSet),
    ProbeActivated(ProbeId),
    ProbeDeactivated(ProbeId),
    ProbeDeleted(ProbeId),
    CheckpointCreated(CheckpointId, DeviceSet),
    CheckpointDeleted(CheckpointId),
    CheckpointReplanned(CheckpointId),
    CheckpointCoverageLost(CheckpointId),
}

impl std::fmt::Display for RegistryEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegistryEvent::ProbeRegistered(id, devices) => {
                write!(f, "probe {id} registered ({devices})")
            }
            RegistryEvent::ProbeActivated(id) => write!(f, "probe {id} activated"),
            RegistryEvent::ProbeDeactivated(id) => write!(f, "probe {id} deactivated"),
            RegistryEvent::ProbeDeleted(id) => write!(f, "probe {id} deleted"),
            RegistryEvent::CheckpointCreated(id, devices) => {
                write!(f, "checkpoint {id} created ({devices})")
            }
            RegistryEvent::CheckpointDeleted(id) => write!(f, "checkpoint {id} deleted"),
            RegistryEvent::CheckpointReplanned(id) => write!(f, "checkpoint {id} re-derived"),
            RegistryEvent::CheckpointCoverageLost(id) => {
                write!(f, "checkpoint {id} coverage lost")
            }
        }
    }
}

/// Result of sampling a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleValue {
    pub joules: f64,
    /// False when any plan probe went inactive or was replaced since the
    /// previous sample of this checkpoint.
    pub continuous: bool,
}

pub struct Registry {
    topology: Topology,
    leaves: Vec<Device>,
    extrapolate: bool,
    attribution: Attribution,
    next_probe: u64,
    next_checkpoint: u64,
    probes: BTreeMap<ProbeId, ProbeRecord>,
    checkpoints: BTreeMap<CheckpointId, CheckpointRecord>,
    connections: u64,
    events: Vec<RegistryEvent>,
}

impl Registry {
    pub fn new(topology: Topology, extrapolate: bool, attribution: Attribution) -> Registry {
        let leaves = topology.leaves();
        Registry {
            topology,
            leaves,
            extrapolate,
            attribution,
            next_probe: 1,
            next_checkpoint: 1,
            probes: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
            connections: 0,
            events: Vec::new(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Drain lifecycle events recorded since the last call.
    pub fn take_events(&mut self) -> Vec<RegistryEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn connection_opened(&mut self) {
        self.connections += 1;
    }

    /// Drop a connection and everything it owns, with the usual
    /// re-derivation cascade for dependent checkpoints.
    pub fn connection_closed(&mut self, conn: ConnId) {
        self.connections = self.connections.saturating_sub(1);
        let owned_ckpts: Vec<CheckpointId> = self
            .checkpoints
            .values()
            .filter(|c| c.owner == conn)
            .map(|c| c.id)
            .collect();
        for id in owned_ckpts {
            let _ = self.delete_checkpoint(id, conn);
        }
        let owned_probes: Vec<ProbeId> = self
            .probes
            .values()
            .filter(|p| p.owner == conn)
            .map(|p| p.id)
            .collect();
        for id in owned_probes {
            let _ = self.delete_probe(id, conn);
        }
    }

    pub fn register_probe(
        &mut self,
        conn: ConnId,
        devices: Vec<Device>,
    ) -> Result<ProbeId, ErrorCode> {
        if devices.is_empty() {
            return Err(ErrorCode::Protocol);
        }
        let devices = DeviceSet::new(devices);
        let leaves = expand_set_to_indices(&devices, &self.topology, &self.leaves)?;
        let id = ProbeId(self.next_probe);
        self.next_probe += 1;
        self.probes.insert(
            id,
            ProbeRecord {
                id,
                owner: conn,
                devices: devices.clone(),
                leaves,
                active: false,
                cumulative: 0.0,
                anchor_ns: None,
                last_power: 0.0,
            },
        );
        self.events.push(RegistryEvent::ProbeRegistered(id, devices));
        // a fresh probe is inactive and cannot restore coverage yet, but the
        // attempt is part of every capability change
        self.retry_lost_checkpoints();
        Ok(id)
    }

    pub fn set_probe_active(
        &mut self,
        id: ProbeId,
        active: bool,
        now_ns: u64,
    ) -> Result<(), ErrorCode> {
        let probe = self.probes.get_mut(&id).ok_or(ErrorCode::UnknownId)?;
        if probe.active == active {
            return Err(if active { ErrorCode::AlreadyActive } else { ErrorCode::InactiveProbe });
        }
        probe.active = active;
        if active {
            // next sample measures from this instant
            probe.anchor_ns = Some(now_ns);
            probe.last_power = 0.0;
            self.events.push(RegistryEvent::ProbeActivated(id));
            self.retry_lost_checkpoints();
        } else {
            self.events.push(RegistryEvent::ProbeDeactivated(id));
            // plans referencing the probe stay valid (its counter is frozen),
            // but the interval is no longer gap-free
            for ckpt in self.checkpoints.values_mut() {
                if ckpt.plan.uses_probe(id) {
                    ckpt.continuous = false;
                }
            }
        }
        Ok(())
    }

    pub fn accumulate_sample(
        &mut self,
        id: ProbeId,
        joules: f64,
        now_ns: u64,
    ) -> Result<(), ErrorCode> {
        let probe = self.probes.get_mut(&id).ok_or(ErrorCode::UnknownId)?;
        if !probe.active {
            return Err(ErrorCode::InactiveProbe);
        }
        if !joules.is_finite() || joules < 0.0 {
            return Err(ErrorCode::InvalidValue);
        }
        probe.cumulative += joules;
        if let Some(anchor) = probe.anchor_ns {
            let dt = now_ns.saturating_sub(anchor) as f64 / 1e9;
            if dt > 0.0 {
                probe.last_power = joules / dt;
            }
        }
        probe.anchor_ns = Some(now_ns);
        Ok(())
    }

    pub fn create_checkpoint(
        &mut self,
        conn: ConnId,
        pspec: ProcessSpec,
        devices: Vec<Device>,
    ) -> Result<CheckpointId, ErrorCode> {
        if devices.is_empty() {
            return Err(ErrorCode::Protocol);
        }
        let devices = DeviceSet::new(devices);
        let request = expand_set_to_indices(&devices, &self.topology, &self.leaves)?;
        let plan = self.solve(&request).ok_or(ErrorCode::Unmonitorable)?;
        let baselines = self.baselines_for(&plan);
        let id = CheckpointId(self.next_checkpoint);
        self.next_checkpoint += 1;
        self.checkpoints.insert(
            id,
            CheckpointRecord {
                id,
                owner: conn,
                pspec,
                devices: devices.clone(),
                request_leaves: request,
                plan,
                baselines,
                continuous: true,
                coverage_lost: false,
            },
        );
        self.events.push(RegistryEvent::CheckpointCreated(id, devices));
        Ok(id)
    }

    pub fn sample_checkpoint(
        &mut self,
        id: CheckpointId,
        conn: ConnId,
        now_ns: u64,
    ) -> Result<SampleValue, ErrorCode> {
        let ckpt = self.checkpoints.get(&id).ok_or(ErrorCode::UnknownId)?;
        if ckpt.owner != conn {
            return Err(ErrorCode::Permission);
        }
        if ckpt.coverage_lost {
            return Err(ErrorCode::CoverageLost);
        }

        let mut raw = 0.0;
        for (probe_id, coef) in ckpt.plan.terms() {
            let probe = self.probes.get(probe_id).ok_or(ErrorCode::CoverageLost)?;
            let mut cumulative = probe.cumulative;
            if self.extrapolate && probe.active {
                if let Some(anchor) = probe.anchor_ns {
                    let dt = now_ns.saturating_sub(anchor) as f64 / 1e9;
                    cumulative += probe.last_power * dt;
                }
            }
            let base = ckpt.baselines.get(probe_id).copied().unwrap_or(0.0);
            let coef = *coef.numer() as f64 / *coef.denom() as f64;
            raw += coef * (cumulative - base);
        }

        let share = self.share_for(ckpt.pspec, &ckpt.request_leaves, now_ns);
        let value = raw * share;

        // advance baselines to the stored (unextrapolated) counters
        let fresh = self.baselines_for(&ckpt.plan);
        let ckpt = self.checkpoints.get_mut(&id).expect("checked above");
        ckpt.baselines = fresh;
        let continuous = ckpt.continuous;
        ckpt.continuous = true;
        Ok(SampleValue { joules: value, continuous })
    }

    pub fn delete_checkpoint(&mut self, id: CheckpointId, conn: ConnId) -> Result<(), ErrorCode> {
        let ckpt = self.checkpoints.get(&id).ok_or(ErrorCode::UnknownId)?;
        if ckpt.owner != conn {
            return Err(ErrorCode::Permission);
        }
        self.checkpoints.remove(&id);
        self.events.push(RegistryEvent::CheckpointDeleted(id));
        Ok(())
    }

    pub fn delete_probe(&mut self, id: ProbeId, conn: ConnId) -> Result<(), ErrorCode> {
        let probe = self.probes.get(&id).ok_or(ErrorCode::UnknownId)?;
        if probe.owner != conn {
            return Err(ErrorCode::Permission);
        }
        self.probes.remove(&id);
        self.events.push(RegistryEvent::ProbeDeleted(id));

        let dependent: Vec<CheckpointId> = self
            .checkpoints
            .values()
            .filter(|c| !c.coverage_lost && c.plan.uses_probe(id))
            .map(|c| c.id)
            .collect();
        for ckpt_id in dependent {
            self.replan_checkpoint(ckpt_id);
        }
        Ok(())
    }

    pub fn status(&self) -> StatusSnapshot {
        StatusSnapshot {
            probes: self
                .probes
                .values()
                .map(|p| ProbeStatus {
                    id: p.id,
                    devices: p.devices.devices().to_vec(),
                    active: p.active,
                    cumulative: p.cumulative,
                })
                .collect(),
            checkpoints: self
                .checkpoints
                .values()
                .map(|c| CheckpointStatus {
                    id: c.id,
                    devices: c.devices.devices().to_vec(),
                    pspec: c.pspec,
                    continuous: c.continuous,
                })
                .collect(),
            connections: self.connections,
        }
    }

    /// Current plan of a checkpoint, for inspection and tests.
    pub fn checkpoint_plan(&self, id: CheckpointId) -> Option<&DerivationPlan> {
        self.checkpoints.get(&id).map(|c| &c.plan)
    }

    fn solve(&self, request: &BTreeSet<usize>) -> Option<DerivationPlan> {
        let active: Vec<(ProbeId, &BTreeSet<usize>)> = self
            .probes
            .values()
            .filter(|p| p.active)
            .map(|p| (p.id, &p.leaves))
            .collect();
        derive_plan(request, &active, self.leaves.len())
    }

    fn baselines_for(&self, plan: &DerivationPlan) -> BTreeMap<ProbeId, f64> {
        plan.probe_ids()
            .filter_map(|id| self.probes.get(&id).map(|p| (id, p.cumulative)))
            .collect()
    }

    /// Swap in a fresh plan for a checkpoint whose coverage changed, or mark
    /// it lost when the request has left the probe span.
    fn replan_checkpoint(&mut self, id: CheckpointId) {
        let Some(ckpt) = self.checkpoints.get(&id) else { return };
        match self.solve(&ckpt.request_leaves) {
            Some(plan) => {
                let baselines = self.baselines_for(&plan);
                let ckpt = self.checkpoints.get_mut(&id).expect("present");
                ckpt.plan = plan;
                ckpt.baselines = baselines;
                ckpt.continuous = false;
                ckpt.coverage_lost = false;
                self.events.push(RegistryEvent::CheckpointReplanned(id));
            }
            None => {
                let ckpt = self.checkpoints.get_mut(&id).expect("present");
                ckpt.continuous = false;
                ckpt.coverage_lost = true;
                self.events.push(RegistryEvent::CheckpointCoverageLost(id));
            }
        }
    }

    fn retry_lost_checkpoints(&mut self) {
        let lost: Vec<CheckpointId> = self
            .checkpoints
            .values()
            .filter(|c| c.coverage_lost)
            .map(|c| c.id)
            .collect();
        for id in lost {
            self.replan_checkpoint(id);
        }
    }

    fn share_for(&self, pspec: ProcessSpec, request: &BTreeSet<usize>, now_ns: u64) -> f64 {
        match (&self.attribution, pspec) {
            (_, ProcessSpec::All) => 1.0,
            (Attribution::Whole, ProcessSpec::Pid(_)) => 1.0,
            (Attribution::Trace(table), ProcessSpec::Pid(pid)) => {
                table.share_at(pid, request, now_ns / 1_000_000)
            }
        }
    }
}
