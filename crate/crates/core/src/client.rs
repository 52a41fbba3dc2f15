//! Client library: the provider and consumer APIs over a managed daemon
//! connection.
//!
//! A `Session` owns one socket to the central authority and speaks the
//! synchronous request/reply protocol: one request in flight at a time, so
//! a process with any number of probe and checkpoint handles still holds a
//! single connection. Handles are plain data carrying daemon-issued ids.
//!
//! Every operation resolves to an error code rather than aborting, so a
//! caller can retry or fall back to a non-energy-aware mode. Connection
//! failures are sticky: the session does not reconnect on its own.

use std::io::{Read, Write};
use std::net::TcpStream;
#[cfg(unix)]
use std::os::unix::net::UnixStream;
use std::path::PathBuf;
use std::time::Duration;

use crate::model::{CheckpointId, Device, DeviceSet, ErrorCode, ProbeId, ProcessSpec};
use crate::registry::SampleValue;
use crate::wire::{encode, FrameDecoder, Reply, StatusSnapshot, WireMessage, PROTO_VERSION};

/// Name of the environment variable holding the daemon socket path.
pub const SOCKET_ENV: &str = "EACOF_SOCKET";
/// TCP fallback port variable for platforms without local sockets.
pub const PORT_ENV: &str = "EACOF_PORT";
/// Request timeout in milliseconds.
pub const TIMEOUT_ENV: &str = "EACOF_TIMEOUT_MS";

pub const DEFAULT_SOCKET: &str = "/tmp/eacof.sock";
pub const DEFAULT_PORT: u16 = 48011;
const DEFAULT_TIMEOUT_MS: u64 = 1000;

/// Where the daemon listens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    #[cfg(unix)]
    Unix(PathBuf),
    Tcp(String),
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            #[cfg(unix)]
            Endpoint::Unix(p) => write!(f, "{}", p.display()),
            Endpoint::Tcp(a) => write!(f, "tcp {a}"),
        }
    }
}

impl Endpoint {
    /// Resolve from the environment: `EACOF_SOCKET` (or the default path) on
    /// platforms with local sockets, TCP loopback on `EACOF_PORT` elsewhere.
    pub fn from_env() -> Endpoint {
        #[cfg(unix)]
        {
            let path = std::env::var(SOCKET_ENV).unwrap_or_else(|_| DEFAULT_SOCKET.into());
            Endpoint::Unix(PathBuf::from(path))
        }
        #[cfg(not(unix))]
        {
            let port = std::env::var(PORT_ENV)
                .ok()
                .and_then(|p| p.parse().ok())
                .unwrap_or(DEFAULT_PORT);
            Endpoint::Tcp(format!("127.0.0.1:{port}"))
        }
    }

    /// `from_env`, with an explicit socket path (a `--socket` flag) taking
    /// precedence.
    #[cfg(unix)]
    pub fn resolve(socket: Option<&str>) -> Endpoint {
        match socket {
            Some(path) => Endpoint::Unix(PathBuf::from(path)),
            None => Endpoint::from_env(),
        }
    }
}

fn request_timeout() -> Duration {
    let ms = std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_TIMEOUT_MS);
    Duration::from_millis(ms)
}

enum Stream {
    #[cfg(unix)]
    Unix(UnixStream),
    Tcp(TcpStream),
}

impl Stream {
    fn set_timeouts(&self, timeout: Duration) -> std::io::Result<()> {
        match self {
            #[cfg(unix)]
            Stream::Unix(s) => {
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))
            }
            Stream::Tcp(s) => {
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))
            }
        }
    }

    fn write_all(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        match self {
            #[cfg(unix)]
            Stream::Unix(s) => s.write_all(bytes),
            Stream::Tcp(s) => s.write_all(bytes),
        }
    }

    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        match self {
            #[cfg(unix)]
            Stream::Unix(s) => s.read(buf),
            Stream::Tcp(s) => s.read(buf),
        }
    }
}

/// Client-side mirror of a registered probe.
#[derive(Debug, Clone)]
pub struct ProbeHandle {
    id: ProbeId,
    devices: DeviceSet,
    active: bool,
}

impl ProbeHandle {
    pub fn id(&self) -> ProbeId {
        self.id
    }

    pub fn devices(&self) -> &DeviceSet {
        &self.devices
    }

    /// Last acknowledged activation state.
    pub fn is_active(&self) -> bool {
        self.active
    }
}

/// A consumer's sampling context.
#[derive(Debug, Clone)]
pub struct CheckpointHandle {
    id: CheckpointId,
    pspec: ProcessSpec,
    devices: DeviceSet,
}

impl CheckpointHandle {
    pub fn id(&self) -> CheckpointId {
        self.id
    }

    pub fn pspec(&self) -> ProcessSpec {
        self.pspec
    }

    pub fn devices(&self) -> &DeviceSet {
        &self.devices
    }
}

/// Whose energy a checkpoint measures. `SelfProcess` resolves to the calling
/// process's pid before anything goes on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    SelfProcess,
}

impl Scope {
    fn to_pspec(self) -> ProcessSpec {
        match self {
            Scope::All => ProcessSpec::All,
            Scope::SelfProcess => ProcessSpec::Pid(std::process::id()),
        }
    }
}

/// One connection to the central authority.
pub struct Session {
    stream: Stream,
    decoder: FrameDecoder,
    next_req_id: u64,
    failed: bool,
}

impl Session {
    /// Connect using environment resolution and greet the daemon.
    pub fn connect() -> Result<Session, ErrorCode> {
        Session::connect_to(&Endpoint::from_env())
    }

    pub fn connect_to(endpoint: &Endpoint) -> Result<Session, ErrorCode> {
        let timeout = request_timeout();
        let stream = match endpoint {
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                Stream::Unix(UnixStream::connect(path).map_err(|_| ErrorCode::Connection)?)
            }
            Endpoint::Tcp(addr) => {
                Stream::Tcp(TcpStream::connect(addr).map_err(|_| ErrorCode::Connection)?)
            }
        };
        stream.set_timeouts(timeout).map_err(|_| ErrorCode::Connection)?;
        let mut session =
            Session { stream, decoder: FrameDecoder::new(), next_req_id: 1, failed: false };
        session.request(|req_id| WireMessage::Hello { req_id, proto_version: PROTO_VERSION })?;
        Ok(session)
    }

    /// True once any request has failed at the transport level; the session
    /// stays unusable until the caller opens a new one.
    pub fn is_failed(&self) -> bool {
        self.failed
    }

    fn request(
        &mut self,
        build: impl FnOnce(u64) -> WireMessage,
    ) -> Result<Reply, ErrorCode> {
        if self.failed {
            return Err(ErrorCode::Connection);
        }
        let req_id = self.next_req_id;
        self.next_req_id += 1;
        let msg = build(req_id);
        let frame = encode(&msg).map_err(|_| ErrorCode::Protocol)?;
        if self.stream.write_all(&frame).is_err() {
            self.failed = true;
            return Err(ErrorCode::Connection);
        }
        let mut buf = [0u8; 4096];
        loop {
            match self.decoder.next() {
                Ok(Some(WireMessage::Reply(reply))) if reply.req_id == req_id => {
                    if reply.code == ErrorCode::Ok {
                        return Ok(reply);
                    }
                    return Err(reply.code);
                }
                // unsolicited pushes while waiting are skipped
                Ok(Some(WireMessage::Event { .. })) => continue,
                Ok(Some(_)) => {
                    self.failed = true;
                    return Err(ErrorCode::Protocol);
                }
                Ok(None) => match self.stream.read(&mut buf) {
                    Ok(0) => {
                        self.failed = true;
                        return Err(ErrorCode::Connection);
                    }
                    Ok(n) => self.decoder.feed(&buf[..n]),
                    Err(_) => {
                        self.failed = true;
                        return Err(ErrorCode::Connection);
                    }
                },
                Err(_) => {
                    self.failed = true;
                    return Err(ErrorCode::Protocol);
                }
            }
        }
    }

    // ---- provider API ----

    /// Register a probe for the given devices. New probes start inactive.
    pub fn create_probe(&mut self, devices: &[Device]) -> Result<ProbeHandle, ErrorCode> {
        if devices.is_empty() {
            return Err(ErrorCode::Protocol);
        }
        let reply = self.request(|req_id| WireMessage::ProbeCreate {
            req_id,
            devices: devices.to_vec(),
        })?;
        let id = reply.probe_id.ok_or(ErrorCode::Protocol)?;
        Ok(ProbeHandle { id, devices: DeviceSet::new(devices.to_vec()), active: false })
    }

    pub fn activate_probe(&mut self, probe: &mut ProbeHandle) -> Result<(), ErrorCode> {
        let id = probe.id;
        self.request(|req_id| WireMessage::ProbeActivate { req_id, probe_id: id })?;
        probe.active = true;
        Ok(())
    }

    pub fn deactivate_probe(&mut self, probe: &mut ProbeHandle) -> Result<(), ErrorCode> {
        let id = probe.id;
        self.request(|req_id| WireMessage::ProbeDeactivate { req_id, probe_id: id })?;
        probe.active = false;
        Ok(())
    }

    /// Push the Joules used by the probe's devices since the later of its
    /// activation and the previous sample.
    pub fn add_sample(&mut self, probe: &ProbeHandle, joules: f64) -> Result<(), ErrorCode> {
        if !crate::model::valid_sample_joules(joules) {
            return Err(ErrorCode::InvalidValue);
        }
        let id = probe.id;
        self.request(|req_id| WireMessage::SampleAdd { req_id, probe_id: id, joules })?;
        Ok(())
    }

    /// Delete the probe; the handle is spent. A stale clone used afterwards
    /// earns `ERR_UNKNOWN_ID` from the daemon.
    pub fn delete_probe(&mut self, probe: ProbeHandle) -> Result<(), ErrorCode> {
        self.request(|req_id| WireMessage::ProbeDelete { req_id, probe_id: probe.id })?;
        Ok(())
    }

    // ---- consumer API ----

    /// Create a checkpoint over the devices; its creation is the first
    /// sample point.
    pub fn set_checkpoint(
        &mut self,
        scope: Scope,
        devices: &[Device],
    ) -> Result<CheckpointHandle, ErrorCode> {
        if devices.is_empty() {
            return Err(ErrorCode::Protocol);
        }
        let pspec = scope.to_pspec();
        let reply = self.request(|req_id| WireMessage::CheckpointSet {
            req_id,
            pspec,
            devices: devices.to_vec(),
        })?;
        let id = reply.checkpoint_id.ok_or(ErrorCode::Protocol)?;
        Ok(CheckpointHandle { id, pspec, devices: DeviceSet::new(devices.to_vec()) })
    }

    /// Joules used by the checkpoint's process/device combination since the
    /// later of its creation and the previous sample. A value arrives even
    /// when the interval had gaps; `continuous` says whether it was gap-free.
    pub fn sample_checkpoint(
        &mut self,
        checkpoint: &CheckpointHandle,
    ) -> Result<SampleValue, ErrorCode> {
        let id = checkpoint.id;
        let reply =
            self.request(|req_id| WireMessage::CheckpointSample { req_id, checkpoint_id: id })?;
        let joules = reply.joules.ok_or(ErrorCode::Protocol)?;
        let continuous = reply.continuous.unwrap_or(true);
        Ok(SampleValue { joules, continuous })
    }

    pub fn delete_checkpoint(&mut self, checkpoint: CheckpointHandle) -> Result<(), ErrorCode> {
        self.request(|req_id| WireMessage::CheckpointDelete {
            req_id,
            checkpoint_id: checkpoint.id,
        })?;
        Ok(())
    }

    // ---- shared ----

    pub fn status(&mut self) -> Result<StatusSnapshot, ErrorCode> {
        let reply = self.request(|req_id| WireMessage::Status { req_id })?;
        Ok(StatusSnapshot {
            probes: reply.probes.unwrap_or_default(),
            checkpoints: reply.checkpoints.unwrap_or_default(),
            connections: reply.connections.unwrap_or_default(),
        })
    }
}
