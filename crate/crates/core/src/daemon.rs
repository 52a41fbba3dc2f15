//! The central authority daemon: a stream-socket server around the registry.
//!
//! One accept loop, one thread per connection; every registry mutation takes
//! the single registry lock, so accounting semantics are those of one serial
//! command stream. The daemon holds exactly one socket per connected client.

use std::io::{Read, Write};
use std::net::TcpListener;
#[cfg(unix)]
use std::os::unix::net::UnixListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Deserialize;

use crate::client::Endpoint;
use crate::model::{ErrorCode, Topology};
use crate::providers::attribution::AttributionTable;
use crate::registry::{Attribution, ConnId, Registry};
use crate::wire::{encode, FrameDecoder, Reply, WireMessage, PROTO_VERSION};

/// Everything the daemon needs besides its listen address.
#[derive(Debug, Clone)]
pub struct DaemonSettings {
    pub topology: Topology,
    pub extrapolate: bool,
    pub attribution: Attribution,
    /// Suppress lifecycle logging on standard error (used by tests).
    pub quiet: bool,
}

impl DaemonSettings {
    pub fn new(topology: Topology) -> DaemonSettings {
        DaemonSettings {
            topology,
            extrapolate: false,
            attribution: Attribution::Whole,
            quiet: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
    #[error("bad config: {0}")]
    Parse(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TopologyRef {
    Inline(Topology),
    Path(String),
}

#[derive(Deserialize)]
struct ConfigFile {
    socket: Option<String>,
    topology: Option<TopologyRef>,
    extrapolate: Option<bool>,
    attribution: Option<String>,
    trace_file: Option<String>,
}

/// A parsed daemon config file.
pub struct LoadedConfig {
    pub socket: Option<String>,
    pub settings: DaemonSettings,
}

/// Load the daemon JSON config: socket path, topology (inline or a file
/// path), the extrapolation flag and the attribution policy.
pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| ConfigError::Io { path: path.to_path_buf(), err })?;
    let raw: ConfigFile =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;

    let topology = match raw.topology {
        Some(TopologyRef::Inline(t)) => t,
        Some(TopologyRef::Path(p)) => {
            let p = Path::new(&p);
            let text = std::fs::read_to_string(p)
                .map_err(|err| ConfigError::Io { path: p.to_path_buf(), err })?;
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        }
        None => return Err(ConfigError::Parse("missing `topology`".into())),
    };

    let attribution = match raw.attribution.as_deref() {
        None | Some("whole") => Attribution::Whole,
        Some("trace") => {
            let trace_path = raw
                .trace_file
                .ok_or_else(|| ConfigError::Parse("attribution \"trace\" needs `trace_file`".into()))?;
            let table = AttributionTable::load(Path::new(&trace_path))
                .map_err(|e| ConfigError::Parse(format!("{trace_path}: {e}")))?;
            let resolved = table
                .resolve(&topology)
                .map_err(|e| ConfigError::Parse(format!("{trace_path}: {e}")))?;
            Attribution::Trace(resolved)
        }
        Some(other) => {
            return Err(ConfigError::Parse(format!(
                "attribution must be \"whole\" or \"trace\", got \"{other}\""
            )))
        }
    };

    Ok(LoadedConfig {
        socket: raw.socket,
        settings: DaemonSettings {
            topology,
            extrapolate: raw.extrapolate.unwrap_or(false),
            attribution,
            quiet: false,
        },
    })
}

enum Listener {
    #[cfg(unix)]
    Unix(UnixListener),
    Tcp(TcpListener),
}

/// Stops the accept loop from another thread.
#[derive(Clone)]
pub struct ShutdownHandle {
    flag: Arc<AtomicBool>,
}

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.flag.store(true, Ordering::SeqCst);
    }
}

pub struct Server {
    listener: Listener,
    endpoint: Endpoint,
    registry: Arc<Mutex<Registry>>,
    start: Instant,
    shutdown: Arc<AtomicBool>,
    quiet: bool,
}

impl Server {
    /// Bind the daemon socket. A unix path with a live listener is refused;
    /// a stale socket file with no listener behind it is removed and rebound.
    pub fn bind(endpoint: &Endpoint, settings: DaemonSettings) -> std::io::Result<Server> {
        let (listener, endpoint) = match endpoint {
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                if path.exists() {
                    if std::os::unix::net::UnixStream::connect(path).is_ok() {
                        return Err(std::io::Error::new(
                            std::io::ErrorKind::AddrInUse,
                            format!("{} already has a listener", path.display()),
                        ));
                    }
                    std::fs::remove_file(path)?;
                }
                (Listener::Unix(UnixListener::bind(path)?), Endpoint::Unix(path.clone()))
            }
            Endpoint::Tcp(addr) => {
                let listener = TcpListener::bind(addr)?;
                let actual = listener.local_addr()?;
                (Listener::Tcp(listener), Endpoint::Tcp(actual.to_string()))
            }
        };
        match &listener {
            #[cfg(unix)]
            Listener::Unix(l) => l.set_nonblocking(true)?,
            Listener::Tcp(l) => l.set_nonblocking(true)?,
        }
        let quiet = settings.quiet;
        let registry = Registry::new(settings.topology, settings.extrapolate, settings.attribution);
        Ok(Server {
            listener,
            endpoint,
            registry: Arc::new(Mutex::new(registry)),
            start: Instant::now(),
            shutdown: Arc::new(AtomicBool::new(false)),
            quiet,
        })
    }

    /// The bound address (with the actual port when TCP bound port 0).
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle { flag: self.shutdown.clone() }
    }

    fn log(&self, line: &str) {
        if !self.quiet {
            eprintln!("eacof-ca: {line}");
        }
    }

    /// Accept connections until shut down. Removes the socket file on exit.
    pub fn run(self) {
        self.log(&format!("listening on {}", self.endpoint));
        let mut next_conn: ConnId = 0;
        loop {
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
            // connection reads time out briefly so threads can observe shutdown
            let poll = std::time::Duration::from_millis(50);
            let accepted: std::io::Result<Box<dyn ReadWrite + Send>> = match &self.listener {
                #[cfg(unix)]
                Listener::Unix(l) => l.accept().and_then(|(s, _)| {
                    s.set_read_timeout(Some(poll))?;
                    Ok(Box::new(s) as _)
                }),
                Listener::Tcp(l) => l.accept().and_then(|(s, _)| {
                    s.set_read_timeout(Some(poll))?;
                    Ok(Box::new(s) as _)
                }),
            };
            match accepted {
                Ok(stream) => {
                    next_conn += 1;
                    let conn = next_conn;
                    let registry = self.registry.clone();
                    let start = self.start;
                    let quiet = self.quiet;
                    let shutdown = self.shutdown.clone();
                    registry.lock().unwrap().connection_opened();
                    if !quiet {
                        eprintln!("eacof-ca: conn {conn} opened");
                    }
                    std::thread::spawn(move || {
                        serve_connection(stream, conn, registry, start, quiet, shutdown);
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(std::time::Duration::from_millis(3));
                }
                Err(e) => {
                    self.log(&format!("accept failed: {e}"));
                    break;
                }
            }
        }
        #[cfg(unix)]
        if let Endpoint::Unix(path) = &self.endpoint {
            let _ = std::fs::remove_file(path);
        }
        self.log("shut down");
    }
}

trait ReadWrite: Read + Write {}
impl<T: Read + Write> ReadWrite for T {}

fn serve_connection(
    mut stream: Box<dyn ReadWrite + Send>,
    conn: ConnId,
    registry: Arc<Mutex<Registry>>,
    start: Instant,
    quiet: bool,
    shutdown: Arc<AtomicBool>,
) {
    let mut decoder = FrameDecoder::new();
    let mut greeted = false;
    let mut buf = [0u8; 8192];
    'conn: loop {
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        let n = match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue;
            }
            Err(_) => break,
        };
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        decoder.feed(&buf[..n]);
        loop {
            let msg = match decoder.next() {
                Ok(Some(msg)) => msg,
                Ok(None) => break,
                Err(e) => {
                    if !quiet {
                        eprintln!("eacof-ca: conn {conn}: {e}");
                    }
                    break 'conn;
                }
            };
            let now_ns = start.elapsed().as_nanos() as u64;
            let (reply, close) = {
                let mut reg = registry.lock().unwrap();
                let out = dispatch(&mut reg, conn, &mut greeted, msg, now_ns);
                if !quiet {
                    for event in reg.take_events() {
                        eprintln!("eacof-ca: {event}");
                    }
                } else {
                    reg.take_events();
                }
                out
            };
            let frame = match encode(&WireMessage::Reply(reply)) {
                Ok(frame) => frame,
                Err(e) => {
                    if !quiet {
                        eprintln!("eacof-ca: conn {conn}: cannot encode reply: {e}");
                    }
                    break 'conn;
                }
            };
            if stream.write_all(&frame).is_err() {
                break 'conn;
            }
            if close {
                break 'conn;
            }
        }
    }
    registry.lock().unwrap().connection_closed(conn);
    if !quiet {
        eprintln!("eacof-ca: conn {conn} closed");
        for event in registry.lock().unwrap().take_events() {
            eprintln!("eacof-ca: {event}");
        }
    } else {
        registry.lock().unwrap().take_events();
    }
}

fn dispatch(
    reg: &mut Registry,
    conn: ConnId,
    greeted: &mut bool,
    msg: WireMessage,
    now_ns: u64,
) -> (Reply, bool) {
    let req_id = msg.req_id();
    if !*greeted {
        return match msg {
            WireMessage::Hello { req_id, proto_version } if proto_version == PROTO_VERSION => {
                *greeted = true;
                (Reply::code_only(req_id, ErrorCode::Ok), false)
            }
            // version mismatch or anything before HELLO: fail fast
            _ => (Reply::code_only(req_id, ErrorCode::Protocol), true),
        };
    }
    let reply = match msg {
        WireMessage::Hello { proto_version, .. } => {
            let code =
                if proto_version == PROTO_VERSION { ErrorCode::Ok } else { ErrorCode::Protocol };
            Reply::code_only(req_id, code)
        }
        WireMessage::ProbeCreate { devices, .. } => match reg.register_probe(conn, devices) {
            Ok(id) => {
                let mut r = Reply::code_only(req_id, ErrorCode::Ok);
                r.probe_id = Some(id);
                r
            }
            Err(code) => Reply::code_only(req_id, code),
        },
        WireMessage::ProbeDelete { probe_id, .. } => {
            Reply::code_only(req_id, code_of(reg.delete_probe(probe_id, conn)))
        }
        WireMessage::ProbeActivate { probe_id, .. } => {
            Reply::code_only(req_id, code_of(reg.set_probe_active(probe_id, true, now_ns)))
        }
        WireMessage::ProbeDeactivate { probe_id, .. } => {
            Reply::code_only(req_id, code_of(reg.set_probe_active(probe_id, false, now_ns)))
        }
        WireMessage::SampleAdd { probe_id, joules, .. } => {
            Reply::code_only(req_id, code_of(reg.accumulate_sample(probe_id, joules, now_ns)))
        }
        WireMessage::CheckpointSet { pspec, devices, .. } => {
            match reg.create_checkpoint(conn, pspec, devices) {
                Ok(id) => {
                    let mut r = Reply::code_only(req_id, ErrorCode::Ok);
                    r.checkpoint_id = Some(id);
                    r
                }
                Err(code) => Reply::code_only(req_id, code),
            }
        }
        WireMessage::CheckpointSample { checkpoint_id, .. } => {
            match reg.sample_checkpoint(checkpoint_id, conn, now_ns) {
                Ok(value) => {
                    let mut r = Reply::code_only(req_id, ErrorCode::Ok);
                    r.joules = Some(value.joules);
                    r.continuous = Some(value.continuous);
                    r
                }
                Err(code) => Reply::code_only(req_id, code),
            }
        }
        WireMessage::CheckpointDelete { checkpoint_id, .. } => {
            Reply::code_only(req_id, code_of(reg.delete_checkpoint(checkpoint_id, conn)))
        }
        WireMessage::Status { .. } => {
            let snap = reg.status();
            let mut r = Reply::code_only(req_id, ErrorCode::Ok);
            r.probes = Some(snap.probes);
            r.checkpoints = Some(snap.checkpoints);
            r.connections = Some(snap.connections);
            r
        }
        // clients do not push replies or events at the daemon
        WireMessage::Reply(_) | WireMessage::Event { .. } => {
            Reply::code_only(req_id, ErrorCode::Protocol)
        }
    };
    (reply, false)
}

fn code_of(result: Result<(), ErrorCode>) -> ErrorCode {
    match result {
        Ok(()) => ErrorCode::Ok,
        Err(code) => code,
    }
}

/// Bind and run a daemon on a background thread; returns once it accepts
/// connections. Tests and the bench harness use this for an in-process
/// central authority.
pub fn spawn(
    endpoint: &Endpoint,
    settings: DaemonSettings,
) -> std::io::Result<(ShutdownHandle, Endpoint, std::thread::JoinHandle<()>)> {
    let server = Server::bind(endpoint, settings)?;
    let handle = server.shutdown_handle();
    let bound = server.endpoint().clone();
    let join = std::thread::spawn(move || server.run());
    Ok((handle, bound, join))
}
