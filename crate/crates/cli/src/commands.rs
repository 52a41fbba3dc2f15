//! Implementations behind the `eacof` subcommands.

use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use eacof_core::bench::{default_elements, run_bench, render_csv, render_table, BenchConfig, Width};
use eacof_core::client::{Endpoint, Scope, Session};
use eacof_core::daemon::{self, DaemonSettings, Server};
use eacof_core::model::{parse_device_spec, Device, ErrorCode, Topology};
use eacof_core::providers::{
    self, attribution::AttributionTable, trace::load_trace, ProviderError, ReplaySpeed,
};
use eacof_core::registry::Attribution;
use eacof_core::sort::Algorithm;

use crate::fmt::sig6;
use crate::{BenchArgs, CaArgs, ProfileArgs, ProviderKind};

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_UNMONITORABLE: u8 = 64;
const EXIT_NOT_FOUND: u8 = 127;

fn fail(msg: &str) -> ExitCode {
    eprintln!("eacof: {msg}");
    ExitCode::from(EXIT_FAIL)
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("eacof: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn parse_devices(specs: &[String]) -> Result<Vec<Device>, String> {
    specs
        .iter()
        .map(|s| parse_device_spec(s).map_err(|e| e.to_string()))
        .collect()
}

fn connect(socket: Option<&str>) -> Result<Session, ErrorCode> {
    Session::connect_to(&Endpoint::resolve(socket))
}

// ---- ca ----

static SIGNALLED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_sig: libc::c_int) {
    SIGNALLED.store(true, Ordering::SeqCst);
}

fn install_signal_handlers() {
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_signal as *const () as libc::sighandler_t);
    }
}

fn read_topology(path: &Path) -> Result<Topology, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn run_ca(socket: Option<&str>, args: CaArgs) -> ExitCode {
    install_signal_handlers();
    let (config_socket, mut settings) = if let Some(config) = &args.config {
        match daemon::load_config(config) {
            Ok(loaded) => (loaded.socket, loaded.settings),
            Err(e) => return fail(&e.to_string()),
        }
    } else {
        let Some(topology_path) = &args.topology else {
            return fail("either --config or --topology is required");
        };
        let topology = match read_topology(topology_path) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let mut settings = DaemonSettings::new(topology);
        settings.extrapolate = args.extrapolate;
        settings.attribution = match args.attribution.as_deref() {
            None | Some("whole") => Attribution::Whole,
            Some("trace") => {
                let Some(trace_file) = &args.trace_file else {
                    return fail("--attribution trace needs --trace-file");
                };
                let table = match AttributionTable::load(trace_file) {
                    Ok(t) => t,
                    Err(e) => return fail(&format!("{}: {e}", trace_file.display())),
                };
                match table.resolve(&settings.topology) {
                    Ok(resolved) => Attribution::Trace(resolved),
                    Err(e) => return fail(&format!("{}: {e}", trace_file.display())),
                }
            }
            Some(other) => return fail(&format!("unknown attribution policy `{other}`")),
        };
        (None, settings)
    };
    settings.quiet = false;

    let endpoint = Endpoint::resolve(socket.or(config_socket.as_deref()));
    let server = match Server::bind(&endpoint, settings) {
        Ok(server) => server,
        Err(e) => return fail(&format!("cannot bind {endpoint}: {e}")),
    };

    let handle = server.shutdown_handle();
    std::thread::spawn(move || loop {
        if SIGNALLED.load(Ordering::SeqCst) {
            handle.shutdown();
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(20));
    });
    server.run();
    ExitCode::from(EXIT_OK)
}

// ---- status ----

pub fn run_status(socket: Option<&str>) -> ExitCode {
    let mut session = match connect(socket) {
        Ok(s) => s,
        Err(_) => return fail("cannot reach daemon"),
    };
    let snap = match session.status() {
        Ok(s) => s,
        Err(code) => return fail(&format!("status failed: {code}")),
    };
    println!("PROBES");
    println!("{:<6} {:<24} {:<8} {}", "id", "devices", "active", "cumulative_J");
    for p in &snap.probes {
        let devices: Vec<String> = p.devices.iter().map(|d| d.spec()).collect();
        println!(
            "{:<6} {:<24} {:<8} {}",
            p.id,
            devices.join(","),
            if p.active { "yes" } else { "no" },
            sig6(p.cumulative)
        );
    }
    println!("CHECKPOINTS");
    println!("{:<6} {:<24} {:<10} {}", "id", "devices", "pspec", "continuous");
    for c in &snap.checkpoints {
        let devices: Vec<String> = c.devices.iter().map(|d| d.spec()).collect();
        println!(
            "{:<6} {:<24} {:<10} {}",
            c.id,
            devices.join(","),
            c.pspec.to_string(),
            if c.continuous { "yes" } else { "no" }
        );
    }
    println!("connections={}", snap.connections);
    ExitCode::from(EXIT_OK)
}

// ---- profile ----

pub fn run_profile(socket: Option<&str>, args: ProfileArgs) -> ExitCode {
    let devices = match parse_devices(&args.devices) {
        Ok(d) => d,
        Err(e) => return usage(&e),
    };
    if args.command.is_empty() {
        return usage("missing command to profile");
    }
    let scope = if args.self_scope { Scope::SelfProcess } else { Scope::All };

    let mut session = match connect(socket) {
        Ok(s) => s,
        Err(_) => return fail("cannot reach daemon"),
    };
    let checkpoint = match session.set_checkpoint(scope, &devices) {
        Ok(c) => c,
        Err(ErrorCode::Unmonitorable) => {
            eprintln!("eacof: devices unmonitorable");
            return ExitCode::from(EXIT_UNMONITORABLE);
        }
        Err(code) => return fail(&format!("cannot set checkpoint: {code}")),
    };

    let started = Instant::now();
    let mut child = match std::process::Command::new(&args.command[0])
        .args(&args.command[1..])
        .spawn()
    {
        Ok(child) => child,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            eprintln!("eacof: {}: command not found", args.command[0]);
            return ExitCode::from(EXIT_NOT_FOUND);
        }
        Err(e) => return fail(&format!("cannot spawn {}: {e}", args.command[0])),
    };
    let status = match child.wait() {
        Ok(status) => status,
        Err(e) => return fail(&format!("wait failed: {e}")),
    };
    let time_s = started.elapsed().as_secs_f64();

    let sample = match session.sample_checkpoint(&checkpoint) {
        Ok(v) => v,
        Err(code) => return fail(&format!("sample failed: {code}")),
    };
    let _ = session.delete_checkpoint(checkpoint);

    let power = if time_s > 0.0 { sample.joules / time_s } else { 0.0 };
    println!(
        "energy_J={} time_s={} power_W={} continuous={}",
        sig6(sample.joules),
        sig6(time_s),
        sig6(power),
        sample.continuous
    );

    // the wrapped command's exit status passes through
    let code = match status.code() {
        Some(code) => (code & 0xff) as u8,
        None => {
            use std::os::unix::process::ExitStatusExt;
            (128 + status.signal().unwrap_or(0)).clamp(0, 255) as u8
        }
    };
    ExitCode::from(code)
}

// ---- provider ----

pub fn run_provider(socket: Option<&str>, kind: ProviderKind) -> ExitCode {
    let result = match kind {
        ProviderKind::Trace { file, devices, immediate, speed } => {
            let devices = match parse_devices(&devices) {
                Ok(d) => d,
                Err(e) => return usage(&e),
            };
            let speed = if immediate {
                ReplaySpeed::Immediate
            } else {
                ReplaySpeed::RealTime(speed.unwrap_or(1.0))
            };
            let events = match load_trace(&file) {
                Ok(events) => events,
                Err(e) => return fail(&format!("{}: {e}", file.display())),
            };
            let mut session = match connect(socket) {
                Ok(s) => s,
                Err(_) => return fail("cannot reach daemon"),
            };
            providers::run_trace_provider(&mut session, &events, &devices, speed)
        }
        ProviderKind::Constant { watts, hz, devices, duration } => {
            let devices = match parse_devices(&devices) {
                Ok(d) => d,
                Err(e) => return usage(&e),
            };
            // flag validation happens before any connection is made
            if !hz.is_finite() || hz <= 0.0 {
                return usage(&format!("--hz must be > 0, got {hz}"));
            }
            if !watts.is_finite() || watts < 0.0 {
                return usage(&format!("--watts must be >= 0, got {watts}"));
            }
            let mut session = match connect(socket) {
                Ok(s) => s,
                Err(_) => return fail("cannot reach daemon"),
            };
            providers::run_constant_power_provider(&mut session, watts, hz, &devices, duration)
        }
        ProviderKind::Battery { file, voltage, poll_hz, devices, polls } => {
            let devices = match parse_devices(&devices) {
                Ok(d) => d,
                Err(e) => return usage(&e),
            };
            if !voltage.is_finite() || voltage <= 0.0 {
                return usage(&format!("--voltage must be > 0, got {voltage}"));
            }
            if !poll_hz.is_finite() || poll_hz <= 0.0 {
                return usage(&format!("--poll-hz must be > 0, got {poll_hz}"));
            }
            let mut session = match connect(socket) {
                Ok(s) => s,
                Err(_) => return fail("cannot reach daemon"),
            };
            providers::run_battery_file_provider(
                &mut session,
                &file,
                voltage,
                poll_hz,
                &devices,
                polls,
            )
        }
    };
    match result {
        Ok(summary) => {
            eprintln!(
                "eacof-provider: pushed {} J in {} samples",
                sig6(summary.pushed_joules),
                summary.samples
            );
            ExitCode::from(EXIT_OK)
        }
        Err(ProviderError::Usage(msg)) => usage(&msg),
        Err(e) => fail(&e.to_string()),
    }
}

// ---- bench ----

fn parse_elements(spec: &str) -> Result<std::collections::BTreeMap<Algorithm, usize>, String> {
    let mut elements = default_elements();
    for part in spec.split(',') {
        match part.split_once('=') {
            Some((alg, n)) => {
                let algorithm: Algorithm = alg.parse()?;
                let n: usize = n.parse().map_err(|_| format!("bad element count `{n}`"))?;
                elements.insert(algorithm, n);
            }
            None => {
                let n: usize = part.parse().map_err(|_| format!("bad element count `{part}`"))?;
                for algorithm in Algorithm::ALL {
                    elements.insert(algorithm, n);
                }
            }
        }
    }
    Ok(elements)
}

pub fn run_bench_cmd(socket: Option<&str>, args: BenchArgs) -> ExitCode {
    let devices = match parse_devices(&args.devices) {
        Ok(d) => d,
        Err(e) => return usage(&e),
    };
    let algorithms = match &args.algorithms {
        None => Algorithm::ALL.to_vec(),
        Some(tokens) => {
            let mut out = Vec::new();
            for t in tokens {
                match t.parse::<Algorithm>() {
                    Ok(a) => out.push(a),
                    Err(e) => return usage(&e),
                }
            }
            out
        }
    };
    let widths = match &args.widths {
        None => Width::ALL.to_vec(),
        Some(bits) => {
            let mut out = Vec::new();
            for &b in bits {
                match Width::from_bits(b) {
                    Some(w) => out.push(w),
                    None => return usage(&format!("width must be 8, 16, 32 or 64, got {b}")),
                }
            }
            out
        }
    };
    let elements = match &args.elements {
        None => default_elements(),
        Some(spec) => match parse_elements(spec) {
            Ok(e) => e,
            Err(e) => return usage(&e),
        },
    };
    let config = BenchConfig { algorithms, widths, elements, runs: args.runs, seed: args.seed };

    let mut session = match connect(socket) {
        Ok(s) => s,
        Err(_) => return fail("cannot reach daemon"),
    };
    let report = match run_bench(&mut session, &config, &devices) {
        Ok(report) => report,
        Err(eacof_core::bench::BenchError::Code(ErrorCode::Unmonitorable)) => {
            eprintln!("eacof: devices unmonitorable");
            return ExitCode::from(EXIT_UNMONITORABLE);
        }
        Err(e) => return fail(&e.to_string()),
    };
    print!("{}", render_table(&report));
    if let Some(out) = &args.out {
        if let Err(e) = std::fs::write(out, render_csv(&report)) {
            return fail(&format!("cannot write {}: {e}", out.display()));
        }
    }
    ExitCode::from(EXIT_OK)
}
