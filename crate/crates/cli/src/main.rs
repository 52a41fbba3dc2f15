//! Operator entry points: run the daemon, run reference providers, inspect
//! status, profile commands, and run the sorting use case.

mod commands;
mod fmt;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "eacof", version, about = "Energy-aware computing framework")]
struct Cli {
    /// Daemon socket path (overrides EACOF_SOCKET)
    #[arg(long, global = true)]
    socket: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the central authority daemon
    Ca(CaArgs),
    /// Print the daemon's probe and checkpoint registry
    Status,
    /// Measure the energy of a command through a checkpoint
    Profile(ProfileArgs),
    /// Run a reference provider
    Provider {
        #[command(subcommand)]
        kind: ProviderKind,
    },
    /// Sort identical arrays at several bit widths, measuring each sort
    Bench(BenchArgs),
}

#[derive(Args)]
struct CaArgs {
    /// JSON config file: {"socket", "topology", "extrapolate", "attribution", "trace_file"}
    #[arg(long, conflicts_with_all = ["topology", "extrapolate", "attribution", "trace_file"])]
    config: Option<PathBuf>,
    /// Topology JSON file (alternative to --config)
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Estimate energy between pushes from each probe's last observed power
    #[arg(long)]
    extrapolate: bool,
    /// SELF attribution policy: "whole" or "trace"
    #[arg(long)]
    attribution: Option<String>,
    /// Attribution trace file (required with --attribution trace)
    #[arg(long)]
    trace_file: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    /// Devices to measure, e.g. `cpu` or `cpu:0,mem`
    #[arg(long, value_delimiter = ',', required = true)]
    devices: Vec<String>,
    /// Measure all processes (default)
    #[arg(long, conflicts_with = "self_scope")]
    all: bool,
    /// Measure only this process's attributed share
    #[arg(long = "self")]
    self_scope: bool,
    /// Command to run and measure
    #[arg(trailing_var_arg = true, required = true)]
    command: Vec<String>,
}

#[derive(Subcommand)]
enum ProviderKind {
    /// Replay a trace file of samples and capability changes
    Trace {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        devices: Vec<String>,
        /// Replay back-to-back instead of on the trace's schedule
        #[arg(long, conflicts_with = "speed")]
        immediate: bool,
        /// Real-time multiplier (2.0 = twice as fast)
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Push a constant power as fixed per-tick samples
    Constant {
        #[arg(long)]
        watts: f64,
        #[arg(long)]
        hz: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        devices: Vec<String>,
        /// Seconds to run (forever when omitted)
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Poll a battery charge file (mAh) and push discharge energy
    Battery {
        #[arg(long)]
        file: PathBuf,
        /// Nominal battery voltage for the mAh -> Joule conversion
        #[arg(long)]
        voltage: f64,
        #[arg(long = "poll-hz")]
        poll_hz: f64,
        #[arg(long, value_delimiter = ',', default_value = "system")]
        devices: Vec<String>,
        /// Stop after this many polls (forever when omitted)
        #[arg(long)]
        polls: Option<u64>,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Comma list of bubble,insertion,quick,merge,libsort,counting
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    /// Comma list of element widths in bits (8,16,32,64)
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<u32>>,
    #[arg(long, default_value_t = 200)]
    runs: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_delimiter = ',', required = true)]
    devices: Vec<String>,
    /// Array lengths: one number for all algorithms, or `alg=N,alg=N`
    #[arg(long)]
    elements: Option<String>,
    /// Also write machine-readable CSV here
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let socket = cli.socket.as_deref();
    match cli.command {
        Command::Ca(args) => commands::run_ca(socket, args),
        Command::Status => commands::run_status(socket),
        Command::Profile(args) => commands::run_profile(socket, args),
        Command::Provider { kind } => commands::run_provider(socket, kind),
        Command::Bench(args) => commands::run_bench_cmd(socket, args),
    }
}
