//! Sorting use-case harness: sort identical integer arrays at several bit
//! widths with several algorithms, checkpointing tightly around each sort,
//! and emit a table of total time, total energy and average power per cell.
//!
//! Element values are bytes (0..=255), so arrays at every width carry the
//! same numeric content; a fixed seed reproduces the same arrays across
//! widths, algorithms and runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::client::{Scope, Session};
use crate::model::{Device, ErrorCode};
use crate::sort::{run_sort, Algorithm, SortValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Width {
    W8,
    W16,
    W32,
    W64,
}

impl Width {
    pub const ALL: [Width; 4] = [Width::W8, Width::W16, Width::W32, Width::W64];

    pub fn bits(self) -> u32 {
        match self {
            Width::W8 => 8,
            Width::W16 => 16,
            Width::W32 => 32,
            Width::W64 => 64,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Width::W8 => "uint8_t",
            Width::W16 => "uint16_t",
            Width::W32 => "uint32_t",
            Width::W64 => "uint64_t",
        }
    }

    pub fn from_bits(bits: u32) -> Option<Width> {
        Width::ALL.into_iter().find(|w| w.bits() == bits)
    }
}

/// Per-algorithm array lengths keeping run times comparable across
/// algorithms of different complexity.
pub fn default_elements() -> BTreeMap<Algorithm, usize> {
    [
        (Algorithm::Bubble, 50_000),
        (Algorithm::Insertion, 200_000),
        (Algorithm::Quick, 2_000_000),
        (Algorithm::Merge, 60_000_000),
        (Algorithm::Libsort, 100_000_000),
        (Algorithm::Counting, 200_000_000),
    ]
    .into_iter()
    .collect()
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    pub widths: Vec<Width>,
    pub elements: BTreeMap<Algorithm, usize>,
    pub runs: u32,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            algorithms: Algorithm::ALL.to_vec(),
            widths: Width::ALL.to_vec(),
            elements: default_elements(),
            runs: 200,
            seed: 1,
        }
    }
}

/// One (algorithm, width) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub algorithm: Algorithm,
    pub width: Width,
    pub elements: usize,
    pub runs: u32,
    pub total_time_s: f64,
    pub total_energy_j: f64,
    pub avg_power_w: f64,
    pub stddev_time: f64,
    pub stddev_energy: f64,
}

/// All cells plus the shape needed to lay the table out.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub algorithms: Vec<(Algorithm, usize)>,
    pub widths: Vec<Width>,
    pub results: Vec<BenchResult>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{0}")]
    Code(#[from] ErrorCode),
    #[error("{algorithm} produced wrong output for {width}-bit run {run}")]
    SortCheck { algorithm: Algorithm, width: u32, run: u32 },
}

fn splitmix_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic uniform bytes for one run: a pure function of (seed, run, n).
pub fn generate_values(seed: u64, run: u32, n: usize) -> Vec<u8> {
    let mut state = seed ^ (u64::from(run) + 1).wrapping_mul(0xA076_1D64_78BD_642F);
    (0..n).map(|_| (splitmix_next(&mut state) & 0xff) as u8).collect()
}

fn byte_histogram(bytes: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &b in bytes {
        h[b as usize] += 1;
    }
    h
}

struct RunMeasurement {
    time_s: f64,
    energy_j: f64,
}

fn measure_run<T: SortValue>(
    session: &mut Session,
    devices: &[Device],
    algorithm: Algorithm,
    base: &[u8],
) -> Result<Option<RunMeasurement>, ErrorCode> {
    let mut data: Vec<T> = base.iter().map(|&b| T::from_byte(b)).collect();
    let checkpoint = session.set_checkpoint(Scope::All, devices)?;
    let started = Instant::now();
    run_sort(algorithm, &mut data);
    let time_s = started.elapsed().as_secs_f64();
    let sample = session.sample_checkpoint(&checkpoint)?;
    session.delete_checkpoint(checkpoint)?;

    let sorted = data.windows(2).all(|w| w[0] <= w[1]);
    let mut hist = byte_histogram(base);
    for v in &data {
        let idx = v.to_index();
        if idx >= 256 || hist[idx] == 0 {
            return Ok(None);
        }
        hist[idx] -= 1;
    }
    if !sorted || hist.iter().any(|&c| c != 0) {
        return Ok(None);
    }
    Ok(Some(RunMeasurement { time_s, energy_j: sample.joules }))
}

fn stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    var.sqrt()
}

/// Run the whole matrix. Every run's output is checked for sortedness and
/// multiset equality with its input; a failed check aborts the bench.
pub fn run_bench(
    session: &mut Session,
    config: &BenchConfig,
    devices: &[Device],
) -> Result<BenchReport, BenchError> {
    let mut results = Vec::new();
    let mut algorithms = Vec::new();
    for &algorithm in &config.algorithms {
        let n = config
            .elements
            .get(&algorithm)
            .copied()
            .unwrap_or_else(|| default_elements()[&algorithm]);
        algorithms.push((algorithm, n));
        for &width in &config.widths {
            let mut times = Vec::with_capacity(config.runs as usize);
            let mut energies = Vec::with_capacity(config.runs as usize);
            for run in 0..config.runs {
                let base = generate_values(config.seed, run, n);
                let measured = match width {
                    Width::W8 => measure_run::<u8>(session, devices, algorithm, &base),
                    Width::W16 => measure_run::<u16>(session, devices, algorithm, &base),
                    Width::W32 => measure_run::<u32>(session, devices, algorithm, &base),
                    Width::W64 => measure_run::<u64>(session, devices, algorithm, &base),
                }?;
                let Some(m) = measured else {
                    return Err(BenchError::SortCheck { algorithm, width: width.bits(), run });
                };
                times.push(m.time_s);
                energies.push(m.energy_j);
            }
            let total_time_s: f64 = times.iter().sum();
            let total_energy_j: f64 = energies.iter().sum();
            results.push(BenchResult {
                algorithm,
                width,
                elements: n,
                runs: config.runs,
                total_time_s,
                total_energy_j,
                avg_power_w: if total_time_s > 0.0 { total_energy_j / total_time_s } else { 0.0 },
                stddev_time: stddev(&times),
                stddev_energy: stddev(&energies),
            });
        }
    }
    Ok(BenchReport { algorithms, widths: config.widths.clone(), results })
}

fn center(text: &str, width: usize) -> String {
    if text.len() >= width {
        return text.to_string();
    }
    let pad = width - text.len();
    format!("{}{}{}", " ".repeat(pad / 2), text, " ".repeat(pad - pad / 2))
}

/// Text table: one row per algorithm, a (time, energy, power) column group
/// per width, values to two decimals.
pub fn render_table(report: &BenchReport) -> String {
    const TIME: &str = "Total Time (s)";
    const ENERGY: &str = "Total Energy (J)";
    const POWER: &str = "Average Power (W)";
    let name_w = "Algorithm"
        .len()
        .max(report.algorithms.iter().map(|(a, _)| a.display_name().len()).max().unwrap_or(0));
    let elem_w = "Num Elements"
        .len()
        .max(report.algorithms.iter().map(|(_, n)| n.to_string().len()).max().unwrap_or(0));
    let group_w = TIME.len() + ENERGY.len() + POWER.len() + 2 * 3; // three cells, two inner separators

    let mut out = String::new();
    // width banner
    write!(out, "{:name_w$} | {:elem_w$}", "", "").unwrap();
    for width in &report.widths {
        write!(out, " | {}", center(width.label(), group_w)).unwrap();
    }
    out.push('\n');
    // column headers
    write!(out, "{:<name_w$} | {:>elem_w$}", "Algorithm", "Num Elements").unwrap();
    for _ in &report.widths {
        write!(out, " | {TIME} | {ENERGY} | {POWER}").unwrap();
    }
    out.push('\n');
    let rule_len = out.lines().last().map(str::len).unwrap_or(0);
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');
    // one row per algorithm
    for &(algorithm, elements) in &report.algorithms {
        write!(out, "{:<name_w$} | {:>elem_w$}", algorithm.display_name(), elements).unwrap();
        for &width in &report.widths {
            let cell = report
                .results
                .iter()
                .find(|r| r.algorithm == algorithm && r.width == width);
            match cell {
                Some(r) => write!(
                    out,
                    " | {:>tw$.2} | {:>ew$.2} | {:>pw$.2}",
                    r.total_time_s,
                    r.total_energy_j,
                    r.avg_power_w,
                    tw = TIME.len(),
                    ew = ENERGY.len(),
                    pw = POWER.len(),
                )
                .unwrap(),
                None => write!(
                    out,
                    " | {:>tw$} | {:>ew$} | {:>pw$}",
                    "-",
                    "-",
                    "-",
                    tw = TIME.len(),
                    ew = ENERGY.len(),
                    pw = POWER.len(),
                )
                .unwrap(),
            }
        }
        out.push('\n');
    }
    out
}

/// Machine-readable results, full precision.
pub fn render_csv(report: &BenchReport) -> String {
    let mut out = String::from(
        "algorithm,width_bits,elements,runs,total_time_s,total_energy_j,avg_power_w,stddev_time_s,stddev_energy_j\n",
    );
    for r in &report.results {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.algorithm.token(),
            r.width.bits(),
            r.elements,
            r.runs,
            r.total_time_s,
            r.total_energy_j,
            r.avg_power_w,
            r.stddev_time,
            r.stddev_energy
        )
        .unwrap();
    }
    out
}
