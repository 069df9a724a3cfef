//! CSV file formats.
//!
//! Every parser takes raw bytes and reports the offending line on failure.
//! Floating-point data is written with Rust's shortest round-trip
//! formatting, so write-then-read is lossless.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Trim};

use crate::calibration::{CalibrationEntry, NullCalibration};
use crate::error::{Error, Result};
use crate::scan::{Run, ScanResult};
use crate::simulator::{GroundTruth, SimulatedRun};
use crate::spectra::{EnergyGrid, IntensityHistogram, LogRatioTable, Pmf, SourceVariantId};

pub const SPECTRUM_HEADER: [&str; 2] = ["energy_kev", "count_rate"];
pub const RUN_HEADER: [&str; 2] = ["time", "energy_kev"];
pub const GRID_VALUES_HEADER: [&str; 2] = ["energy_kev", "value"];
pub const CALIBRATION_HEADER: [&str; 5] = ["source", "shielded", "bandwidth_s", "mu0", "sigma0"];
pub const LABELS_HEADER: [&str; 3] = ["run_id", "source_id", "tau_true_s"];
pub const SCORES_HEADER: [&str; 5] = ["run_id", "T", "k_hat", "source_id", "tau_hat_s"];
pub const ZGRID_HEADER: [&str; 7] = ["run_id", "source", "shielded", "bandwidth_s", "Z", "s_tilde", "tau_k_s"];

/// Encoding of the `time` column of a run file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeFormat {
    /// Seconds since the start of the run.
    #[default]
    Seconds,
    /// Microseconds since the previous event (the first since run start).
    DeltaMicros,
}

impl FromStr for TimeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seconds" => Ok(TimeFormat::Seconds),
            "delta-us" => Ok(TimeFormat::DeltaMicros),
            other => Err(Error::invalid(format!("unknown time format `{other}` (seconds|delta-us)"))),
        }
    }
}

impl fmt::Display for TimeFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeFormat::Seconds => "seconds",
            TimeFormat::DeltaMicros => "delta-us",
        })
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .trim(Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn line_of(record: &StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, e.to_string())
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(csv_err)?;
    if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != *b) {
        return Err(Error::parse(
            1,
            format!("expected header `{}`, found `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(())
}

fn records<R: Read>(mut reader: csv::Reader<R>, expected: &[&str]) -> Result<Vec<StringRecord>> {
    check_header(&mut reader, expected)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != expected.len() {
            return Err(Error::parse(line_of(&rec), format!("expected {} fields, found {}", expected.len(), rec.len())));
        }
        out.push(rec);
    }
    Ok(out)
}

fn field<T: FromStr>(rec: &StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = &rec[i];
    raw.parse()
        .map_err(|_| Error::parse(line_of(rec), format!("cannot parse {name} from `{raw}`")))
}

fn finite_field(rec: &StringRecord, i: usize, name: &str) -> Result<f64> {
    let v: f64 = field(rec, i, name)?;
    if !v.is_finite() {
        return Err(Error::parse(line_of(rec), format!("{name} must be finite, got `{}`", &rec[i])));
    }
    Ok(v)
}

fn optional_field(rec: &StringRecord, i: usize, name: &str) -> Result<Option<f64>> {
    if rec[i].is_empty() {
        Ok(None)
    } else {
        finite_field(rec, i, name).map(Some)
    }
}

fn bool_flag(rec: &StringRecord, i: usize, name: &str) -> Result<bool> {
    match &rec[i] {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::parse(line_of(rec), format!("{name} must be 0 or 1, got `{other}`"))),
    }
}

/// Run ids double as file stems and are written unquoted, so separators,
/// quotes and path characters are refused.
fn run_id_field(rec: &StringRecord) -> Result<String> {
    let id = &rec[0];
    if id.is_empty() {
        return Err(Error::parse(line_of(rec), "empty run_id"));
    }
    if id.chars().any(|c| c.is_control() || matches!(c, ',' | '"' | '/' | '\\')) {
        return Err(Error::parse(line_of(rec), format!("run_id {id:?} contains a reserved character")));
    }
    Ok(id.to_string())
}

fn write_err(e: impl fmt::Display) -> Error {
    Error::invalid(format!("write failed: {e}"))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// --- spectra ---------------------------------------------------------------

/// Intensity histogram. `energy_kev` is each bin's lower edge; bins must be
/// evenly spaced. A single-row file is taken to use the default bin width.
pub fn parse_spectrum(input: &[u8]) -> Result<IntensityHistogram> {
    let recs = records(csv_reader(input), &SPECTRUM_HEADER)?;
    if recs.is_empty() {
        return Err(Error::parse(1, "spectrum has no rows"));
    }
    let mut edges = Vec::with_capacity(recs.len());
    let mut counts = Vec::with_capacity(recs.len());
    for rec in &recs {
        edges.push(finite_field(rec, 0, "energy_kev")?);
        counts.push(finite_field(rec, 1, "count_rate")?);
    }
    let width = if edges.len() > 1 {
        edges[1] - edges[0]
    } else {
        IntensityHistogram::DEFAULT_BIN_WIDTH_KEV
    };
    if !(width > 0.0) {
        return Err(Error::parse(line_of(&recs[1]), "spectrum energies must increase"));
    }
    for (j, (e, rec)) in edges.iter().zip(&recs).enumerate() {
        let expected = edges[0] + j as f64 * width;
        if (e - expected).abs() > 1e-6 * width.max(1.0) {
            return Err(Error::parse(line_of(rec), format!("bin edge {e} breaks the {width} keV spacing")));
        }
    }
    IntensityHistogram::new(edges[0], width, counts).map_err(|e| Error::parse(1, e.to_string()))
}

pub fn write_spectrum<W: Write>(hist: &IntensityHistogram, mut out: W) -> Result<()> {
    writeln!(out, "{}", SPECTRUM_HEADER.join(",")).map_err(write_err)?;
    for (j, c) in hist.counts().iter().enumerate() {
        let edge = hist.bin_start_kev() + j as f64 * hist.bin_width_kev();
        writeln!(out, "{edge},{c}").map_err(write_err)?;
    }
    Ok(())
}

/// File name used for a source variant's spectrum in a spectra directory.
pub fn spectrum_file_name(k: SourceVariantId) -> String {
    format!(
        "source_{}_{}.csv",
        k.source(),
        if k.shielded() { "shielded" } else { "unshielded" }
    )
}

pub const BACKGROUND_SPECTRUM_FILE: &str = "background.csv";

// --- grid-aligned values (pmfs, ratio columns) ------------------------------

/// `energy_kev,value` rows on an evenly spaced grid.
pub fn parse_grid_values(input: &[u8]) -> Result<(EnergyGrid, Vec<f64>)> {
    let recs = records(csv_reader(input), &GRID_VALUES_HEADER)?;
    if recs.len() < 2 {
        return Err(Error::parse(1, "need at least two grid rows"));
    }
    let mut energies = Vec::with_capacity(recs.len());
    let mut values = Vec::with_capacity(recs.len());
    for rec in &recs {
        energies.push(finite_field(rec, 0, "energy_kev")?);
        values.push(finite_field(rec, 1, "value")?);
    }
    let start = energies[0];
    let step = energies[1] - energies[0];
    let end = *energies.last().expect("len >= 2");
    let grid = EnergyGrid::new(start, end, step).map_err(|e| Error::parse(1, e.to_string()))?;
    if grid.n_bins() != values.len() {
        return Err(Error::parse(1, "grid rows are not evenly spaced"));
    }
    for (i, (e, rec)) in energies.iter().zip(&recs).enumerate() {
        if (e - grid.energy(i)).abs() > 1e-6 * step {
            return Err(Error::parse(line_of(rec), format!("energy {e} is off the grid")));
        }
    }
    Ok((grid, values))
}

pub fn write_grid_values<W: Write>(grid: &EnergyGrid, values: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "{}", GRID_VALUES_HEADER.join(",")).map_err(write_err)?;
    for (e, v) in grid.energies().zip(values) {
        writeln!(out, "{e},{v}").map_err(write_err)?;
    }
    Ok(())
}

pub fn parse_pmf(input: &[u8]) -> Result<Pmf> {
    let (grid, values) = parse_grid_values(input)?;
    Pmf::new(grid, values).map_err(|e| Error::parse(1, e.to_string()))
}

pub fn pmf_file_name(k: SourceVariantId) -> String {
    format!("pmf_{k}.csv")
}

pub fn ratio_file_name(k: SourceVariantId) -> String {
    format!("ratio_{k}.csv")
}

pub const NULL_PMF_FILE: &str = "pmf_null.csv";

/// Writes one `ratio_<variant>.csv` per variant into `dir`.
pub fn save_log_ratio_table(table: &LogRatioTable, dir: &Path) -> Result<()> {
    for (k, r) in table.iter() {
        let mut buf = Vec::new();
        write_grid_values(table.grid(), r, &mut buf)?;
        write_file(&dir.join(ratio_file_name(k)), &buf)?;
    }
    Ok(())
}

/// Loads every variant whose ratio file is present in `dir`.
pub fn load_log_ratio_table(dir: &Path) -> Result<LogRatioTable> {
    let mut ratios = BTreeMap::new();
    let mut grid = None;
    for k in SourceVariantId::all() {
        let path = dir.join(ratio_file_name(k));
        if !path.exists() {
            continue;
        }
        let (g, r) = parse_grid_values(&read_file(&path)?).map_err(|e| with_path(&path, e))?;
        if grid.is_some_and(|prev| prev != g) {
            return Err(Error::invalid(format!("{} uses a different grid", path.display())));
        }
        grid = Some(g);
        ratios.insert(k, r);
    }
    let grid = grid.ok_or_else(|| Error::invalid(format!("no ratio tables found in {}", dir.display())))?;
    LogRatioTable::from_ratios(grid, ratios)
}

fn with_path(path: &Path, e: Error) -> Error {
    Error::invalid(format!("{}: {e}", path.display()))
}

// --- runs ------------------------------------------------------------------

pub fn parse_run(run_id: &str, input: &[u8], format: TimeFormat) -> Result<Run> {
    let recs = records(csv_reader(input), &RUN_HEADER)?;
    let mut times = Vec::with_capacity(recs.len());
    let mut energies = Vec::with_capacity(recs.len());
    let mut elapsed_us = 0.0;
    for rec in &recs {
        let t = finite_field(rec, 0, "time")?;
        if t < 0.0 {
            return Err(Error::parse(line_of(rec), format!("negative time {t}")));
        }
        let time_s = match format {
            TimeFormat::Seconds => t,
            TimeFormat::DeltaMicros => {
                elapsed_us += t;
                elapsed_us * 1e-6
            }
        };
        if times.last().is_some_and(|&prev| time_s < prev) {
            return Err(Error::parse(line_of(rec), "event times decrease"));
        }
        times.push(time_s);
        energies.push(finite_field(rec, 1, "energy_kev")?);
    }
    Run::from_columns(run_id, times, energies).map_err(|e| Error::parse(1, e.to_string()))
}

pub fn write_run<W: Write>(run: &Run, format: TimeFormat, mut out: W) -> Result<()> {
    writeln!(out, "{}", RUN_HEADER.join(",")).map_err(write_err)?;
    let mut prev = 0.0;
    for e in run.events() {
        match format {
            TimeFormat::Seconds => writeln!(out, "{},{}", e.time_s, e.energy_kev),
            TimeFormat::DeltaMicros => {
                let delta = (e.time_s - prev) * 1e6;
                prev = e.time_s;
                writeln!(out, "{},{}", delta, e.energy_kev)
            }
        }
        .map_err(write_err)?;
    }
    Ok(())
}

pub fn load_run(path: &Path, format: TimeFormat) -> Result<Run> {
    let run_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("bad run file name {}", path.display())))?;
    parse_run(run_id, &read_file(path)?, format).map_err(|e| with_path(path, e))
}

// --- calibration -----------------------------------------------------------

pub fn write_calibration<W: Write>(calib: &NullCalibration, mut out: W) -> Result<()> {
    writeln!(out, "# n_runs={} fingerprint={}", calib.n_runs(), calib.fingerprint()).map_err(write_err)?;
    writeln!(out, "{}", CALIBRATION_HEADER.join(",")).map_err(write_err)?;
    for e in calib.entries() {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.variant.source(),
            u8::from(e.variant.shielded()),
            e.bandwidth_s,
            e.mu0,
            e.sigma0
        )
        .map_err(write_err)?;
    }
    Ok(())
}

/// Parses a calibration file. Use [`NullCalibration::verify`] to bind it to
/// the active table and config.
pub fn parse_calibration(input: &[u8]) -> Result<NullCalibration> {
    let text = std::str::from_utf8(input).map_err(|e| Error::parse(1, format!("not UTF-8: {e}")))?;
    let (first, _) = text.split_once('\n').unwrap_or((text, ""));
    let meta = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(1, "missing `# n_runs=… fingerprint=…` line"))?;
    let mut n_runs = None;
    let mut fingerprint = None;
    for kv in meta.split_whitespace() {
        match kv.split_once('=') {
            Some(("n_runs", v)) => {
                n_runs = Some(v.parse::<usize>().map_err(|_| Error::parse(1, format!("bad n_runs `{v}`")))?)
            }
            Some(("fingerprint", v)) => fingerprint = Some(v.to_string()),
            _ => {}
        }
    }
    let n_runs = n_runs.ok_or_else(|| Error::parse(1, "n_runs missing"))?;
    let fingerprint = fingerprint.ok_or_else(|| Error::parse(1, "fingerprint missing"))?;

    let recs = records(csv_reader(input), &CALIBRATION_HEADER)?;
    let mut entries = Vec::with_capacity(recs.len());
    for rec in &recs {
        let source: u8 = field(rec, 0, "source")?;
        let shielded = bool_flag(rec, 1, "shielded")?;
        let variant = SourceVariantId::new(source, shielded).map_err(|e| Error::parse(line_of(rec), e.to_string()))?;
        entries.push(CalibrationEntry {
            variant,
            bandwidth_s: finite_field(rec, 2, "bandwidth_s")?,
            mu0: finite_field(rec, 3, "mu0")?,
            sigma0: finite_field(rec, 4, "sigma0")?,
        });
    }
    if entries.is_empty() {
        return Err(Error::parse(2, "calibration has no entries"));
    }
    NullCalibration::from_entries(entries, n_runs, fingerprint).map_err(|e| Error::parse(1, e.to_string()))
}

pub fn save_calibration(calib: &NullCalibration, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_calibration(calib, &mut buf)?;
    write_file(path, &buf)
}

/// Loads a calibration and checks it against the active table and config.
pub fn load_calibration(
    path: &Path,
    table: &LogRatioTable,
    config: &crate::scan::ScanConfig,
) -> Result<NullCalibration> {
    let calib = parse_calibration(&read_file(path)?).map_err(|e| with_path(path, e))?;
    calib.verify(table, config)?;
    Ok(calib)
}

// --- labels and manifests ----------------------------------------------------

pub fn parse_labels(input: &[u8]) -> Result<Vec<GroundTruth>> {
    let recs = records(csv_reader(input), &LABELS_HEADER)?;
    recs.iter()
        .map(|rec| {
            let run_id = run_id_field(rec)?;
            let source_id: u8 = field(rec, 1, "source_id")?;
            if source_id > SourceVariantId::N_SOURCES {
                return Err(Error::parse(line_of(rec), format!("source_id {source_id} outside 0..=6")));
            }
            let tau_true_s = optional_field(rec, 2, "tau_true_s")?;
            if (source_id == 0) != tau_true_s.is_none() {
                return Err(Error::parse(
                    line_of(rec),
                    "tau_true_s must be present exactly when source_id is non-zero",
                ));
            }
            Ok(GroundTruth {
                run_id,
                source_id,
                shielded: None,
                tau_true_s,
            })
        })
        .collect()
}

pub fn write_labels<W: Write>(truths: &[GroundTruth], mut out: W) -> Result<()> {
    writeln!(out, "{}", LABELS_HEADER.join(",")).map_err(write_err)?;
    for t in truths {
        let tau = t.tau_true_s.map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", t.run_id, t.source_id, tau).map_err(write_err)?;
    }
    Ok(())
}

pub const MANIFEST_HEADER: [&str; 10] = [
    "run_id",
    "file",
    "source_id",
    "variant",
    "tau_true_s",
    "duration_s",
    "background_rate_hz",
    "source_amplitude_hz",
    "standoff_shape_s",
    "seed",
];

/// Full generating parameters for a simulated batch.
pub fn write_manifest<W: Write>(runs: &[SimulatedRun], mut out: W) -> Result<()> {
    writeln!(out, "{}", MANIFEST_HEADER.join(",")).map_err(write_err)?;
    for r in runs {
        let c = &r.config;
        writeln!(
            out,
            "{},{}.csv,{},{},{},{},{},{},{},{}",
            c.run_id,
            c.run_id,
            r.truth.source_id,
            c.source_variant.map(|v| v.to_string()).unwrap_or_default(),
            r.truth.tau_true_s.map(|x| x.to_string()).unwrap_or_default(),
            c.duration_s,
            c.background_rate_hz,
            c.source_amplitude_hz,
            c.standoff_shape_s,
            c.seed
        )
        .map_err(write_err)?;
    }
    Ok(())
}

/// Writes `<run_id>.csv` per run plus `labels.csv` and `manifest.csv`.
pub fn write_dataset(runs: &[SimulatedRun], dir: &Path, format: TimeFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in runs {
        let mut buf = Vec::new();
        write_run(&r.run, format, &mut buf)?;
        write_file(&dir.join(format!("{}.csv", r.run.run_id())), &buf)?;
    }
    let truths: Vec<GroundTruth> = runs.iter().map(|r| r.truth.clone()).collect();
    let mut labels = Vec::new();
    write_labels(&truths, &mut labels)?;
    write_file(&dir.join(LABELS_FILE), &labels)?;
    let mut manifest = Vec::new();
    write_manifest(runs, &mut manifest)?;
    write_file(&dir.join(MANIFEST_FILE), &manifest)
}

pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

// --- scores ----------------------------------------------------------------

pub fn write_scores<W: Write>(results: &[ScanResult], mut out: W) -> Result<()> {
    writeln!(out, "{}", SCORES_HEADER.join(",")).map_err(write_err)?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.run_id,
            r.statistic,
            r.k_hat.map(|k| k.to_string()).unwrap_or_default(),
            r.source_id(),
            r.tau_hat_s.map(|x| x.to_string()).unwrap_or_default()
        )
        .map_err(write_err)?;
    }
    Ok(())
}

/// Long form: one row per (run, variant, bandwidth).
pub fn write_z_grid<W: Write>(results: &[ScanResult], mut out: W) -> Result<()> {
    writeln!(out, "{}", ZGRID_HEADER.join(",")).map_err(write_err)?;
    for r in results {
        for e in &r.z_grid {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.run_id,
                e.variant.source(),
                u8::from(e.variant.shielded()),
                e.bandwidth_s,
                e.z,
                e.s_tilde,
                e.tau_s
            )
            .map_err(write_err)?;
        }
    }
    Ok(())
}

/// Reads the summary scores file back into z-grid-less results.
pub fn parse_scores(input: &[u8]) -> Result<Vec<ScanResult>> {
    let recs = records(csv_reader(input), &SCORES_HEADER)?;
    recs.iter()
        .map(|rec| {
            let run_id = run_id_field(rec)?;
            let statistic: f64 = field(rec, 1, "T")?;
            if statistic.is_nan() {
                return Err(Error::parse(line_of(rec), "T is NaN"));
            }
            let k_hat = if rec[2].is_empty() {
                None
            } else {
                Some(rec[2].parse::<SourceVariantId>().map_err(|e| Error::parse(line_of(rec), e.to_string()))?)
            };
            let source_id: u8 = field(rec, 3, "source_id")?;
            if source_id != k_hat.map_or(0, |k| k.source()) {
                return Err(Error::parse(line_of(rec), "source_id disagrees with k_hat"));
            }
            let tau_hat_s = optional_field(rec, 4, "tau_hat_s")?;
            Ok(ScanResult::summary(run_id, statistic, k_hat, tau_hat_s))
        })
        .collect()
}

/// `%g`-style rendering with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
