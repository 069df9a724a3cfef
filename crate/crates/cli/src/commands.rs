use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use radscan::evaluation::{confusion_matrix, join_outcomes, metrics_over_thresholds, roc_auc, LabeledOutcome};
use radscan::io::{self, format_sig, TimeFormat};
use radscan::simulator::{simulate_batch, GroundTruth, Simulator};
use radscan::spectra::{build_log_ratio_table, pmf_from_intensity_histogram, with_source6_mixture, NullDensityEstimator};
use radscan::synthetic::SpectrumLibrary;
use radscan::{decide, scan_run, EnergyGrid, LogRatioTable, Pmf, Run, ScanResult, SourceVariantId};

use crate::config::PipelineConfig;

pub const TRAINING_RUNS_FILE: &str = "training_runs.txt";
pub const CALIBRATION_RUNS_FILE: &str = "calibration_runs.txt";
pub const SCORES_FILE: &str = "scores.csv";
pub const Z_GRID_FILE: &str = "z_grid.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// Offsets the base seed per command so training and calibration draws differ.
const CALIBRATION_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

fn describe(k: SourceVariantId) -> String {
    format!("{} {}", k.source(), if k.shielded() { "shielded" } else { "unshielded" })
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    ensure!(path.is_dir(), "{what} directory {} does not exist", path.display());
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    ensure!(path.is_file(), "{what} {} does not exist", path.display());
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    io::write_file(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Source pmfs for sources 1–5 from the spectra directory plus the
/// synthesized source 6.
fn load_source_pmfs(config: &PipelineConfig, grid: &EnergyGrid) -> Result<BTreeMap<SourceVariantId, Pmf>> {
    let dir = &config.paths.spectra_dir;
    require_dir(dir, "spectra")?;
    let mut pmfs = BTreeMap::new();
    for k in SourceVariantId::all().filter(|k| k.source() < SourceVariantId::N_SOURCES) {
        let path = dir.join(io::spectrum_file_name(k));
        if !path.is_file() {
            bail!("missing spectrum for source {}: expected {}", describe(k), path.display());
        }
        let hist = io::parse_spectrum(&io::read_file(&path)?).with_context(|| format!("reading {}", path.display()))?;
        let pmf = pmf_from_intensity_histogram(&hist, grid)
            .with_context(|| format!("normalizing spectrum for source {}", describe(k)))?;
        pmfs.insert(k, pmf);
    }
    Ok(with_source6_mixture(pmfs)?)
}

fn load_background_pmf(config: &PipelineConfig, grid: &EnergyGrid) -> Result<Pmf> {
    let path = config.paths.spectra_dir.join(io::BACKGROUND_SPECTRUM_FILE);
    require_file(&path, "background spectrum")?;
    let hist = io::parse_spectrum(&io::read_file(&path)?).with_context(|| format!("reading {}", path.display()))?;
    pmf_from_intensity_histogram(&hist, grid).context("normalizing background spectrum")
}

fn load_labels(config: &PipelineConfig) -> Result<Vec<GroundTruth>> {
    let path = config.labels_file();
    require_file(&path, "labels file")?;
    io::parse_labels(&io::read_file(&path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

fn load_runs(dir: &Path, ids: &[String], format: TimeFormat) -> Result<Vec<Run>> {
    ids.par_iter()
        .map(|id| {
            let path = dir.join(format!("{id}.csv"));
            io::load_run(&path, format).with_context(|| format!("loading run {}", path.display()))
        })
        .collect()
}

/// `m` ids drawn without replacement, returned sorted.
fn sample_ids(ids: &[String], m: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = rand::seq::index::sample(&mut rng, ids.len(), m)
        .into_iter()
        .map(|i| ids[i].clone())
        .collect();
    picked.sort();
    picked
}

fn null_ids(labels: &[GroundTruth], exclude: &BTreeSet<String>) -> Vec<String> {
    let mut ids: Vec<String> = labels
        .iter()
        .filter(|t| !t.has_source() && !exclude.contains(&t.run_id))
        .map(|t| t.run_id.clone())
        .collect();
    ids.sort();
    ids
}

fn load_table(config: &PipelineConfig) -> Result<LogRatioTable> {
    let dir = config.tables_dir();
    require_dir(&dir, "tables")?;
    let table = io::load_log_ratio_table(&dir).with_context(|| format!("loading tables from {}", dir.display()))?;
    ensure!(
        *table.grid() == config.energy_grid()?,
        "tables in {} were built on a different energy grid than the config's",
        dir.display()
    );
    Ok(table)
}

pub fn synth_spectra(config: &PipelineConfig) -> Result<()> {
    let lib = SpectrumLibrary::synthetic()?;
    let dir = &config.paths.spectra_dir;
    for (k, hist) in &lib.sources {
        let mut buf = Vec::new();
        io::write_spectrum(hist, &mut buf)?;
        write_bytes(&dir.join(io::spectrum_file_name(*k)), &buf)?;
    }
    let mut buf = Vec::new();
    io::write_spectrum(&lib.background, &mut buf)?;
    write_bytes(&dir.join(io::BACKGROUND_SPECTRUM_FILE), &buf)?;
    println!("wrote {} source spectra and the background to {}", lib.sources.len(), dir.display());
    Ok(())
}

pub fn simulate(config: &PipelineConfig) -> Result<()> {
    let grid = config.energy_grid()?;
    let sources = load_source_pmfs(config, &grid)?;
    let background = load_background_pmf(config, &grid)?;
    let simulator = Simulator::new(&background, &sources)?;
    let batch = config.batch_config()?;
    let s = &config.simulator;
    let runs = simulate_batch(&simulator, s.n_null, s.per_source, &batch, config.seed)?;
    let dir = &config.paths.runs_dir;
    io::write_dataset(&runs, dir, config.time_format.into())?;
    let events: usize = runs.iter().map(|r| r.run.len()).sum();
    println!(
        "simulated {} runs ({} null, {} per variant), {events} events, into {}",
        runs.len(),
        s.n_null,
        s.per_source,
        dir.display()
    );
    Ok(())
}

pub fn build_tables(config: &PipelineConfig) -> Result<()> {
    let grid = config.energy_grid()?;
    let sources = load_source_pmfs(config, &grid)?;
    let d = &config.density;
    let (null, training) = match &d.null_pmf {
        Some(path) => {
            require_file(path, "null pmf")?;
            let pmf = io::parse_pmf(&io::read_file(path)?).with_context(|| format!("reading {}", path.display()))?;
            ensure!(*pmf.grid() == grid, "null pmf {} is on a different energy grid", path.display());
            (pmf, Vec::new())
        }
        None => {
            require_dir(&config.paths.runs_dir, "runs")?;
            let candidates = null_ids(&load_labels(config)?, &BTreeSet::new());
            ensure!(
                candidates.len() >= d.training_runs && d.training_runs > 0,
                "null density training needs {} null runs, the labels list {}",
                d.training_runs,
                candidates.len()
            );
            let training = sample_ids(&candidates, d.training_runs, config.seed);
            let runs = load_runs(&config.paths.runs_dir, &training, config.time_format.into())?;
            let energies: Vec<f64> = runs.iter().flat_map(|r| r.energies().iter().copied()).collect();
            let estimator = NullDensityEstimator {
                bandwidth_kev: d.kde_bandwidth_kev,
                min_readings: d.min_readings,
            };
            let pmf = estimator.estimate(&energies, &grid).context("estimating the null density")?;
            println!("null density from {} runs, {} readings", training.len(), energies.len());
            (pmf, training)
        }
    };
    let table = build_log_ratio_table(&sources, &null, d.floor)?;

    let dir = config.tables_dir();
    let mut buf = Vec::new();
    io::write_grid_values(&grid, null.mass(), &mut buf)?;
    write_bytes(&dir.join(io::NULL_PMF_FILE), &buf)?;
    for (k, pmf) in &sources {
        let mut buf = Vec::new();
        io::write_grid_values(&grid, pmf.mass(), &mut buf)?;
        write_bytes(&dir.join(io::pmf_file_name(*k)), &buf)?;
    }
    io::save_log_ratio_table(&table, &dir)?;
    write_id_list(&dir.join(TRAINING_RUNS_FILE), &training)?;

    println!(
        "grid {}–{} keV step {} ({} bins); null mass {:.12}",
        grid.start_kev(),
        grid.end_kev(),
        grid.step_kev(),
        grid.n_bins(),
        null.total()
    );
    for (k, ratios) in table.iter() {
        let positive = ratios.iter().filter(|&&r| r > 0.0).count();
        let max = ratios.iter().copied().fold(0.0, f64::max);
        println!(
            "  {:<14} mass {:.12}  positive bins {positive:>5}  max R {}",
            describe(k),
            sources[&k].total(),
            format_sig(max, 6)
        );
    }
    println!("wrote {} variant tables to {}", table.n_variants(), dir.display());
    Ok(())
}

pub fn calibrate(config: &PipelineConfig) -> Result<()> {
    let table = load_table(config)?;
    let scan = config.scan_config()?;
    require_dir(&config.paths.runs_dir, "runs")?;
    let training = read_id_list(&config.tables_dir().join(TRAINING_RUNS_FILE))?;
    let candidates = null_ids(&load_labels(config)?, &training);
    let wanted = config.calibration.runs;
    let ids = if wanted == 0 || wanted >= candidates.len() {
        candidates
    } else {
        sample_ids(&candidates, wanted, config.seed ^ CALIBRATION_SEED_OFFSET)
    };
    ensure!(ids.len() >= 2, "calibration needs at least 2 null runs outside the training set, found {}", ids.len());
    let runs = load_runs(&config.paths.runs_dir, &ids, config.time_format.into())?;
    let calib = radscan::calibrate(&runs, &table, &scan)?;
    let path = config.calibration_file();
    io::save_calibration(&calib, &path)?;
    write_id_list(&config.paths.output_dir.join(CALIBRATION_RUNS_FILE), &ids)?;
    let sigma = calib.entries().iter().map(|e| e.sigma0);
    println!(
        "calibrated {} (variant, bandwidth) pairs on {} null runs; sigma0 in [{}, {}]; wrote {}",
        calib.entries().len(),
        ids.len(),
        format_sig(sigma.clone().fold(f64::INFINITY, f64::min), 6),
        format_sig(sigma.fold(0.0, f64::max), 6),
        path.display()
    );
    Ok(())
}

fn run_files(dir: &Path) -> Result<Vec<PathBuf>> {
    require_dir(dir, "runs")?;
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if path.extension().is_some_and(|e| e == "csv") && name != io::LABELS_FILE && name != io::MANIFEST_FILE {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn score(config: &PipelineConfig, z_grid: bool) -> Result<()> {
    let table = load_table(config)?;
    let scan = config.scan_config()?;
    let calib_path = config.calibration_file();
    require_file(&calib_path, "calibration file")?;
    let calib = io::load_calibration(&calib_path, &table, &scan)
        .with_context(|| format!("calibration {} cannot be used with the current tables", calib_path.display()))?;
    let files = run_files(&config.paths.runs_dir)?;
    ensure!(!files.is_empty(), "no run files in {}", config.paths.runs_dir.display());
    let format: TimeFormat = config.time_format.into();
    let mut results: Vec<ScanResult> = files
        .par_iter()
        .map(|path| {
            let run = io::load_run(path, format).with_context(|| format!("loading run {}", path.display()))?;
            Ok(scan_run(&run, &table, &calib, &scan)?)
        })
        .collect::<Result<_>>()?;
    results.sort_by(|a, b| a.run_id.cmp(&b.run_id));

    let out = &config.paths.output_dir;
    let mut buf = Vec::new();
    io::write_scores(&results, &mut buf)?;
    write_bytes(&out.join(SCORES_FILE), &buf)?;
    if z_grid {
        let mut buf = Vec::new();
        io::write_z_grid(&results, &mut buf)?;
        write_bytes(&out.join(Z_GRID_FILE), &buf)?;
    }
    println!("scored {} runs into {}", results.len(), out.join(SCORES_FILE).display());
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format_sig(v, 6)).unwrap_or_default()
}

pub fn evaluate(config: &PipelineConfig) -> Result<()> {
    let out = &config.paths.output_dir;
    let scores_path = out.join(SCORES_FILE);
    require_file(&scores_path, "scores file")?;
    let scores = io::parse_scores(&io::read_file(&scores_path)?).with_context(|| format!("reading {}", scores_path.display()))?;
    let labels = load_labels(config)?;

    // Runs that trained the null density or calibrated the scores are not
    // evaluated.
    let mut held = read_id_list(&config.tables_dir().join(TRAINING_RUNS_FILE))?;
    held.extend(read_id_list(&out.join(CALIBRATION_RUNS_FILE))?);
    let labels: Vec<GroundTruth> = labels.into_iter().filter(|t| !held.contains(&t.run_id)).collect();
    let scores: Vec<ScanResult> = scores.into_iter().filter(|r| !held.contains(&r.run_id)).collect();
    let outcomes = join_outcomes(labels, scores)?;

    let mut phis = config.evaluate.phi.clone();
    phis.sort_by(f64::total_cmp);
    phis.dedup();
    let mut thresholds: Vec<f64> = config.evaluate.thresholds.iter().chain(&phis).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let metrics = metrics_over_thresholds(&outcomes, &thresholds)?;

    let mut csv = String::from(
        "phi,tpr,fpr,precision,id_accuracy_detected,id_accuracy_all_sources,n_detected,loc_median_s,loc_mean_s,loc_p95_s\n",
    );
    for m in &metrics {
        let loc = m.localization;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            format_sig(m.phi, 6),
            format_sig(m.tpr, 6),
            format_sig(m.fpr, 6),
            format_sig(m.precision, 6),
            opt(m.id_accuracy),
            opt(m.id_accuracy_all_sources),
            m.n_detected,
            opt(loc.map(|l| l.median_s)),
            opt(loc.map(|l| l.mean_s)),
            opt(loc.map(|l| l.p95_s)),
        )?;
    }
    write_bytes(&out.join(METRICS_FILE), csv.as_bytes())?;

    let n_sources = outcomes.iter().filter(|o| o.truth.has_source()).count();
    println!(
        "evaluated {} runs ({} with a source, {} held out); ROC AUC {}",
        outcomes.len(),
        n_sources,
        held.len(),
        roc_auc(&outcomes).map_or("n/a".into(), |a| format_sig(a, 6))
    );
    for &phi in &phis {
        write_confusion(&outcomes, phi, out)?;
        write_localization(&outcomes, phi, out)?;
        let m = &metrics[thresholds.iter().position(|t| *t == phi).expect("phi is among the thresholds")];
        println!(
            "  phi {}: tpr {} fpr {} precision {} id accuracy {} (all sources {}) median loc {} s",
            format_sig(phi, 6),
            format_sig(m.tpr, 6),
            format_sig(m.fpr, 6),
            format_sig(m.precision, 6),
            opt(m.id_accuracy),
            opt(m.id_accuracy_all_sources),
            opt(m.localization.map(|l| l.median_s)),
        );
    }
    Ok(())
}

fn write_confusion(outcomes: &[LabeledOutcome], phi: f64, out: &Path) -> Result<()> {
    let cm = confusion_matrix(outcomes, phi);
    let mut csv = String::from("true_source");
    for k in 0..cm.counts.len() {
        write!(csv, ",est_{k}")?;
    }
    csv.push('\n');
    for (k, row) in cm.counts.iter().enumerate() {
        write!(csv, "{k}")?;
        for c in row {
            write!(csv, ",{c}")?;
        }
        csv.push('\n');
    }
    write_bytes(&out.join(format!("confusion_phi{}.csv", format_sig(phi, 6))), csv.as_bytes())
}

fn write_localization(outcomes: &[LabeledOutcome], phi: f64, out: &Path) -> Result<()> {
    let mut csv = String::from("run_id,source_id,tau_true_s,tau_hat_s,distance_s\n");
    for o in outcomes {
        let d = decide(&o.result, phi);
        if let (true, Some(truth), Some(hat)) = (d.source_present, o.truth.tau_true_s, d.tau_s) {
            writeln!(
                csv,
                "{},{},{},{},{}",
                o.truth.run_id,
                o.truth.source_id,
                format_sig(truth, 6),
                format_sig(hat, 6),
                format_sig((hat - truth).abs(), 6)
            )?;
        }
    }
    write_bytes(&out.join(format!("localization_phi{}.csv", format_sig(phi, 6))), csv.as_bytes())
}
