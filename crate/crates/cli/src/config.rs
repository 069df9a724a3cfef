//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use radscan::io::TimeFormat;
use radscan::simulator::BatchConfig;
use radscan::spectra::{EnergyGrid, DEFAULT_DENSITY_FLOOR};
use radscan::ScanConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub grid: GridSection,
    pub scan: ScanSection,
    pub density: DensitySection,
    pub calibration: CalibrationSection,
    pub simulator: SimulatorSection,
    pub evaluate: EvaluateSection,
    /// 0 uses every available core.
    pub workers: usize,
    pub seed: u64,
    pub time_format: TimeFormatName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub spectra_dir: PathBuf,
    pub runs_dir: PathBuf,
    /// Defaults to `labels.csv` inside the runs directory.
    pub labels_file: Option<PathBuf>,
    /// Defaults to `calibration.csv` inside the output directory.
    pub calibration_file: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            spectra_dir: "spectra".into(),
            runs_dir: "runs".into(),
            labels_file: None,
            calibration_file: None,
            output_dir: "output".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub start_kev: f64,
    pub end_kev: f64,
    pub step_kev: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = EnergyGrid::default();
        Self {
            start_kev: g.start_kev(),
            end_kev: g.end_kev(),
            step_kev: g.step_kev(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub bandwidths_s: Vec<f64>,
    pub tau_min_s: f64,
    pub tau_step_s: f64,
    pub kernel_truncation_sigmas: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        let c = ScanConfig::default();
        Self {
            bandwidths_s: c.bandwidths_s,
            tau_min_s: c.tau_min_s,
            tau_step_s: c.tau_step_s,
            kernel_truncation_sigmas: c.kernel_truncation_sigmas,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    pub kde_bandwidth_kev: f64,
    pub floor: f64,
    /// Null runs sampled from the labels to train the null density.
    pub training_runs: usize,
    pub min_readings: usize,
    /// Prebuilt null pmf; skips training when set.
    pub null_pmf: Option<PathBuf>,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self {
            kde_bandwidth_kev: 1.0,
            floor: DEFAULT_DENSITY_FLOOR,
            training_runs: 100,
            min_readings: 1000,
            null_pmf: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Null runs to calibrate on; 0 takes every null run not used for training.
    pub runs: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { runs: 900 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSection {
    pub n_null: usize,
    pub per_source: usize,
    pub duration_s: [f64; 2],
    pub background_rate_hz: [f64; 2],
    pub source_amplitude_hz: [f64; 2],
    pub standoff_shape_s: [f64; 2],
    /// Overrides the amplitude range with a fixed expected source count.
    pub expected_source_events: Option<f64>,
    pub tau_margin_s: f64,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        let b = BatchConfig::default();
        Self {
            n_null: 500,
            per_source: 25,
            duration_s: b.duration_s.into(),
            background_rate_hz: b.background_rate_hz.into(),
            source_amplitude_hz: b.source_amplitude_hz.into(),
            standoff_shape_s: b.standoff_shape_s.into(),
            expected_source_events: b.expected_source_events,
            tau_margin_s: b.tau_margin_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Thresholds for metrics.csv.
    pub thresholds: Vec<f64>,
    /// Thresholds that also get a confusion matrix and localization file.
    pub phi: Vec<f64>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            thresholds: (0..=40).map(|i| f64::from(i) * 0.25).collect(),
            phi: vec![2.5],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeFormatName {
    #[default]
    Seconds,
    DeltaUs,
}

impl From<TimeFormatName> for TimeFormat {
    fn from(t: TimeFormatName) -> Self {
        match t {
            TimeFormatName::Seconds => TimeFormat::Seconds,
            TimeFormatName::DeltaUs => TimeFormat::DeltaMicros,
        }
    }
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.rebase(base);
        if let Some(p) = &mut config.density.null_pmf {
            *p = base.join(&*p);
        }
        Ok(config)
    }

    pub fn energy_grid(&self) -> Result<EnergyGrid> {
        EnergyGrid::new(self.grid.start_kev, self.grid.end_kev, self.grid.step_kev).context("invalid [grid]")
    }

    pub fn scan_config(&self) -> Result<ScanConfig> {
        let c = ScanConfig {
            bandwidths_s: self.scan.bandwidths_s.clone(),
            tau_min_s: self.scan.tau_min_s,
            tau_step_s: self.scan.tau_step_s,
            kernel_truncation_sigmas: self.scan.kernel_truncation_sigmas,
        };
        c.validate().context("invalid [scan]")?;
        Ok(c)
    }

    pub fn batch_config(&self) -> Result<BatchConfig> {
        let s = &self.simulator;
        let b = BatchConfig {
            duration_s: s.duration_s.into(),
            background_rate_hz: s.background_rate_hz.into(),
            source_amplitude_hz: s.source_amplitude_hz.into(),
            standoff_shape_s: s.standoff_shape_s.into(),
            expected_source_events: s.expected_source_events,
            tau_margin_s: s.tau_margin_s,
        };
        b.validate().context("invalid [simulator]")?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        self.energy_grid()?;
        self.scan_config()?;
        self.batch_config()?;
        let d = &self.density;
        if !(d.kde_bandwidth_kev.is_finite() && d.kde_bandwidth_kev > 0.0) {
            bail!("density.kde_bandwidth_kev must be positive");
        }
        if !(d.floor.is_finite() && d.floor > 0.0) {
            bail!("density.floor must be positive");
        }
        if self.evaluate.thresholds.iter().chain(&self.evaluate.phi).any(|x| x.is_nan()) {
            bail!("evaluate thresholds must not be NaN");
        }
        Ok(())
    }

    pub fn labels_file(&self) -> PathBuf {
        self.paths
            .labels_file
            .clone()
            .unwrap_or_else(|| self.paths.runs_dir.join(radscan::io::LABELS_FILE))
    }

    pub fn calibration_file(&self) -> PathBuf {
        self.paths
            .calibration_file
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("calibration.csv"))
    }

    pub fn tables_dir(&self) -> PathBuf {
        self.paths.output_dir.join("tables")
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.spectra_dir, &mut self.runs_dir, &mut self.output_dir] {
            *p = base.join(&*p);
        }
        for p in [&mut self.labels_file, &mut self.calibration_file].into_iter().flatten() {
            *p = base.join(&*p);
        }
    }
}
