//! Per-run scoring.
//!
//! Events are mapped to per-variant evidence through a [`LogRatioTable`],
//! smoothed in time with a Gaussian kernel, maximized over a grid of
//! candidate closest-approach times, standardized against the null
//! calibration, and reduced to the scan statistic `T`.

use crate::calibration::NullCalibration;
use crate::error::{Error, Result};
use crate::spectra::{LogRatioTable, SourceVariantId};

/// Lower bound applied to σ₀ when standardizing.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Slack on the τ grid length so an end time that is an exact multiple of
/// the step keeps its last point after rounding.
const GRID_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time_s: f64,
    pub energy_kev: f64,
}

/// One sensor pass: events ordered by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    run_id: String,
    times: Vec<f64>,
    energies: Vec<f64>,
}

impl Run {
    pub fn new(run_id: impl Into<String>, events: impl IntoIterator<Item = Event>) -> Result<Self> {
        let (times, energies) = events.into_iter().map(|e| (e.time_s, e.energy_kev)).unzip();
        Self::from_columns(run_id, times, energies)
    }

    pub fn from_columns(run_id: impl Into<String>, times: Vec<f64>, energies: Vec<f64>) -> Result<Self> {
        let run_id = run_id.into();
        if times.len() != energies.len() {
            return Err(Error::invalid("time and energy columns differ in length"));
        }
        if times.is_empty() {
            return Err(Error::invalid(format!("run `{run_id}` has no events")));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::invalid(format!("run `{run_id}` has invalid event time {t}")));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid(format!("run `{run_id}` has a non-finite energy")));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!(
                "run `{run_id}` event times decrease at event {}",
                i + 1
            )));
        }
        Ok(Self {
            run_id,
            times,
            energies,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn events(&self) -> impl Iterator<Item = Event> + '_ {
        self.times
            .iter()
            .zip(&self.energies)
            .map(|(&time_s, &energy_kev)| Event { time_s, energy_kev })
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("runs are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub bandwidths_s: Vec<f64>,
    pub tau_min_s: f64,
    pub tau_step_s: f64,
    pub kernel_truncation_sigmas: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            bandwidths_s: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            tau_min_s: 30.0,
            tau_step_s: 0.25,
            kernel_truncation_sigmas: 5.0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidths_s.is_empty() {
            return Err(Error::invalid("scan needs at least one bandwidth"));
        }
        if self.bandwidths_s.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::invalid("bandwidths must be positive and finite"));
        }
        let mut sorted = self.bandwidths_s.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("bandwidths must be distinct"));
        }
        if !(self.tau_min_s.is_finite() && self.tau_min_s > 0.0) {
            return Err(Error::invalid("tau_min_s must be positive"));
        }
        if !(self.kernel_truncation_sigmas.is_finite() && self.kernel_truncation_sigmas > 0.0) {
            return Err(Error::invalid("kernel truncation must be positive"));
        }
        let min_h = sorted[0];
        if !(self.tau_step_s > 0.0 && self.tau_step_s <= min_h) {
            return Err(Error::invalid(format!(
                "tau_step_s {} must be positive and at most the smallest bandwidth {min_h}",
                self.tau_step_s
            )));
        }
        Ok(())
    }

    /// Bandwidths in ascending order.
    pub fn sorted_bandwidths(&self) -> Vec<f64> {
        let mut h = self.bandwidths_s.clone();
        h.sort_by(f64::total_cmp);
        h
    }

    /// Candidate closest-approach times for a run ending at `last_time_s`.
    pub fn tau_grid(&self, last_time_s: f64) -> TauGrid {
        let len = if last_time_s > self.tau_min_s {
            ((last_time_s - self.tau_min_s) / self.tau_step_s + GRID_SLACK).floor() as usize + 1
        } else {
            1
        };
        TauGrid {
            start: self.tau_min_s,
            step: self.tau_step_s,
            len,
        }
    }
}

/// `start, start + step, …` with `len` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl TauGrid {
    pub fn point(&self, j: usize) -> f64 {
        self.start + j as f64 * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|j| self.point(j))
    }
}

/// Unnormalized Gaussian weight at lag `d` for standard deviation `h`.
#[inline]
pub fn kernel_weight(d: f64, h: f64) -> f64 {
    let u = d / h;
    (-0.5 * u * u).exp()
}

/// Per-event evidence `R_ik` for one variant, aligned with the run's events.
pub fn event_evidence(run: &Run, table: &LogRatioTable, k: SourceVariantId) -> Vec<f64> {
    run.energies.iter().map(|&e| table.lookup(k, e)).collect()
}

/// Kernel-smoothed evidence at a single τ. Events farther than
/// `truncation · h` from τ are skipped.
pub fn smoothed_score(evidence: &[f64], times: &[f64], tau: f64, h: f64, truncation: f64) -> f64 {
    let reach = truncation * h;
    let mut s = 0.0;
    for (&r, &t) in evidence.iter().zip(times) {
        let d = t - tau;
        if d.abs() > reach {
            continue;
        }
        s += kernel_weight(d, h) * r;
    }
    s
}

/// Maximum of the smoothed score over the τ grid and the first τ attaining it.
pub fn maximize_over_tau(evidence: &[f64], times: &[f64], h: f64, config: &ScanConfig) -> (f64, f64) {
    assert_eq!(evidence.len(), times.len(), "evidence and times must align");
    let matrix = EvidenceMatrix {
        n_cols: 1,
        times: times.to_vec(),
        values: evidence.to_vec(),
    };
    let last = times.last().copied().unwrap_or(config.tau_min_s);
    let best = matrix.maximize(h, config, config.tau_grid(last));
    (best[0].s_tilde, best[0].tau_s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauMaximum {
    pub s_tilde: f64,
    pub tau_s: f64,
}

/// Event-major evidence for several variants at once, with events that carry
/// no evidence for any variant dropped. Dropping them leaves every smoothed
/// sum bit-identical since they only ever add exact zeros.
#[derive(Debug, Clone)]
struct EvidenceMatrix {
    n_cols: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl EvidenceMatrix {
    fn from_run(run: &Run, table: &LogRatioTable, variants: &[SourceVariantId]) -> Self {
        let columns: Vec<&[f64]> = variants
            .iter()
            .map(|k| table.ratios(*k).expect("variant comes from the table"))
            .collect();
        let grid = table.grid();
        let n_cols = variants.len();
        let mut times = Vec::with_capacity(run.len());
        let mut values = Vec::with_capacity(run.len() * n_cols);
        let mut row = vec![0.0; n_cols];
        for (&t, &e) in run.times.iter().zip(&run.energies) {
            let Some(bin) = grid.nearest_bin(e) else {
                continue;
            };
            let mut any = false;
            for (slot, col) in row.iter_mut().zip(&columns) {
                *slot = col[bin];
                any |= *slot != 0.0;
            }
            if any {
                times.push(t);
                values.extend_from_slice(&row);
            }
        }
        Self {
            n_cols,
            times,
            values,
        }
    }

    /// Sliding-window evaluation of every column over the τ grid.
    fn maximize(&self, h: f64, config: &ScanConfig, grid: TauGrid) -> Vec<TauMaximum> {
        let reach = config.kernel_truncation_sigmas * h;
        let n = self.times.len();
        let mut best = vec![
            TauMaximum {
                s_tilde: f64::NEG_INFINITY,
                tau_s: grid.start,
            };
            self.n_cols
        ];
        let mut acc = vec![0.0; self.n_cols];
        let (mut lo, mut hi) = (0usize, 0usize);
        for j in 0..grid.len {
            let tau = grid.point(j);
            while lo < n && self.times[lo] - tau < -reach {
                lo += 1;
            }
            if hi < lo {
                hi = lo;
            }
            while hi < n && self.times[hi] - tau <= reach {
                hi += 1;
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            for i in lo..hi {
                let w = kernel_weight(self.times[i] - tau, h);
                let row = &self.values[i * self.n_cols..(i + 1) * self.n_cols];
                for (a, r) in acc.iter_mut().zip(row) {
                    *a += w * r;
                }
            }
            for (b, &s) in best.iter_mut().zip(&acc) {
                if s > b.s_tilde {
                    *b = TauMaximum { s_tilde: s, tau_s: tau };
                }
            }
        }
        best
    }
}

/// S̃ and τ̂ for every (variant, bandwidth) pair of a run, before
/// standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMaxima {
    pub variants: Vec<SourceVariantId>,
    pub bandwidths_s: Vec<f64>,
    /// Indexed `[variant][bandwidth]` in the orders above.
    pub maxima: Vec<Vec<TauMaximum>>,
}

impl SmoothedMaxima {
    pub fn get(&self, k: SourceVariantId, h: f64) -> Option<TauMaximum> {
        let vi = self.variants.iter().position(|v| *v == k)?;
        let hi = self.bandwidths_s.iter().position(|b| *b == h)?;
        Some(self.maxima[vi][hi])
    }
}

/// Computes S̃(k, h) and τ̂_k for every variant in the table and every
/// bandwidth in the config, sharing kernel weights across variants.
pub fn smoothed_maxima(run: &Run, table: &LogRatioTable, config: &ScanConfig) -> SmoothedMaxima {
    let variants: Vec<SourceVariantId> = table.variants().collect();
    let bandwidths_s = config.sorted_bandwidths();
    let matrix = EvidenceMatrix::from_run(run, table, &variants);
    let grid = config.tau_grid(run.last_time());
    let per_h: Vec<Vec<TauMaximum>> = bandwidths_s
        .iter()
        .map(|&h| matrix.maximize(h, config, grid))
        .collect();
    let maxima = (0..variants.len())
        .map(|v| per_h.iter().map(|col| col[v]).collect())
        .collect();
    SmoothedMaxima {
        variants,
        bandwidths_s,
        maxima,
    }
}

/// `(s_tilde − μ₀) / max(σ₀, 1e−9)`.
pub fn standardize(s_tilde: f64, k: SourceVariantId, h: f64, calib: &NullCalibration) -> Result<f64> {
    let entry = calib.get(k, h).ok_or_else(|| {
        Error::CalibrationMismatch(format!("no calibration entry for variant {k} at bandwidth {h} s"))
    })?;
    Ok((s_tilde - entry.mu0) / entry.sigma0.max(SIGMA_FLOOR))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZEntry {
    pub variant: SourceVariantId,
    pub bandwidth_s: f64,
    pub z: f64,
    pub s_tilde: f64,
    pub tau_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub run_id: String,
    /// The scan statistic `T`.
    pub statistic: f64,
    pub k_hat: Option<SourceVariantId>,
    pub tau_hat_s: Option<f64>,
    /// Canonical order: variant, then ascending bandwidth. Empty for results
    /// read back from a summary file.
    pub z_grid: Vec<ZEntry>,
}

impl ScanResult {
    /// Result carrying only the summary fields.
    pub fn summary(
        run_id: impl Into<String>,
        statistic: f64,
        k_hat: Option<SourceVariantId>,
        tau_hat_s: Option<f64>,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            statistic,
            k_hat,
            tau_hat_s,
            z_grid: Vec::new(),
        }
    }

    pub fn z(&self, k: SourceVariantId, h: f64) -> Option<&ZEntry> {
        self.z_grid.iter().find(|e| e.variant == k && e.bandwidth_s == h)
    }

    /// Source type with shielding collapsed; 0 when no variant was selected.
    pub fn source_id(&self) -> u8 {
        self.k_hat.map_or(0, |k| k.source())
    }

    /// Entry that attains the statistic under the canonical tie-break.
    pub fn argmax(&self) -> Option<&ZEntry> {
        select_max(&self.z_grid)
    }
}

/// First entry with the largest Z in canonical order. The canonical order is
/// what realizes the tie-break: smaller source, unshielded first, smaller h.
fn select_max(entries: &[ZEntry]) -> Option<&ZEntry> {
    let mut best: Option<&ZEntry> = None;
    for e in entries {
        if best.is_none_or(|b| e.z > b.z) {
            best = Some(e);
        }
    }
    best
}

/// Standardizes precomputed maxima into a [`ScanResult`].
pub fn assemble_result(run_id: &str, maxima: &SmoothedMaxima, calib: &NullCalibration) -> Result<ScanResult> {
    let mut z_grid = Vec::with_capacity(maxima.variants.len() * maxima.bandwidths_s.len());
    for (vi, &k) in maxima.variants.iter().enumerate() {
        for (hi, &h) in maxima.bandwidths_s.iter().enumerate() {
            let m = maxima.maxima[vi][hi];
            z_grid.push(ZEntry {
                variant: k,
                bandwidth_s: h,
                z: standardize(m.s_tilde, k, h, calib)?,
                s_tilde: m.s_tilde,
                tau_s: m.tau_s,
            });
        }
    }
    let (statistic, k_hat, tau_hat_s) = match select_max(&z_grid) {
        Some(e) => (e.z, Some(e.variant), Some(e.tau_s)),
        None => (f64::NEG_INFINITY, None, None),
    };
    Ok(ScanResult {
        run_id: run_id.to_string(),
        statistic,
        k_hat,
        tau_hat_s,
        z_grid,
    })
}

/// Scores one run over every variant in the table and every bandwidth.
pub fn scan_run(
    run: &Run,
    table: &LogRatioTable,
    calib: &NullCalibration,
    config: &ScanConfig,
) -> Result<ScanResult> {
    let maxima = smoothed_maxima(run, table, config);
    assemble_result(run.run_id(), &maxima, calib)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub source_present: bool,
    /// 0 when no source is declared.
    pub source_id: u8,
    pub tau_s: Option<f64>,
}

/// Declares a source when `T ≥ φ`.
pub fn decide(result: &ScanResult, phi: f64) -> Decision {
    if result.statistic >= phi {
        Decision {
            source_present: true,
            source_id: result.source_id(),
            tau_s: result.tau_hat_s,
        }
    } else {
        Decision {
            source_present: false,
            source_id: 0,
            tau_s: None,
        }
    }
}
