//! Null calibration of the maximized smoothed score.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scan::{smoothed_maxima, Run, ScanConfig, SIGMA_FLOOR};
use crate::spectra::{LogRatioTable, SourceVariantId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationEntry {
    pub variant: SourceVariantId,
    pub bandwidth_s: f64,
    pub mu0: f64,
    pub sigma0: f64,
}

/// μ₀(k, h) and σ₀(k, h) of S̃ under the null, bound to the scan config and
/// log-ratio table they were computed with.
#[derive(Debug, Clone, PartialEq)]
pub struct NullCalibration {
    entries: Vec<CalibrationEntry>,
    n_runs: usize,
    fingerprint: String,
}

impl NullCalibration {
    /// Entries are sorted into canonical (variant, bandwidth) order.
    pub fn from_entries(mut entries: Vec<CalibrationEntry>, n_runs: usize, fingerprint: String) -> Result<Self> {
        for e in &entries {
            if !e.mu0.is_finite() {
                return Err(Error::invalid(format!("mu0 for {} at h={} is not finite", e.variant, e.bandwidth_s)));
            }
            if !(e.sigma0.is_finite() && e.sigma0 >= SIGMA_FLOOR) {
                return Err(Error::invalid(format!(
                    "sigma0 {} for {} at h={} is below the floor {SIGMA_FLOOR}",
                    e.sigma0, e.variant, e.bandwidth_s
                )));
            }
            if !(e.bandwidth_s.is_finite() && e.bandwidth_s > 0.0) {
                return Err(Error::invalid(format!("bad bandwidth {}", e.bandwidth_s)));
            }
        }
        entries.sort_by(|a, b| a.variant.cmp(&b.variant).then(a.bandwidth_s.total_cmp(&b.bandwidth_s)));
        if entries
            .windows(2)
            .any(|w| w[0].variant == w[1].variant && w[0].bandwidth_s == w[1].bandwidth_s)
        {
            return Err(Error::invalid("duplicate calibration entry"));
        }
        Ok(Self {
            entries,
            n_runs,
            fingerprint,
        })
    }

    pub fn entries(&self) -> &[CalibrationEntry] {
        &self.entries
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn get(&self, k: SourceVariantId, h: f64) -> Option<&CalibrationEntry> {
        self.entries.iter().find(|e| e.variant == k && e.bandwidth_s == h)
    }

    /// Checks that this calibration was produced for `table` and `config`.
    pub fn verify(&self, table: &LogRatioTable, config: &ScanConfig) -> Result<()> {
        let expected = fingerprint(table, config);
        if self.fingerprint != expected {
            return Err(Error::CalibrationMismatch(format!(
                "calibration fingerprint {} does not match active tables/config {}",
                self.fingerprint, expected
            )));
        }
        for k in table.variants() {
            for &h in &config.bandwidths_s {
                if self.get(k, h).is_none() {
                    return Err(Error::CalibrationMismatch(format!("missing entry for {k} at h={h}")));
                }
            }
        }
        Ok(())
    }
}

/// Identifies a (table, scan config) pair. Any change to the ratios, the
/// energy grid, the bandwidth set, the τ grid or the kernel truncation
/// changes it.
pub fn fingerprint(table: &LogRatioTable, config: &ScanConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"scan-config-v1");
    for h in config.sorted_bandwidths() {
        hasher.update(h.to_bits().to_le_bytes());
    }
    for x in [config.tau_min_s, config.tau_step_s, config.kernel_truncation_sigmas] {
        hasher.update(x.to_bits().to_le_bytes());
    }
    let grid = table.grid();
    hasher.update(b"grid");
    for x in [grid.start_kev(), grid.end_kev(), grid.step_kev()] {
        hasher.update(x.to_bits().to_le_bytes());
    }
    for (k, ratios) in table.iter() {
        hasher.update([k.source(), u8::from(k.shielded())]);
        for r in ratios {
            hasher.update(r.to_bits().to_le_bytes());
        }
    }
    hex::encode(&hasher.finalize()[..16])
}

/// Mean and n−1 standard deviation. Values are sorted first so the result
/// does not depend on input order.
fn sample_moments(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Estimates μ₀ and σ₀ for every (variant, bandwidth) from source-free runs.
/// Runs are scored in parallel on the current rayon pool.
pub fn calibrate(null_runs: &[Run], table: &LogRatioTable, config: &ScanConfig) -> Result<NullCalibration> {
    config.validate()?;
    if null_runs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "calibration needs at least 2 null runs, got {}",
            null_runs.len()
        )));
    }
    let per_run: Vec<_> = null_runs
        .par_iter()
        .map(|run| smoothed_maxima(run, table, config))
        .collect();
    let first = &per_run[0];
    let mut entries = Vec::with_capacity(first.variants.len() * first.bandwidths_s.len());
    for (vi, &variant) in first.variants.iter().enumerate() {
        for (hi, &bandwidth_s) in first.bandwidths_s.iter().enumerate() {
            let mut values: Vec<f64> = per_run.iter().map(|m| m.maxima[vi][hi].s_tilde).collect();
            let (mu0, sd) = sample_moments(&mut values);
            entries.push(CalibrationEntry {
                variant,
                bandwidth_s,
                mu0,
                sigma0: if sd.is_finite() { sd.max(SIGMA_FLOOR) } else { SIGMA_FLOOR },
            });
        }
    }
    NullCalibration::from_entries(entries, null_runs.len(), fingerprint(table, config))
}
