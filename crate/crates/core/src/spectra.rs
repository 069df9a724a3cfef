//! Energy-domain densities.
//!
//! Everything here lives on an [`EnergyGrid`]: source spectra converted from
//! intensity histograms, the background density estimated from source-free
//! readings, and the per-variant log density-ratio tables consulted at scoring
//! time.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tolerance on `Σ mass = 1` accepted by [`Pmf::new`].
pub const PMF_SUM_TOLERANCE: f64 = 1e-9;

/// Density floor applied to both numerator and denominator of the log ratio.
pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-12;

/// Uniformly spaced energy grid, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyGrid {
    start_kev: f64,
    end_kev: f64,
    step_kev: f64,
    n_bins: usize,
}

impl EnergyGrid {
    pub fn new(start_kev: f64, end_kev: f64, step_kev: f64) -> Result<Self> {
        if !(start_kev.is_finite() && end_kev.is_finite() && step_kev.is_finite()) {
            return Err(Error::invalid("energy grid bounds must be finite"));
        }
        if step_kev <= 0.0 {
            return Err(Error::invalid(format!("grid step must be positive, got {step_kev}")));
        }
        if start_kev >= end_kev {
            return Err(Error::invalid(format!(
                "grid start {start_kev} must be below end {end_kev}"
            )));
        }
        let span = (end_kev - start_kev) / step_kev;
        if span > 1e8 {
            return Err(Error::invalid("energy grid has too many bins"));
        }
        // The small slack keeps an end that sits exactly on a grid point inclusive.
        let n_bins = (span + 1e-9).floor() as usize + 1;
        Ok(Self {
            start_kev,
            end_kev,
            step_kev,
            n_bins,
        })
    }

    pub fn start_kev(&self) -> f64 {
        self.start_kev
    }

    pub fn end_kev(&self) -> f64 {
        self.end_kev
    }

    pub fn step_kev(&self) -> f64 {
        self.step_kev
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Energy at grid point `index`.
    pub fn energy(&self, index: usize) -> f64 {
        self.start_kev + index as f64 * self.step_kev
    }

    pub fn energies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_bins).map(|i| self.energy(i))
    }

    /// Nearest grid bin, half-step ties rounding up. `None` outside `[start, end]`.
    pub fn nearest_bin(&self, energy_kev: f64) -> Option<usize> {
        if !(energy_kev >= self.start_kev && energy_kev <= self.end_kev) {
            return None;
        }
        let idx = ((energy_kev - self.start_kev) / self.step_kev + 0.5).floor() as usize;
        Some(idx.min(self.n_bins - 1))
    }
}

impl Default for EnergyGrid {
    /// 11 to 4001 keV in 0.5 keV steps (7981 bins).
    fn default() -> Self {
        Self::new(11.0, 4001.0, 0.5).expect("default grid is valid")
    }
}

/// Count-rate histogram of a source spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityHistogram {
    bin_start_kev: f64,
    bin_width_kev: f64,
    counts: Vec<f64>,
}

impl IntensityHistogram {
    pub const DEFAULT_BIN_START_KEV: f64 = 11.0;
    pub const DEFAULT_BIN_WIDTH_KEV: f64 = 2.0;

    pub fn new(bin_start_kev: f64, bin_width_kev: f64, counts: Vec<f64>) -> Result<Self> {
        if !bin_start_kev.is_finite() || !bin_width_kev.is_finite() || bin_width_kev <= 0.0 {
            return Err(Error::invalid("histogram bin start/width must be finite, width positive"));
        }
        if counts.is_empty() {
            return Err(Error::invalid("histogram has no bins"));
        }
        if let Some(bad) = counts.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::invalid(format!("histogram count {bad} is negative or non-finite")));
        }
        if counts.iter().all(|&c| c == 0.0) {
            return Err(Error::invalid("histogram counts are all zero"));
        }
        Ok(Self {
            bin_start_kev,
            bin_width_kev,
            counts,
        })
    }

    /// Histogram with the default 11 keV start and 2 keV bins.
    pub fn with_default_bins(counts: Vec<f64>) -> Result<Self> {
        Self::new(Self::DEFAULT_BIN_START_KEV, Self::DEFAULT_BIN_WIDTH_KEV, counts)
    }

    pub fn bin_start_kev(&self) -> f64 {
        self.bin_start_kev
    }

    pub fn bin_width_kev(&self) -> f64 {
        self.bin_width_kev
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn bin_center(&self, j: usize) -> f64 {
        self.bin_start_kev + (j as f64 + 0.5) * self.bin_width_kev
    }

    pub fn span_end_kev(&self) -> f64 {
        self.bin_start_kev + self.counts.len() as f64 * self.bin_width_kev
    }

    /// Piecewise-linear interpolant through the bin centers. Between a span
    /// edge and the outermost center the nearest center's value is held;
    /// outside the span the value is zero.
    pub fn interpolate(&self, energy_kev: f64) -> f64 {
        let slack = 1e-9 * self.bin_width_kev;
        if energy_kev < self.bin_start_kev - slack || energy_kev > self.span_end_kev() + slack {
            return 0.0;
        }
        let last = self.counts.len() - 1;
        let first_center = self.bin_center(0);
        if energy_kev <= first_center {
            return self.counts[0];
        }
        if energy_kev >= self.bin_center(last) {
            return self.counts[last];
        }
        let pos = (energy_kev - first_center) / self.bin_width_kev;
        let j = (pos.floor() as usize).min(last - 1);
        let frac = pos - j as f64;
        let v = self.counts[j] * (1.0 - frac) + self.counts[j + 1] * frac;
        v.max(0.0)
    }
}

/// Probability mass function on an [`EnergyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    grid: EnergyGrid,
    mass: Vec<f64>,
}

impl Pmf {
    /// Wraps already-normalized masses, checking the pmf invariants.
    pub fn new(grid: EnergyGrid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.n_bins() {
            return Err(Error::invalid(format!(
                "pmf has {} masses but grid has {} bins",
                mass.len(),
                grid.n_bins()
            )));
        }
        if let Some(bad) = mass.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::invalid(format!("pmf mass {bad} is negative or non-finite")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > PMF_SUM_TOLERANCE {
            return Err(Error::invalid(format!("pmf masses sum to {total}, not 1")));
        }
        Ok(Self { grid, mass })
    }

    /// Rescales non-negative weights so they sum to one.
    pub fn from_weights(grid: EnergyGrid, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.n_bins() {
            return Err(Error::invalid("weight vector length does not match grid"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid("weights have zero total mass"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            grid,
            mass: weights,
        })
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// One of the six sources, shielded or not. Ordering is source first, then
/// unshielded before shielded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceVariantId {
    source: u8,
    shielded: bool,
}

impl SourceVariantId {
    pub const N_SOURCES: u8 = 6;

    pub fn new(source: u8, shielded: bool) -> Result<Self> {
        if !(1..=Self::N_SOURCES).contains(&source) {
            return Err(Error::invalid(format!("source id {source} outside 1..=6")));
        }
        Ok(Self { source, shielded })
    }

    pub fn source(&self) -> u8 {
        self.source
    }

    pub fn shielded(&self) -> bool {
        self.shielded
    }

    /// All twelve variants in canonical order.
    pub fn all() -> impl Iterator<Item = SourceVariantId> {
        (1..=Self::N_SOURCES).flat_map(|source| {
            [false, true]
                .into_iter()
                .map(move |shielded| SourceVariantId { source, shielded })
        })
    }
}

impl fmt::Display for SourceVariantId {
    /// `4.0` for unshielded source 4, `4.1` for shielded.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.source, u8::from(self.shielded))
    }
}

impl FromStr for SourceVariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (src, shield) = s
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::invalid(format!("source variant `{s}` is not of the form N.S")))?;
        let source: u8 = src
            .parse()
            .map_err(|_| Error::invalid(format!("bad source number in `{s}`")))?;
        let shielded = match shield {
            "0" => false,
            "1" => true,
            _ => return Err(Error::invalid(format!("bad shielding flag in `{s}`"))),
        };
        Self::new(source, shielded)
    }
}

/// Precomputed `max(0, ln(f_k / f_0))` per variant and energy bin.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioTable {
    grid: EnergyGrid,
    ratios: BTreeMap<SourceVariantId, Vec<f64>>,
}

impl LogRatioTable {
    /// Assembles a table from stored ratios, validating shape and sign.
    pub fn from_ratios(grid: EnergyGrid, ratios: BTreeMap<SourceVariantId, Vec<f64>>) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::invalid("log-ratio table has no variants"));
        }
        for (k, r) in &ratios {
            if r.len() != grid.n_bins() {
                return Err(Error::invalid(format!("ratios for {k} do not match grid length")));
            }
            if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid(format!("ratios for {k} contain negative or non-finite values")));
            }
        }
        Ok(Self { grid, ratios })
    }

    pub fn grid(&self) -> &EnergyGrid {
        &self.grid
    }

    pub fn variants(&self) -> impl Iterator<Item = SourceVariantId> + '_ {
        self.ratios.keys().copied()
    }

    pub fn n_variants(&self) -> usize {
        self.ratios.len()
    }

    pub fn ratios(&self, k: SourceVariantId) -> Option<&[f64]> {
        self.ratios.get(&k).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (SourceVariantId, &[f64])> {
        self.ratios.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Evidence for variant `k` at `energy_kev`. Zero outside the grid or
    /// for a variant the table does not hold.
    pub fn lookup(&self, k: SourceVariantId, energy_kev: f64) -> f64 {
        match (self.ratios.get(&k), self.grid.nearest_bin(energy_kev)) {
            (Some(r), Some(i)) => r[i],
            _ => 0.0,
        }
    }
}

/// Free-function form of [`LogRatioTable::lookup`].
pub fn lookup_log_ratio(table: &LogRatioTable, k: SourceVariantId, energy_kev: f64) -> f64 {
    table.lookup(k, energy_kev)
}

/// Evaluates the histogram interpolant at every grid point and normalizes.
pub fn pmf_from_intensity_histogram(hist: &IntensityHistogram, grid: &EnergyGrid) -> Result<Pmf> {
    if hist.span_end_kev() < grid.start_kev() || hist.bin_start_kev() > grid.end_kev() {
        return Err(Error::invalid("histogram span does not overlap the energy grid"));
    }
    let values: Vec<f64> = grid.energies().map(|e| hist.interpolate(e)).collect();
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("histogram has no mass on the energy grid"));
    }
    Pmf::from_weights(*grid, values)
}

/// Gaussian kernel density estimate of the background spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullDensityEstimator {
    pub bandwidth_kev: f64,
    pub min_readings: usize,
}

impl Default for NullDensityEstimator {
    fn default() -> Self {
        Self {
            bandwidth_kev: 1.0,
            min_readings: 1000,
        }
    }
}

impl NullDensityEstimator {
    /// Kernel contributions below `exp(-KERNEL_CUTOFF²/2)` are dropped.
    const KERNEL_CUTOFF: f64 = 12.0;

    pub fn estimate(&self, energies: &[f64], grid: &EnergyGrid) -> Result<Pmf> {
        if !(self.bandwidth_kev > 0.0) || !self.bandwidth_kev.is_finite() {
            return Err(Error::invalid(format!("KDE bandwidth must be positive, got {}", self.bandwidth_kev)));
        }
        if energies.is_empty() || energies.len() < self.min_readings {
            return Err(Error::InsufficientData(format!(
                "{} energy readings, need at least {}",
                energies.len(),
                self.min_readings.max(1)
            )));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("energy readings must be finite"));
        }
        // Summation order is fixed by sorting, so the estimate does not depend
        // on reading order at all.
        let mut sorted = energies.to_vec();
        sorted.sort_by(f64::total_cmp);

        let h = self.bandwidth_kev;
        let reach = Self::KERNEL_CUTOFF * h;
        let step = grid.step_kev();
        let last = grid.n_bins() as isize - 1;
        let mut density = vec![0.0; grid.n_bins()];
        for &e in &sorted {
            let lo = ((e - reach - grid.start_kev()) / step).ceil().max(0.0) as isize;
            let hi = (((e + reach - grid.start_kev()) / step).floor() as isize).min(last);
            for i in lo..=hi {
                let u = (grid.energy(i as usize) - e) / h;
                density[i as usize] += (-0.5 * u * u).exp();
            }
        }
        Pmf::from_weights(*grid, density)
            .map_err(|_| Error::InsufficientData("no energy readings fall near the grid".into()))
    }
}

/// Null pmf by Gaussian KDE with the default 1000-reading floor.
pub fn estimate_null_pmf(energies: &[f64], grid: &EnergyGrid, kde_bandwidth_kev: f64) -> Result<Pmf> {
    NullDensityEstimator {
        bandwidth_kev: kde_bandwidth_kev,
        ..Default::default()
    }
    .estimate(energies, grid)
}

/// `weight_a · a + (1 − weight_a) · b`, elementwise.
pub fn mix_pmfs(a: &Pmf, b: &Pmf, weight_a: f64) -> Result<Pmf> {
    if a.grid != b.grid {
        return Err(Error::invalid("cannot mix pmfs on different grids"));
    }
    if !(0.0..=1.0).contains(&weight_a) {
        return Err(Error::invalid(format!("mixing weight {weight_a} outside [0, 1]")));
    }
    let weight_b = 1.0 - weight_a;
    let mass = a
        .mass
        .iter()
        .zip(&b.mass)
        .map(|(x, y)| weight_a * x + weight_b * y)
        .collect();
    Ok(Pmf { grid: a.grid, mass })
}

/// Adds both source-6 variants as even mixes of sources 1 and 5 with like
/// shielding. Existing source-6 entries are replaced.
pub fn with_source6_mixture(mut sources: BTreeMap<SourceVariantId, Pmf>) -> Result<BTreeMap<SourceVariantId, Pmf>> {
    for shielded in [false, true] {
        let get = |s: u8| -> Result<&Pmf> {
            let k = SourceVariantId::new(s, shielded)?;
            sources
                .get(&k)
                .ok_or_else(|| Error::invalid(format!("source 6 mixture needs variant {k}")))
        };
        let mixed = mix_pmfs(get(1)?, get(5)?, 0.5)?;
        sources.insert(SourceVariantId::new(6, shielded)?, mixed);
    }
    Ok(sources)
}

pub fn build_log_ratio_table(
    sources: &BTreeMap<SourceVariantId, Pmf>,
    null: &Pmf,
    floor: f64,
) -> Result<LogRatioTable> {
    if !(floor > 0.0) {
        return Err(Error::invalid(format!("density floor must be positive, got {floor}")));
    }
    let mut ratios = BTreeMap::new();
    for (k, pmf) in sources {
        if pmf.grid != null.grid {
            return Err(Error::invalid(format!("pmf for {k} is on a different grid than the null pmf")));
        }
        let r = pmf
            .mass
            .iter()
            .zip(&null.mass)
            .map(|(&fk, &f0)| {
                let fk = fk.max(floor);
                let f0 = f0.max(floor);
                if fk <= f0 {
                    0.0
                } else {
                    (fk / f0).ln().max(0.0)
                }
            })
            .collect();
        ratios.insert(*k, r);
    }
    LogRatioTable::from_ratios(null.grid, ratios)
}
