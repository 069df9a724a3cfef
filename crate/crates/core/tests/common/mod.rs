#![allow(dead_code)]

pub mod properties;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use radscan::simulator::{simulate_batch, BatchConfig, SimulatedRun, Simulator};
use radscan::spectra::{
    build_log_ratio_table, estimate_null_pmf, pmf_from_intensity_histogram, with_source6_mixture,
    DEFAULT_DENSITY_FLOOR,
};
use radscan::synthetic::SpectrumLibrary;
use radscan::{EnergyGrid, LogRatioTable, Pmf, Run, ScanConfig, SourceVariantId};

pub const TRAINING_RUNS: usize = 100;
pub const TRAINING_SEED: u64 = 1_000_000;
pub const KDE_BANDWIDTH_KEV: f64 = 1.0;

/// Synthetic spectra, a simulator over them and a log-ratio table whose null
/// density was estimated from simulated null runs.
pub struct Pipeline {
    pub grid: EnergyGrid,
    pub background: Pmf,
    pub sources: BTreeMap<SourceVariantId, Pmf>,
    pub simulator: Simulator,
    pub null_pmf: Pmf,
    pub table: LogRatioTable,
    pub config: ScanConfig,
}

pub fn pipeline() -> &'static Pipeline {
    static CELL: OnceLock<Pipeline> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = EnergyGrid::default();
        let lib = SpectrumLibrary::synthetic().unwrap();
        let sources = lib
            .sources
            .iter()
            .map(|(k, h)| (*k, pmf_from_intensity_histogram(h, &grid).unwrap()))
            .collect();
        let sources = with_source6_mixture(sources).unwrap();
        let background = pmf_from_intensity_histogram(&lib.background, &grid).unwrap();
        let simulator = Simulator::new(&background, &sources).unwrap();
        let training = simulate_batch(&simulator, TRAINING_RUNS, 0, &BatchConfig::default(), TRAINING_SEED).unwrap();
        let energies: Vec<f64> = training.iter().flat_map(|r| r.run.energies().to_vec()).collect();
        let null_pmf = estimate_null_pmf(&energies, &grid, KDE_BANDWIDTH_KEV).unwrap();
        let table = build_log_ratio_table(&sources, &null_pmf, DEFAULT_DENSITY_FLOOR).unwrap();
        Pipeline {
            grid,
            background,
            sources,
            simulator,
            null_pmf,
            table,
            config: ScanConfig::default(),
        }
    })
}

pub fn null_runs(n: usize, seed: u64) -> Vec<Run> {
    simulate_batch(&pipeline().simulator, n, 0, &BatchConfig::default(), seed)
        .unwrap()
        .into_iter()
        .map(|r| r.run)
        .collect()
}

/// `n_null` null runs followed by `n_source` source runs spread evenly over
/// the twelve variants, each with about `expected_events` source events.
pub fn labeled_batch(n_null: usize, n_source: usize, expected_events: f64, seed: u64) -> Vec<SimulatedRun> {
    let n_variants = SourceVariantId::all().count();
    assert_eq!(n_source % n_variants, 0, "source runs must split evenly over variants");
    let batch = BatchConfig {
        expected_source_events: Some(expected_events),
        ..BatchConfig::default()
    };
    simulate_batch(&pipeline().simulator, n_null, n_source / n_variants, &batch, seed).unwrap()
}

/// Untruncated kernel-smoothed evidence at every τ of the dense grid, one
/// sum per (variant, bandwidth). Returns `(S̃, τ̂)` indexed `[variant][h]`
/// with the earliest τ winning ties.
pub fn brute_force_maxima(run: &Run, table: &LogRatioTable, bandwidths: &[f64], tau_min: f64, tau_step: f64) -> Vec<Vec<(f64, f64)>> {
    let variants: Vec<SourceVariantId> = table.variants().collect();
    let evidence: Vec<Vec<f64>> = run
        .energies()
        .iter()
        .map(|&e| variants.iter().map(|&k| table.lookup(k, e)).collect())
        .collect();
    let last = run.times().last().copied().unwrap_or(tau_min);
    let mut taus = vec![tau_min];
    let mut j = 1;
    loop {
        let tau = tau_min + j as f64 * tau_step;
        if tau > last + 1e-9 {
            break;
        }
        taus.push(tau);
        j += 1;
    }
    let mut best = vec![vec![(f64::NEG_INFINITY, f64::NAN); bandwidths.len()]; variants.len()];
    let mut sums = vec![0.0; variants.len()];
    for (hi, &h) in bandwidths.iter().enumerate() {
        for &tau in &taus {
            sums.iter_mut().for_each(|s| *s = 0.0);
            for (&t, row) in run.times().iter().zip(&evidence) {
                let u = (t - tau) / h;
                let w = (-0.5 * u * u).exp();
                for (s, r) in sums.iter_mut().zip(row) {
                    *s += w * r;
                }
            }
            for (vi, &s) in sums.iter().enumerate() {
                if s > best[vi][hi].0 {
                    best[vi][hi] = (s, tau);
                }
            }
        }
    }
    best
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            return (d, p.clamp(0.0, 1.0));
        }
    }
    // The series only fails to converge for tiny λ, where p is 1.
    (d, 1.0)
}
