//! Property checks shared by the invariant tests and the acceptance gate.
//! Each returns `Err` with a description of the first failure.

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use radscan::calibration::{fingerprint, CalibrationEntry};
use radscan::evaluation::{
    confusion_matrix, metrics_over_thresholds, LabeledOutcome,
};
use radscan::scan::{maximize_over_tau, smoothed_maxima, Event};
use radscan::simulator::{simulate_batch, BatchConfig, GroundTruth, SimConfig};
use radscan::spectra::{
    build_log_ratio_table, mix_pmfs, pmf_from_intensity_histogram, with_source6_mixture, NullDensityEstimator,
    PMF_SUM_TOLERANCE,
};
use radscan::{
    calibrate, decide, scan_run, EnergyGrid, IntensityHistogram, LogRatioTable, NullCalibration, Pmf, Run,
    ScanConfig, ScanResult, SourceVariantId,
};

use super::{mean_std, pipeline};

pub type Check = fn() -> Result<(), String>;

/// Every invariant, by name.
pub const ALL: &[(&str, Check)] = &[
    ("pmf normalization", pmf_normalization),
    ("log-ratio table sign", log_ratio_sign),
    ("histogram scale invariance", histogram_scale_invariance),
    ("mix symmetry", mix_symmetry),
    ("null KDE permutation invariance", kde_permutation_invariance),
    ("scan time-shift equivariance", time_shift_equivariance),
    ("scan monotonicity", scan_monotonicity),
    ("scan result consistency", result_consistency),
    ("decide monotone in phi", decide_monotone),
    ("argmax scale invariance", argmax_scale_invariance),
    ("calibration permutation invariance", calibration_permutation_invariance),
    ("calibration self-standardization", self_standardization),
    ("simulated times sorted and non-negative", simulated_times_sorted),
    ("null counts Poisson and independent", null_counts_poisson),
    ("source times symmetric about tau", source_times_symmetric),
    ("null energy marginal matches pmf", null_energy_marginal),
    ("rates non-increasing in phi", rates_monotone),
    ("confusion totals", confusion_totals),
    ("id accuracy agrees with confusion matrix", id_accuracy_consistent),
    ("determinism under parallelism", parallel_determinism),
];

fn run_prop<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    let mut runner = TestRunner::new_with_rng(config, rng);
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- strategies ----

fn small_grid() -> EnergyGrid {
    EnergyGrid::new(0.0, 150.0, 0.5).unwrap()
}

fn histogram() -> impl Strategy<Value = IntensityHistogram> {
    (0.0..50.0f64, prop::sample::select(vec![1.0, 2.0, 3.0]), prop::collection::vec(0.0..100.0f64, 1..40))
        .prop_map(|(start, width, mut counts)| {
            if counts.iter().all(|&c| c == 0.0) {
                counts[0] = 1.0;
            }
            IntensityHistogram::new(start, width, counts).unwrap()
        })
}

fn pmf_on(grid: EnergyGrid) -> impl Strategy<Value = Pmf> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], grid.n_bins()).prop_map(move |mut w| {
        w[0] += 1e-3;
        Pmf::from_weights(grid, w).unwrap()
    })
}

fn tiny_grid() -> EnergyGrid {
    EnergyGrid::new(0.0, 10.0, 1.0).unwrap()
}

fn two_variants() -> [SourceVariantId; 2] {
    [SourceVariantId::new(1, false).unwrap(), SourceVariantId::new(2, true).unwrap()]
}

/// Two-variant table on an 11-bin grid, each variant with some positive entry.
fn small_table() -> impl Strategy<Value = LogRatioTable> {
    let ratios = || {
        (prop::collection::vec(prop_oneof![Just(0.0), 0.0..3.0f64], 11), 0..11usize).prop_map(|(mut r, i)| {
            r[i] = r[i].max(0.5);
            r
        })
    };
    (ratios(), ratios()).prop_map(|(a, b)| {
        let [k1, k2] = two_variants();
        LogRatioTable::from_ratios(tiny_grid(), BTreeMap::from([(k1, a), (k2, b)])).unwrap()
    })
}

/// Events on a 1/64 s lattice with integer energies, so time shifts by
/// multiples of 0.25 s are exact.
fn lattice_run(max_events: usize) -> impl Strategy<Value = Run> {
    prop::collection::vec((0u32..6400, 0u8..=10), 1..max_events).prop_map(|mut ev| {
        ev.sort();
        Run::new(
            "r",
            ev.into_iter().map(|(t, e)| Event {
                time_s: f64::from(t) / 64.0,
                energy_kev: f64::from(e),
            }),
        )
        .unwrap()
    })
}

fn small_config() -> ScanConfig {
    ScanConfig {
        bandwidths_s: vec![0.5, 1.0, 2.0],
        ..ScanConfig::default()
    }
}

fn calibration_for(table: &LogRatioTable, config: &ScanConfig, mu: f64, sigma: f64) -> NullCalibration {
    let entries = table
        .variants()
        .flat_map(|k| {
            config.bandwidths_s.iter().map(move |&h| CalibrationEntry {
                variant: k,
                bandwidth_s: h,
                mu0: mu * h,
                sigma0: sigma + h,
            })
        })
        .collect();
    NullCalibration::from_entries(entries, 2, fingerprint(table, config)).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ---- spectra ----

fn assert_normalized(p: &Pmf) -> Result<(), TestCaseError> {
    prop_assert!((p.mass().iter().sum::<f64>() - 1.0).abs() <= PMF_SUM_TOLERANCE);
    prop_assert!(p.mass().iter().all(|&m| m >= 0.0));
    Ok(())
}

pub fn pmf_normalization() -> Result<(), String> {
    let grid = small_grid();
    run_prop(64, (histogram(), pmf_on(grid), pmf_on(grid), 0.0..=1.0f64), |(h, a, b, w)| {
        assert_normalized(&pmf_from_intensity_histogram(&h, &grid).unwrap())?;
        assert_normalized(&a)?;
        assert_normalized(&mix_pmfs(&a, &b, w).unwrap())?;
        let sources = SourceVariantId::all()
            .filter(|k| k.source() <= 5)
            .map(|k| (k, if k.source() % 2 == 0 { a.clone() } else { b.clone() }))
            .collect();
        for p in with_source6_mixture(sources).unwrap().values() {
            assert_normalized(p)?;
        }
        Ok(())
    })?;
    run_prop(16, prop::collection::vec(0.0..150.0f64, 1..300), |readings| {
        let est = NullDensityEstimator {
            bandwidth_kev: 1.0,
            min_readings: 1,
        };
        assert_normalized(&est.estimate(&readings, &grid).unwrap())
    })
}

pub fn log_ratio_sign() -> Result<(), String> {
    let grid = EnergyGrid::new(0.0, 20.0, 0.5).unwrap();
    run_prop(64, (pmf_on(grid), pmf_on(grid)), |(source, null)| {
        let k = SourceVariantId::new(3, true).unwrap();
        let table = build_log_ratio_table(&BTreeMap::from([(k, source.clone())]), &null, 1e-12).unwrap();
        for ((r, fk), f0) in table.ratios(k).unwrap().iter().zip(source.mass()).zip(null.mass()) {
            prop_assert!(*r >= 0.0);
            if fk <= f0 {
                prop_assert_eq!(*r, 0.0);
            }
        }
        Ok(())
    })
}

pub fn histogram_scale_invariance() -> Result<(), String> {
    let grid = small_grid();
    run_prop(64, (histogram(), 1e-3..1e3f64), |(h, c)| {
        let scaled = IntensityHistogram::new(
            h.bin_start_kev(),
            h.bin_width_kev(),
            h.counts().iter().map(|x| x * c).collect(),
        )
        .unwrap();
        let a = pmf_from_intensity_histogram(&h, &grid).unwrap();
        let b = pmf_from_intensity_histogram(&scaled, &grid).unwrap();
        for (x, y) in a.mass().iter().zip(b.mass()) {
            prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
        }
        Ok(())
    })
}

pub fn mix_symmetry() -> Result<(), String> {
    let grid = EnergyGrid::new(0.0, 30.0, 0.5).unwrap();
    run_prop(64, (pmf_on(grid), pmf_on(grid), 0.0..=1.0f64), |(a, b, w)| {
        let ab = mix_pmfs(&a, &b, w).unwrap();
        let ba = mix_pmfs(&b, &a, 1.0 - w).unwrap();
        for (x, y) in ab.mass().iter().zip(ba.mass()) {
            prop_assert!((x - y).abs() <= 1e-15, "{} vs {}", x, y);
        }
        Ok(())
    })
}

pub fn kde_permutation_invariance() -> Result<(), String> {
    let grid = small_grid();
    let readings = prop::collection::vec(0.0..150.0f64, 1..200)
        .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()));
    run_prop(32, readings, |(a, b)| {
        let est = NullDensityEstimator {
            bandwidth_kev: 1.0,
            min_readings: 1,
        };
        prop_assert_eq!(est.estimate(&a, &grid).unwrap(), est.estimate(&b, &grid).unwrap());
        Ok(())
    })
}

// ---- scan ----

pub fn time_shift_equivariance() -> Result<(), String> {
    run_prop(48, (small_table(), lattice_run(150), 0u32..400), |(table, run, m)| {
        let delta = f64::from(m) * 0.25;
        let config = small_config();
        let shifted_config = ScanConfig {
            tau_min_s: config.tau_min_s + delta,
            ..config.clone()
        };
        let shifted = Run::new("r", run.events().map(|e| Event { time_s: e.time_s + delta, ..e })).unwrap();
        let calib = calibration_for(&table, &config, 0.3, 0.7);
        let a = scan_run(&run, &table, &calib, &config).unwrap();
        let b = scan_run(&shifted, &table, &calib, &shifted_config).unwrap();
        prop_assert!(close(a.statistic, b.statistic, 1e-9));
        prop_assert_eq!(a.k_hat, b.k_hat);
        prop_assert!((a.tau_hat_s.unwrap() + delta - b.tau_hat_s.unwrap()).abs() <= 1e-9);
        for (x, y) in a.z_grid.iter().zip(&b.z_grid) {
            prop_assert!(close(x.s_tilde, y.s_tilde, 1e-9));
            prop_assert!(close(x.z, y.z, 1e-9));
            prop_assert!((x.tau_s + delta - y.tau_s).abs() <= 1e-9);
        }
        Ok(())
    })
}

pub fn scan_monotonicity() -> Result<(), String> {
    run_prop(48, (small_table(), lattice_run(150)), |(table, run)| {
        let config = small_config();
        let before = smoothed_maxima(&run, &table, &config);
        for (vi, &k) in before.variants.iter().enumerate() {
            let energy = table.ratios(k).unwrap().iter().position(|&r| r > 0.0).unwrap() as f64;
            for m in &before.maxima[vi] {
                let mut events: Vec<Event> = run.events().collect();
                let at = events.partition_point(|e| e.time_s <= m.tau_s);
                events.insert(
                    at,
                    Event {
                        time_s: m.tau_s,
                        energy_kev: energy,
                    },
                );
                let after = smoothed_maxima(&Run::new("r", events).unwrap(), &table, &config);
                for (old, new) in before.maxima[vi].iter().zip(&after.maxima[vi]) {
                    prop_assert!(new.s_tilde >= old.s_tilde, "{} dropped to {}", old.s_tilde, new.s_tilde);
                }
            }
        }
        Ok(())
    })
}

fn check_consistency(r: &ScanResult) -> Result<(), TestCaseError> {
    let max = r.z_grid.iter().map(|e| e.z).fold(f64::NEG_INFINITY, f64::max);
    prop_assert_eq!(r.statistic, max);
    prop_assert!(r
        .z_grid
        .iter()
        .any(|e| e.z == r.statistic && Some(e.variant) == r.k_hat && Some(e.tau_s) == r.tau_hat_s));
    Ok(())
}

pub fn result_consistency() -> Result<(), String> {
    run_prop(64, (small_table(), lattice_run(150), -1.0..1.0f64, 0.1..2.0f64), |(table, run, mu, sigma)| {
        let config = small_config();
        let calib = calibration_for(&table, &config, mu, sigma);
        check_consistency(&scan_run(&run, &table, &calib, &config).unwrap())
    })
}

pub fn decide_monotone() -> Result<(), String> {
    run_prop(256, (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64), |(t, a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r = ScanResult::summary("r", t, SourceVariantId::new(1, false).ok(), Some(40.0));
        if !decide(&r, lo).source_present {
            prop_assert!(!decide(&r, hi).source_present);
        }
        Ok(())
    })
}

pub fn argmax_scale_invariance() -> Result<(), String> {
    let events = prop::collection::vec((0.0..100.0f64, prop_oneof![Just(0.0), 0.0..5.0f64]), 1..200);
    run_prop(64, (events, 1e-2..1e2f64, prop::sample::select(vec![0.5, 1.0, 2.0])), |(mut ev, c, h)| {
        ev.sort_by(|a, b| a.0.total_cmp(&b.0));
        let times: Vec<f64> = ev.iter().map(|e| e.0).collect();
        let evidence: Vec<f64> = ev.iter().map(|e| e.1).collect();
        let scaled: Vec<f64> = evidence.iter().map(|r| r * c).collect();
        let config = small_config();
        let (s, tau) = maximize_over_tau(&evidence, &times, h, &config);
        let (cs, ctau) = maximize_over_tau(&scaled, &times, h, &config);
        prop_assert_eq!(tau, ctau);
        prop_assert!(close(cs, c * s, 1e-9));
        Ok(())
    })
}

// ---- calibration ----

fn run_set() -> impl Strategy<Value = Vec<Run>> {
    prop::collection::vec(lattice_run(80), 2..12).prop_map(|runs| {
        runs.into_iter()
            .enumerate()
            .map(|(i, r)| Run::from_columns(format!("r{i}"), r.times().to_vec(), r.energies().to_vec()).unwrap())
            .collect()
    })
}

pub fn calibration_permutation_invariance() -> Result<(), String> {
    let sets = (small_table(), run_set()).prop_flat_map(|(t, runs)| (Just(t), Just(runs.clone()), Just(runs).prop_shuffle()));
    run_prop(32, sets, |(table, a, b)| {
        let config = small_config();
        prop_assert_eq!(calibrate(&a, &table, &config).unwrap(), calibrate(&b, &table, &config).unwrap());
        Ok(())
    })
}

pub fn self_standardization() -> Result<(), String> {
    run_prop(32, (small_table(), run_set()), |(table, runs)| {
        let config = small_config();
        let calib = calibrate(&runs, &table, &config).unwrap();
        let results: Vec<ScanResult> = runs.iter().map(|r| scan_run(r, &table, &calib, &config).unwrap()).collect();
        for e in calib.entries() {
            let z: Vec<f64> = results
                .iter()
                .map(|r| r.z(e.variant, e.bandwidth_s).unwrap().z)
                .collect();
            let (m, sd) = mean_std(&z);
            prop_assert!(m.abs() <= 1e-9, "mean {}", m);
            // A variant that scores identically on every run is floored, not unit.
            if e.sigma0 > 1e-6 {
                prop_assert!((sd - 1.0).abs() <= 1e-9, "std {}", sd);
            }
        }
        Ok(())
    })
}

// ---- simulator ----

pub fn simulated_times_sorted() -> Result<(), String> {
    let p = pipeline();
    let configs = (any::<u64>(), 31.0..80.0f64, 1.0..200.0f64, 0.0..200.0f64, 0usize..12, 0.2..3.0f64, 0.0..1.0f64);
    run_prop(64, configs, |(seed, duration, bg, amp, vi, c, frac)| {
        let variant = SourceVariantId::all().nth(vi).unwrap();
        let config = SimConfig {
            run_id: "s".into(),
            duration_s: duration,
            background_rate_hz: bg,
            source_amplitude_hz: amp,
            source_variant: Some(variant),
            tau_true_s: Some(30.0 + frac * (duration - 30.0)),
            standoff_shape_s: c,
            seed,
        };
        let (run, _) = p.simulator.simulate_run(&config).unwrap();
        prop_assert!(run.times().windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(run.times().iter().all(|&t| t >= 0.0 && t <= duration));
        Ok(())
    })
}

/// Counts in 10⁴ one-second intervals of a null run: the index of dispersion
/// must look χ²(n−1) and adjacent counts must be uncorrelated.
pub fn null_counts_poisson() -> Result<(), String> {
    let n = 10_000usize;
    let rate = 50.0;
    let config = SimConfig::null("poisson", n as f64, rate, 17);
    let (run, _) = pipeline().simulator.simulate_run(&config).map_err(|e| e.to_string())?;
    let mut counts = vec![0.0f64; n];
    for &t in run.times() {
        counts[(t as usize).min(n - 1)] += 1.0;
    }
    let (mean, sd) = mean_std(&counts);
    let dispersion = (n as f64 - 1.0) * sd * sd / mean;
    let chi = ChiSquared::new(n as f64 - 1.0).unwrap();
    let p = chi.cdf(dispersion);
    ensure((0.0005..0.9995).contains(&p), || format!("dispersion {dispersion} has cdf {p}"))?;
    let lag1: f64 = counts.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / ((n as f64 - 1.0) * sd * sd);
    ensure(lag1.abs() < 4.0 / (n as f64).sqrt(), || format!("lag-1 correlation {lag1}"))?;
    ensure((mean - rate).abs() < 4.0 * (rate / n as f64).sqrt(), || format!("mean count {mean}"))
}

/// Sign test on source-only events within a symmetric window about τ.
pub fn source_times_symmetric() -> Result<(), String> {
    let variant = SourceVariantId::new(2, false).unwrap();
    let (mut before, mut after) = (0u64, 0u64);
    for seed in 0..200u64 {
        let tau = 40.0 + (seed % 20) as f64;
        let config = SimConfig {
            run_id: "sym".into(),
            duration_s: 100.0,
            background_rate_hz: 0.0,
            source_amplitude_hz: 80.0,
            source_variant: Some(variant),
            tau_true_s: Some(tau),
            standoff_shape_s: 1.5,
            seed,
        };
        let (run, _) = pipeline().simulator.simulate_run(&config).map_err(|e| e.to_string())?;
        for &t in run.times() {
            let d = t - tau;
            if d.abs() <= 10.0 {
                if d < 0.0 {
                    before += 1;
                } else if d > 0.0 {
                    after += 1;
                }
            }
        }
    }
    let n = (before + after) as f64;
    let z = (before as f64 - n / 2.0) / (n / 4.0).sqrt();
    ensure(z.abs() < 4.0, || format!("{before} events before tau vs {after} after (z = {z:.2})"))
}

/// χ² goodness of fit of 10⁵ null energies against the background pmf, with
/// adjacent bins pooled until each cell expects at least 5 events.
pub fn null_energy_marginal() -> Result<(), String> {
    let p = pipeline();
    let n = 100_000.0;
    let config = SimConfig::null("energies", 1000.0, 100.0, 23);
    let (run, _) = p.simulator.simulate_run(&config).map_err(|e| e.to_string())?;
    let energies: Vec<f64> = run.energies().iter().copied().take(n as usize).collect();
    ensure(energies.len() == n as usize, || format!("only {} energies", energies.len()))?;
    let mut observed = vec![0.0; p.grid.n_bins()];
    for &e in &energies {
        observed[p.grid.nearest_bin(e).ok_or("energy off grid")?] += 1.0;
    }
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, m) in observed.iter().zip(p.background.mass()) {
        o_acc += o;
        e_acc += m * n;
        if e_acc >= 5.0 {
            stat += (o_acc - e_acc) * (o_acc - e_acc) / e_acc;
            cells += 1;
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        stat += (o_acc - e_acc) * (o_acc - e_acc) / e_acc;
        cells += 1;
    }
    let pvalue = 1.0 - ChiSquared::new(cells as f64 - 1.0).unwrap().cdf(stat);
    ensure(pvalue > 0.001, || format!("chi-square {stat:.1} over {cells} cells, p = {pvalue:.2e}"))
}

// ---- evaluation ----

fn outcomes() -> impl Strategy<Value = Vec<LabeledOutcome>> {
    prop::collection::vec((0u8..=6, -3.0..8.0f64, 0usize..12, 30.0..100.0f64, 30.0..100.0f64), 1..80).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (source, t, ki, tau_true, tau_hat))| {
                let id = format!("r{i}");
                let truth = GroundTruth {
                    run_id: id.clone(),
                    source_id: source,
                    shielded: (source > 0).then_some(false),
                    tau_true_s: (source > 0).then_some(tau_true),
                };
                let k = SourceVariantId::all().nth(ki);
                let result = ScanResult::summary(id, t, k, k.map(|_| tau_hat));
                LabeledOutcome::new(truth, result).unwrap()
            })
            .collect()
    })
}

pub fn rates_monotone() -> Result<(), String> {
    run_prop(64, (outcomes(), prop::collection::vec(-5.0..10.0f64, 1..30)), |(o, mut phis)| {
        phis.sort_by(f64::total_cmp);
        phis.insert(0, f64::NEG_INFINITY);
        phis.push(f64::INFINITY);
        let m = metrics_over_thresholds(&o, &phis).unwrap();
        for w in m.windows(2) {
            if w[0].tpr.is_finite() && w[1].tpr.is_finite() {
                prop_assert!(w[1].tpr <= w[0].tpr);
            }
            if w[0].fpr.is_finite() && w[1].fpr.is_finite() {
                prop_assert!(w[1].fpr <= w[0].fpr);
            }
        }
        let has_pos = o.iter().any(|x| x.truth.has_source());
        let has_neg = o.iter().any(|x| !x.truth.has_source());
        let (first, last) = (&m[0], m.last().unwrap());
        if has_pos {
            prop_assert_eq!((first.tpr, last.tpr), (1.0, 0.0));
        }
        if has_neg {
            prop_assert_eq!((first.fpr, last.fpr), (1.0, 0.0));
        }
        Ok(())
    })
}

pub fn confusion_totals() -> Result<(), String> {
    run_prop(64, (outcomes(), -5.0..10.0f64), |(o, phi)| {
        let cm = confusion_matrix(&o, phi);
        prop_assert_eq!(cm.grand_total(), o.len() as u64);
        prop_assert_eq!(cm.column_totals().iter().sum::<u64>(), o.len() as u64);
        Ok(())
    })
}

pub fn id_accuracy_consistent() -> Result<(), String> {
    run_prop(64, (outcomes(), -5.0..10.0f64), |(o, phi)| {
        let cm = confusion_matrix(&o, phi);
        let m = &metrics_over_thresholds(&o, &[phi]).unwrap()[0];
        prop_assert_eq!(cm.id_accuracy_detected(), m.id_accuracy);
        prop_assert_eq!(cm.id_accuracy_all_sources(), m.id_accuracy_all_sources);
        Ok(())
    })
}

// ---- parallelism ----

/// Simulation, calibration and scoring give identical results on one thread
/// and on eight.
pub fn parallel_determinism() -> Result<(), String> {
    let p = pipeline();
    let work = || {
        let batch = BatchConfig {
            expected_source_events: Some(300.0),
            ..BatchConfig::default()
        };
        let runs = simulate_batch(&p.simulator, 12, 1, &batch, 99).unwrap();
        let plain: Vec<Run> = runs.iter().map(|r| r.run.clone()).collect();
        let calib = calibrate(&plain[..12], &p.table, &p.config).unwrap();
        use rayon::prelude::*;
        let results: Vec<ScanResult> = plain
            .par_iter()
            .map(|r| scan_run(r, &p.table, &calib, &p.config).unwrap())
            .collect();
        (runs, calib, results)
    };
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(work);
    let eight = pool(8).install(work);
    ensure(one.0 == eight.0, || "simulated batches differ".into())?;
    ensure(one.1 == eight.1, || "calibrations differ".into())?;
    ensure(one.2 == eight.2, || "scan results differ".into())
}
