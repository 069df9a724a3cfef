//! Labeled synthetic runs with known ground truth.
//!
//! Background events arrive as a homogeneous Poisson process. A source adds
//! an inhomogeneous Poisson stream with rate `A · c² / (c² + (t − τ)²)`,
//! the inverse-square falloff of a point source passed at constant speed,
//! sampled by thinning.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scan::{Event, Run};
use crate::spectra::{EnergyGrid, Pmf, SourceVariantId};

/// Sources are never placed before this time.
pub const MIN_SOURCE_TIME_S: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub run_id: String,
    pub duration_s: f64,
    pub background_rate_hz: f64,
    pub source_amplitude_hz: f64,
    pub source_variant: Option<SourceVariantId>,
    pub tau_true_s: Option<f64>,
    pub standoff_shape_s: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn null(run_id: impl Into<String>, duration_s: f64, background_rate_hz: f64, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            duration_s,
            background_rate_hz,
            source_amplitude_hz: 0.0,
            source_variant: None,
            tau_true_s: None,
            standoff_shape_s: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > MIN_SOURCE_TIME_S) {
            return Err(Error::invalid(format!(
                "duration {} s must exceed {MIN_SOURCE_TIME_S} s",
                self.duration_s
            )));
        }
        for (name, x) in [
            ("background_rate_hz", self.background_rate_hz),
            ("source_amplitude_hz", self.source_amplitude_hz),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {x}")));
            }
        }
        if self.source_amplitude_hz > 0.0 {
            if self.source_variant.is_none() {
                return Err(Error::invalid("a source amplitude needs a source variant"));
            }
            let tau = self
                .tau_true_s
                .ok_or_else(|| Error::invalid("a source amplitude needs tau_true_s"))?;
            if !(MIN_SOURCE_TIME_S..=self.duration_s).contains(&tau) {
                return Err(Error::invalid(format!(
                    "tau_true_s {tau} outside [{MIN_SOURCE_TIME_S}, {}]",
                    self.duration_s
                )));
            }
            if !(self.standoff_shape_s.is_finite() && self.standoff_shape_s > 0.0) {
                return Err(Error::invalid("standoff_shape_s must be positive"));
            }
        }
        Ok(())
    }

    pub fn has_source(&self) -> bool {
        self.source_amplitude_hz > 0.0 && self.source_variant.is_some()
    }

    /// Source event rate at time `t`.
    pub fn source_rate(&self, t: f64) -> f64 {
        match (self.has_source(), self.tau_true_s) {
            (true, Some(tau)) => {
                let c2 = self.standoff_shape_s * self.standoff_shape_s;
                self.source_amplitude_hz * c2 / (c2 + (t - tau) * (t - tau))
            }
            _ => 0.0,
        }
    }

    /// Closed-form integral of the source rate over `[0, duration]`.
    pub fn expected_source_events(&self) -> f64 {
        match (self.has_source(), self.tau_true_s) {
            (true, Some(tau)) => {
                let c = self.standoff_shape_s;
                self.source_amplitude_hz * c * (((self.duration_s - tau) / c).atan() + (tau / c).atan())
            }
            _ => 0.0,
        }
    }
}

/// Peak rate that yields `expected_events` source events over a whole,
/// unclipped pass with standoff `c`.
pub fn amplitude_for_expected_events(expected_events: f64, standoff_shape_s: f64) -> f64 {
    expected_events / (PI * standoff_shape_s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub run_id: String,
    /// 0 for a run without a source.
    pub source_id: u8,
    pub shielded: Option<bool>,
    pub tau_true_s: Option<f64>,
}

impl GroundTruth {
    pub fn null(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            source_id: 0,
            shielded: None,
            tau_true_s: None,
        }
    }

    pub fn has_source(&self) -> bool {
        self.source_id != 0
    }
}

/// Draws energies from a pmf, jittered uniformly within half a grid step so
/// every reading still rounds to the bin it was drawn from.
#[derive(Debug, Clone)]
pub struct EnergySampler {
    grid: EnergyGrid,
    index: WeightedIndex<f64>,
}

impl EnergySampler {
    pub fn new(pmf: &Pmf) -> Result<Self> {
        let index = WeightedIndex::new(pmf.mass().iter().copied())
            .map_err(|e| Error::invalid(format!("pmf cannot be sampled: {e}")))?;
        Ok(Self {
            grid: *pmf.grid(),
            index,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let i = self.index.sample(rng);
        let jitter = rng.random::<f64>() - 0.5;
        let e = self.grid.energy(i) + jitter * self.grid.step_kev();
        e.clamp(self.grid.start_kev(), self.grid.end_kev())
    }
}

/// Generates runs from a background pmf and per-variant source pmfs.
#[derive(Debug, Clone)]
pub struct Simulator {
    background: EnergySampler,
    sources: BTreeMap<SourceVariantId, EnergySampler>,
}

impl Simulator {
    pub fn new(background: &Pmf, sources: &BTreeMap<SourceVariantId, Pmf>) -> Result<Self> {
        let sources = sources
            .iter()
            .map(|(k, p)| Ok((*k, EnergySampler::new(p)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            background: EnergySampler::new(background)?,
            sources,
        })
    }

    pub fn variants(&self) -> impl Iterator<Item = SourceVariantId> + '_ {
        self.sources.keys().copied()
    }

    /// Background event times on `[0, duration)`.
    fn background_times(rate: f64, duration: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut times = Vec::new();
        if rate <= 0.0 {
            return times;
        }
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = gap.sample(rng);
        while t < duration {
            times.push(t);
            t += gap.sample(rng);
        }
        times
    }

    /// Source event times by thinning a homogeneous process at the peak rate.
    fn source_times(config: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let peak = config.source_amplitude_hz;
        let candidates = Self::background_times(peak, config.duration_s, rng);
        candidates
            .into_iter()
            .filter(|&t| rng.random::<f64>() * peak < config.source_rate(t))
            .collect()
    }

    /// One run and its label. Identical configs give identical runs.
    pub fn simulate_run(&self, config: &SimConfig) -> Result<(Run, GroundTruth)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut events: Vec<Event> = Self::background_times(config.background_rate_hz, config.duration_s, &mut rng)
            .into_iter()
            .map(|time_s| Event {
                time_s,
                energy_kev: self.background.sample(&mut rng),
            })
            .collect();

        let truth = if config.has_source() {
            let variant = config.source_variant.expect("checked by has_source");
            let sampler = self
                .sources
                .get(&variant)
                .ok_or_else(|| Error::invalid(format!("simulator has no spectrum for variant {variant}")))?;
            let source_events: Vec<Event> = Self::source_times(config, &mut rng)
                .into_iter()
                .map(|time_s| Event {
                    time_s,
                    energy_kev: sampler.sample(&mut rng),
                })
                .collect();
            events.extend(source_events);
            // Stable sort keeps the merge deterministic on equal times.
            events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
            GroundTruth {
                run_id: config.run_id.clone(),
                source_id: variant.source(),
                shielded: Some(variant.shielded()),
                tau_true_s: config.tau_true_s,
            }
        } else {
            GroundTruth::null(config.run_id.clone())
        };
        let run = Run::new(config.run_id.clone(), events)?;
        Ok((run, truth))
    }
}

/// Ranges from which per-run parameters are drawn uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub duration_s: (f64, f64),
    pub background_rate_hz: (f64, f64),
    pub source_amplitude_hz: (f64, f64),
    pub standoff_shape_s: (f64, f64),
    /// When set, replaces the amplitude draw: each source run gets the peak
    /// rate yielding this many expected events at its drawn standoff.
    pub expected_source_events: Option<f64>,
    /// τ is drawn from `[30 + margin, duration − margin]`.
    pub tau_margin_s: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            duration_s: (60.0, 120.0),
            background_rate_hz: (90.0, 130.0),
            source_amplitude_hz: (40.0, 100.0),
            standoff_shape_s: (1.0, 2.0),
            expected_source_events: None,
            tau_margin_s: 5.0,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("duration_s", self.duration_s),
            ("background_rate_hz", self.background_rate_hz),
            ("source_amplitude_hz", self.source_amplitude_hz),
            ("standoff_shape_s", self.standoff_shape_s),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(Error::invalid(format!("range {name} = ({lo}, {hi}) is invalid")));
            }
        }
        if !(self.tau_margin_s >= 0.0) {
            return Err(Error::invalid("tau_margin_s must be non-negative"));
        }
        if self.duration_s.0 <= MIN_SOURCE_TIME_S + 2.0 * self.tau_margin_s {
            return Err(Error::invalid("minimum duration leaves no room for a source"));
        }
        if self.standoff_shape_s.0 <= 0.0 {
            return Err(Error::invalid("standoff_shape_s must be positive"));
        }
        if let Some(n) = self.expected_source_events {
            if !(n.is_finite() && n >= 0.0) {
                return Err(Error::invalid(format!("expected_source_events must be non-negative, got {n}")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub config: SimConfig,
    pub run: Run,
    pub truth: GroundTruth,
}

impl SimulatedRun {
    /// Variant used to generate the run, even when its amplitude is zero.
    pub fn generating_variant(&self) -> Option<SourceVariantId> {
        self.config.source_variant
    }
}

pub fn run_id_for(index: usize) -> String {
    format!("run_{index:05}")
}

/// `n_null` null runs followed by `per_source` runs for each variant the
/// simulator knows, in canonical variant order. Run `i` is generated from
/// seed `seed + i`, so the batch is reproducible regardless of scheduling.
pub fn simulate_batch(
    simulator: &Simulator,
    n_null: usize,
    per_source: usize,
    base: &BatchConfig,
    seed: u64,
) -> Result<Vec<SimulatedRun>> {
    base.validate()?;
    let variants: Vec<SourceVariantId> = simulator.variants().collect();
    let plan: Vec<Option<SourceVariantId>> = std::iter::repeat_n(None, n_null)
        .chain(
            variants
                .iter()
                .flat_map(|&v| std::iter::repeat_n(Some(v), per_source)),
        )
        .collect();
    plan.par_iter()
        .enumerate()
        .map(|(i, variant)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let duration_s = uniform(&mut rng, base.duration_s);
            let background_rate_hz = uniform(&mut rng, base.background_rate_hz);
            let amplitude = uniform(&mut rng, base.source_amplitude_hz);
            let standoff_shape_s = uniform(&mut rng, base.standoff_shape_s);
            let tau = uniform(
                &mut rng,
                (MIN_SOURCE_TIME_S + base.tau_margin_s, duration_s - base.tau_margin_s),
            );
            let run_seed = rng.next_u64();
            let amplitude = match base.expected_source_events {
                Some(n) => amplitude_for_expected_events(n, standoff_shape_s),
                None => amplitude,
            };
            let config = SimConfig {
                run_id: run_id_for(i),
                duration_s,
                background_rate_hz,
                source_amplitude_hz: if variant.is_some() { amplitude } else { 0.0 },
                source_variant: *variant,
                tau_true_s: variant.map(|_| tau),
                standoff_shape_s,
                seed: run_seed,
            };
            let (run, truth) = simulator.simulate_run(&config)?;
            Ok(SimulatedRun { config, run, truth })
        })
        .collect()
}
