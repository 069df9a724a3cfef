//! A deterministic synthetic spectrum library.
//!
//! Stands in for measured source spectra when none are available: Gaussian
//! photopeaks at each isotope's principal gamma lines with NaI-like
//! resolution, a Compton continuum below each line's Compton edge, and a
//! low-energy detection threshold. Shielded variants attenuate every line by
//! an energy-dependent transmission and redistribute part of the absorbed
//! flux into a down-scattered continuum.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::spectra::{IntensityHistogram, SourceVariantId};

const ELECTRON_REST_KEV: f64 = 511.0;
const N_BINS: usize = 1995;
/// FWHM fraction at 662 keV.
const RESOLUTION_AT_662: f64 = 0.075;

#[derive(Debug, Clone, Copy)]
struct Line {
    energy_kev: f64,
    intensity: f64,
}

const fn line(energy_kev: f64, intensity: f64) -> Line {
    Line { energy_kev, intensity }
}

/// Highly enriched uranium: 235U lines plus 234mPa at 1001 keV.
const HEU: &[Line] = &[
    line(93.0, 0.25),
    line(143.8, 0.22),
    line(163.4, 0.10),
    line(185.7, 1.0),
    line(205.3, 0.10),
    line(1001.0, 0.08),
];

/// Weapons-grade plutonium.
const WGPU: &[Line] = &[
    line(59.5, 0.45),
    line(129.3, 0.15),
    line(208.0, 0.15),
    line(375.0, 0.35),
    line(413.7, 0.55),
    line(769.0, 0.05),
];

const I131: &[Line] = &[
    line(80.2, 0.05),
    line(284.3, 0.08),
    line(364.5, 1.0),
    line(637.0, 0.09),
    line(723.0, 0.02),
];

const CO60: &[Line] = &[line(1173.2, 1.0), line(1332.5, 1.0)];

const TC99M: &[Line] = &[line(140.5, 1.0)];

fn source_lines(source: u8) -> &'static [Line] {
    match source {
        1 => HEU,
        2 => WGPU,
        3 => I131,
        4 => CO60,
        5 => TC99M,
        _ => &[],
    }
}

/// Natural background: 40K, the 238U and 232Th chains, and lead x-rays.
const BACKGROUND_LINES: &[Line] = &[
    line(75.0, 0.6),
    line(238.6, 0.6),
    line(295.2, 0.25),
    line(351.9, 0.45),
    line(583.2, 0.35),
    line(609.3, 0.6),
    line(911.2, 0.3),
    line(1120.3, 0.2),
    line(1460.8, 1.0),
    line(1764.5, 0.2),
    line(2614.5, 0.25),
];

fn sigma_kev(energy_kev: f64) -> f64 {
    let fwhm = RESOLUTION_AT_662 * 662.0 * (energy_kev / 662.0).sqrt();
    fwhm / 2.3548
}

fn gaussian(x: f64, mu: f64, sigma: f64) -> f64 {
    let u = (x - mu) / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Smoothed step: ~1 below `edge`, ~0 above, width `sigma`.
fn falling_step(x: f64, edge: f64, sigma: f64) -> f64 {
    0.5 * erfc((x - edge) / (sigma * std::f64::consts::SQRT_2))
}

/// Complementary error function (Numerical Recipes erfcc, |rel err| < 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Detector efficiency rolloff below ~30 keV.
fn threshold(x: f64) -> f64 {
    1.0 / (1.0 + (-(x - 30.0) / 5.0).exp())
}

fn photofraction(energy_kev: f64) -> f64 {
    1.0 / (1.0 + (energy_kev / 400.0).powf(1.2))
}

fn compton_edge(energy_kev: f64) -> f64 {
    let a = 2.0 * energy_kev / ELECTRON_REST_KEV;
    energy_kev * a / (1.0 + a)
}

/// Count-rate density at `x` from one line with total rate `rate`.
fn line_response(x: f64, l: Line, rate: f64) -> f64 {
    let pf = photofraction(l.energy_kev);
    let sigma = sigma_kev(l.energy_kev);
    let peak = rate * pf * gaussian(x, l.energy_kev, sigma);
    let edge = compton_edge(l.energy_kev);
    let continuum_height = rate * (1.0 - pf) / edge.max(1.0);
    let continuum = continuum_height * falling_step(x, edge, sigma_kev(edge));
    let backscatter_e = l.energy_kev - edge;
    let backscatter = 0.04 * rate * gaussian(x, backscatter_e, sigma_kev(backscatter_e.max(20.0)) * 1.5);
    peak + continuum + backscatter
}

/// Shield transmission.
fn transmission(energy_kev: f64) -> f64 {
    let mu = 1.79 * (100.0 / energy_kev).powf(2.5) + 0.28;
    (-mu).exp()
}

fn spectrum_density(x: f64, lines: &[Line], shielded: bool) -> f64 {
    let mut total = 0.0;
    for &l in lines {
        if shielded {
            let t = transmission(l.energy_kev);
            total += line_response(x, l, l.intensity * t);
            // Half of the absorbed flux reappears scattered down to ~30–70 % of
            // the line energy.
            let scattered = 0.5 * l.intensity * (1.0 - t);
            let lo = 0.3 * l.energy_kev;
            let hi = 0.7 * l.energy_kev;
            let s = sigma_kev(hi);
            let band = falling_step(x, hi, s) * (1.0 - falling_step(x, lo, s));
            total += scattered * band / (hi - lo);
        } else {
            total += line_response(x, l, l.intensity);
        }
    }
    total * threshold(x)
}

fn background_density(x: f64) -> f64 {
    // Scattered continuum falling roughly as a power law out to the grid end.
    let continuum = 40.0 * (x / 100.0).powf(-1.4) * (-x / 2500.0).exp() + 0.002;
    let mut lines = 0.0;
    for &l in BACKGROUND_LINES {
        lines += line_response(x, l, l.intensity);
    }
    (continuum + 1.5 * lines) * threshold(x)
}

fn histogram_from(density: impl Fn(f64) -> f64) -> Result<IntensityHistogram> {
    let counts = (0..N_BINS)
        .map(|j| {
            let lo = IntensityHistogram::DEFAULT_BIN_START_KEV + j as f64 * IntensityHistogram::DEFAULT_BIN_WIDTH_KEV;
            // Three-point Simpson rule over the bin.
            let w = IntensityHistogram::DEFAULT_BIN_WIDTH_KEV;
            let v = (density(lo) + 4.0 * density(lo + 0.5 * w) + density(lo + w)) * w / 6.0;
            // Drop numerically negligible tails so spectra have finite support.
            if v < 1e-14 {
                0.0
            } else {
                v
            }
        })
        .collect();
    IntensityHistogram::with_default_bins(counts)
}

/// Source intensity histograms for sources 1–5 (both shieldings) and the
/// natural background on the default 11 keV / 2 keV binning.
#[derive(Debug, Clone)]
pub struct SpectrumLibrary {
    pub sources: BTreeMap<SourceVariantId, IntensityHistogram>,
    pub background: IntensityHistogram,
}

impl SpectrumLibrary {
    pub fn synthetic() -> Result<Self> {
        let mut sources = BTreeMap::new();
        for k in SourceVariantId::all().filter(|k| k.source() <= 5) {
            let lines = source_lines(k.source());
            sources.insert(k, histogram_from(|x| spectrum_density(x, lines, k.shielded()))?);
        }
        Ok(Self {
            sources,
            background: histogram_from(background_density)?,
        })
    }
}
