//! Scan-statistic detection, identification and localization of
//! radiological sources from a mobile sensor's `(time, energy)` event stream.
//!
//! The pipeline:
//!
//! 1. [`spectra`]: source and background energy pmfs on a shared grid, and
//!    the precomputed per-variant evidence table `max(0, ln f_k/f_0)`.
//! 2. [`scan`]: kernel-smoothed evidence over candidate closest-approach
//!    times, standardized and maximized into the scan statistic `T`.
//! 3. [`calibration`]: null mean and standard deviation of the maximized
//!    score for every (variant, bandwidth).
//! 4. [`simulator`]: labeled synthetic runs for end-to-end verification.
//! 5. [`evaluation`]: detection, identification and localization metrics.

pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod scan;
pub mod simulator;
pub mod spectra;
pub mod synthetic;

pub use calibration::{calibrate, NullCalibration};
pub use error::{Error, Result};
pub use scan::{decide, scan_run, Decision, Event, Run, ScanConfig, ScanResult};
pub use spectra::{EnergyGrid, IntensityHistogram, LogRatioTable, Pmf, SourceVariantId};
