//! Detection, identification and localization metrics over labeled runs.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scan::{decide, ScanResult};
use crate::simulator::GroundTruth;

/// Source ids 0..=6.
pub const N_CLASSES: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOutcome {
    pub truth: GroundTruth,
    pub result: ScanResult,
}

impl LabeledOutcome {
    pub fn new(truth: GroundTruth, result: ScanResult) -> Result<Self> {
        if truth.run_id != result.run_id {
            return Err(Error::invalid(format!(
                "label for `{}` paired with result for `{}`",
                truth.run_id, result.run_id
            )));
        }
        if truth.source_id as usize >= N_CLASSES {
            return Err(Error::invalid(format!("source id {} out of range", truth.source_id)));
        }
        Ok(Self { truth, result })
    }

    pub fn run_id(&self) -> &str {
        &self.truth.run_id
    }
}

/// Pairs labels with results by run id. Every id must appear on both sides;
/// otherwise the error lists the orphans.
pub fn join_outcomes(truths: Vec<GroundTruth>, results: Vec<ScanResult>) -> Result<Vec<LabeledOutcome>> {
    let label_ids: BTreeSet<&str> = truths.iter().map(|t| t.run_id.as_str()).collect();
    let result_ids: BTreeSet<&str> = results.iter().map(|r| r.run_id.as_str()).collect();
    if label_ids.len() != truths.len() || result_ids.len() != results.len() {
        return Err(Error::invalid("duplicate run ids among labels or results"));
    }
    let no_label: Vec<&str> = result_ids.difference(&label_ids).copied().collect();
    let no_result: Vec<&str> = label_ids.difference(&result_ids).copied().collect();
    if !no_label.is_empty() || !no_result.is_empty() {
        return Err(Error::invalid(format!(
            "run ids do not match; scored without a label: [{}]; labeled without a score: [{}]",
            no_label.join(", "),
            no_result.join(", ")
        )));
    }
    let mut results: Vec<ScanResult> = results;
    results.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    truths
        .into_iter()
        .map(|t| {
            let i = results
                .binary_search_by(|r| r.run_id.as_str().cmp(&t.run_id))
                .expect("ids checked above");
            LabeledOutcome::new(t, results[i].clone())
        })
        .collect()
}

/// Rows are the true source, columns the estimate (0 when `T < φ`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn row_totals(&self) -> [u64; N_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn column_totals(&self) -> [u64; N_CLASSES] {
        let mut totals = [0; N_CLASSES];
        for row in &self.counts {
            for (t, c) in totals.iter_mut().zip(row) {
                *t += c;
            }
        }
        totals
    }

    pub fn grand_total(&self) -> u64 {
        self.row_totals().iter().sum()
    }

    /// Correct source calls over source runs that were detected.
    pub fn id_accuracy_detected(&self) -> Option<f64> {
        let correct: u64 = (1..N_CLASSES).map(|k| self.counts[k][k]).sum();
        let detected: u64 = (1..N_CLASSES).map(|k| self.counts[k][1..].iter().sum::<u64>()).sum();
        (detected > 0).then(|| correct as f64 / detected as f64)
    }

    /// Correct source calls over all source runs; misses count as errors.
    pub fn id_accuracy_all_sources(&self) -> Option<f64> {
        let correct: u64 = (1..N_CLASSES).map(|k| self.counts[k][k]).sum();
        let total: u64 = self.row_totals()[1..].iter().sum();
        (total > 0).then(|| correct as f64 / total as f64)
    }
}

pub fn confusion_matrix(outcomes: &[LabeledOutcome], phi: f64) -> ConfusionMatrix {
    let mut counts = [[0u64; N_CLASSES]; N_CLASSES];
    for o in outcomes {
        let estimated = decide(&o.result, phi).source_id as usize;
        counts[o.truth.source_id as usize][estimated.min(N_CLASSES - 1)] += 1;
    }
    ConfusionMatrix { counts }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationStats {
    pub median_s: f64,
    pub mean_s: f64,
    pub p95_s: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl LocalizationStats {
    pub fn from_distances(distances: &[f64]) -> Option<Self> {
        if distances.is_empty() {
            return None;
        }
        let mut sorted = distances.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            median_s: quantile_sorted(&sorted, 0.5),
            mean_s: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p95_s: quantile_sorted(&sorted, 0.95),
        })
    }
}

/// `|τ_true − τ̂|` for every source run detected at `φ`, in input order.
pub fn localization_distances(outcomes: &[LabeledOutcome], phi: f64) -> Vec<f64> {
    outcomes
        .iter()
        .filter(|o| o.truth.has_source())
        .filter_map(|o| {
            let d = decide(&o.result, phi);
            match (d.source_present, o.truth.tau_true_s, d.tau_s) {
                (true, Some(truth), Some(est)) => Some((truth - est).abs()),
                _ => None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMetrics {
    pub phi: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// 1 when nothing is detected.
    pub precision: f64,
    /// Over detected source runs.
    pub id_accuracy: Option<f64>,
    /// Over all source runs, misses counted as wrong.
    pub id_accuracy_all_sources: Option<f64>,
    pub n_detected: usize,
    pub localization: Option<LocalizationStats>,
}

pub fn threshold_metrics(outcomes: &[LabeledOutcome], phi: f64) -> ThresholdMetrics {
    let cm = confusion_matrix(outcomes, phi);
    let rows = cm.row_totals();
    let negatives = rows[0];
    let positives: u64 = rows[1..].iter().sum();
    let false_pos: u64 = cm.counts[0][1..].iter().sum();
    let true_pos: u64 = (1..N_CLASSES).map(|k| cm.counts[k][1..].iter().sum::<u64>()).sum();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let detections = true_pos + false_pos;
    ThresholdMetrics {
        phi,
        tpr: ratio(true_pos, positives),
        fpr: ratio(false_pos, negatives),
        precision: if detections == 0 { 1.0 } else { ratio(true_pos, detections) },
        id_accuracy: cm.id_accuracy_detected(),
        id_accuracy_all_sources: cm.id_accuracy_all_sources(),
        n_detected: detections as usize,
        localization: LocalizationStats::from_distances(&localization_distances(outcomes, phi)),
    }
}

pub fn metrics_over_thresholds(outcomes: &[LabeledOutcome], phis: &[f64]) -> Result<Vec<ThresholdMetrics>> {
    if phis.is_empty() {
        return Err(Error::invalid("no thresholds given"));
    }
    Ok(phis.iter().map(|&phi| threshold_metrics(outcomes, phi)).collect())
}

/// Area under the ROC curve of `T` separating source runs from null runs,
/// with ties counted as one half.
pub fn roc_auc(outcomes: &[LabeledOutcome]) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = outcomes
        .iter()
        .map(|o| (o.result.statistic, o.truth.has_source()))
        .collect();
    let n_pos = scored.iter().filter(|s| s.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U from average ranks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += avg_rank * scored[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Smallest observed threshold whose false positive rate is at most
/// `max_fpr`, i.e. the most sensitive operating point meeting the bound.
pub fn threshold_for_fpr(outcomes: &[LabeledOutcome], max_fpr: f64) -> Option<f64> {
    let mut candidates: Vec<f64> = outcomes.iter().map(|o| o.result.statistic).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);
    candidates
        .into_iter()
        .find(|&phi| threshold_metrics(outcomes, phi).fpr <= max_fpr)
}
