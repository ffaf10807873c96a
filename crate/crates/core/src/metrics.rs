//! Detection metrics: confusion counts, precision/recall/F1, exact AUC
//! via the rank statistic, ROC curves, and inference timing.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::data::WindowedDataset;
use crate::error::{Result, TsanError};
use crate::model::{threshold_decision, Model};
use crate::trainer::dataset_scores;

/// Published figures the evaluation report records for comparison;
/// they are never asserted against.
pub const REFERENCE_LATENCY_MS_PER_SAMPLE: f64 = 0.83;
pub const REFERENCE_MODEL_SIZE_MB: f64 = 11.4;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReferenceFigures {
    pub latency_ms_per_sample: f64,
    pub model_size_mb: f64,
}

impl Default for ReferenceFigures {
    fn default() -> Self {
        ReferenceFigures {
            latency_ms_per_sample: REFERENCE_LATENCY_MS_PER_SAMPLE,
            model_size_mb: REFERENCE_MODEL_SIZE_MB,
        }
    }
}

/// Thresholded classification quality. A metric whose denominator is
/// zero reports 0.0 and clears its `*_defined` flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classification {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub precision_defined: bool,
    pub recall: f64,
    pub recall_defined: bool,
    pub f1: f64,
    pub f1_defined: bool,
}

fn validate_inputs(scores: &[f32], labels: &[f32]) -> Result<()> {
    if scores.is_empty() {
        return Err(TsanError::contract(
            "metrics need at least one prediction".to_string(),
        ));
    }
    if scores.len() != labels.len() {
        return Err(TsanError::shape(format!(
            "{} scores against {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(TsanError::contract("scores must be finite".to_string()));
    }
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(TsanError::contract(
            "labels must be exactly 0 or 1".to_string(),
        ));
    }
    Ok(())
}

/// Confusion counts and derived metrics at a decision threshold
/// (attack iff score strictly above it).
pub fn confusion_and_prf1(scores: &[f32], labels: &[f32], threshold: f64) -> Result<Classification> {
    validate_inputs(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fne) = (0u64, 0u64, 0u64, 0u64);
    for (&s, &y) in scores.iter().zip(labels) {
        let d = threshold_decision(s as f64, threshold);
        match (d, y == 1.0) {
            (1, true) => tp += 1,
            (1, false) => fp += 1,
            (0, false) => tn += 1,
            _ => fne += 1,
        }
    }
    let ratio = |num: u64, den: u64| -> (f64, bool) {
        if den == 0 {
            (0.0, false)
        } else {
            (num as f64 / den as f64, true)
        }
    };
    let accuracy = (tp + tn) as f64 / scores.len() as f64;
    let (precision, precision_defined) = ratio(tp, tp + fp);
    let (recall, recall_defined) = ratio(tp, tp + fne);
    let (f1, f1_defined) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), true)
    } else {
        (0.0, false)
    };
    Ok(Classification {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fne,
        accuracy,
        precision,
        precision_defined,
        recall,
        recall_defined,
        f1,
        f1_defined,
    })
}

fn class_counts(labels: &[f32]) -> Result<(u64, u64)> {
    let np = labels.iter().filter(|&&l| l == 1.0).count() as u64;
    let nn = labels.len() as u64 - np;
    if np == 0 || nn == 0 {
        return Err(TsanError::contract(
            "AUC is undefined when only one class is present".to_string(),
        ));
    }
    Ok((np, nn))
}

/// Area under the ROC curve by the Mann-Whitney rank statistic, with
/// ties counted as half. All intermediate arithmetic is integral, so
/// the result equals the O(n^2) pairwise count exactly.
pub fn auc_roc(scores: &[f32], labels: &[f32]) -> Result<f64> {
    validate_inputs(scores, labels)?;
    let (np, nn) = class_counts(labels)?;
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Doubled mid-ranks keep tie groups integral: a group occupying
    // 1-based ranks a..=b has mid-rank (a+b)/2, doubled a+b.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let doubled = (i + 1 + j) as u128;
        for &k in &idx[i..j] {
            if labels[k] == 1.0 {
                doubled_rank_sum += doubled;
            }
        }
        i = j;
    }
    let numerator = doubled_rank_sum - u128::from(np) * (u128::from(np) + 1);
    let denominator = 2 * u128::from(np) * u128::from(nn);
    Ok(numerator as f64 / denominator as f64)
}

/// Direct O(n^2) pairwise AUC: the fraction of (positive, negative)
/// pairs ranked correctly, ties worth half. Kept as an independent
/// reference implementation for tests.
pub fn pairwise_auc(scores: &[f32], labels: &[f32]) -> Result<f64> {
    validate_inputs(scores, labels)?;
    let (np, nn) = class_counts(labels)?;
    let (mut wins, mut ties) = (0u128, 0u128);
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        if li != 1.0 {
            continue;
        }
        for (j, (&sj, &lj)) in scores.iter().zip(labels).enumerate() {
            if i == j || lj != 0.0 {
                continue;
            }
            if si > sj {
                wins += 1;
            } else if si == sj {
                ties += 1;
            }
        }
    }
    let denominator = 2 * u128::from(np) * u128::from(nn);
    Ok((2 * wins + ties) as f64 / denominator as f64)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Smallest score still classified positive at this point;
    /// infinity for the all-negative origin.
    pub threshold: f64,
}

/// ROC curve with one point per distinct score plus the (0,0) origin;
/// the final point is always (1,1). Coordinates never decrease.
pub fn roc_points(scores: &[f32], labels: &[f32]) -> Result<Vec<RocPoint>> {
    validate_inputs(scores, labels)?;
    let (np, nn) = class_counts(labels)?;
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < n {
        let score = scores[idx[i]];
        let mut j = i;
        while j < n && scores[idx[j]] == score {
            if labels[idx[j]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / nn as f64,
            tpr: tp as f64 / np as f64,
            threshold: score as f64,
        });
        i = j;
    }
    Ok(points)
}

/// Two-column CSV of a ROC curve.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.fpr, p.tpr));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingStats {
    /// Median wall time of a full pass divided by the window count.
    pub per_sample_ms: f64,
    pub median_total_ms: f64,
    pub repetitions: usize,
    pub n_samples: usize,
}

/// Median of the wall time of `repetitions` full eval passes over the
/// dataset, after one unrecorded warm-up pass.
pub fn measure_timing<F: Scalar>(
    model: &Model<F>,
    data: &WindowedDataset,
    repetitions: usize,
) -> Result<TimingStats> {
    if repetitions == 0 {
        return Err(TsanError::contract(
            "timing needs at least one repetition".to_string(),
        ));
    }
    if data.is_empty() {
        return Err(TsanError::contract(
            "timing needs a non-empty dataset".to_string(),
        ));
    }
    dataset_scores(model, data)?;
    let mut totals = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        dataset_scores(model, data)?;
        totals.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let median = median_of(&mut totals);
    Ok(TimingStats {
        per_sample_ms: median / data.len() as f64,
        median_total_ms: median,
        repetitions,
        n_samples: data.len(),
    })
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// On-disk size of a saved checkpoint.
pub fn model_size_bytes(path: &Path) -> Result<u64> {
    Ok(std::fs::metadata(path)?.len())
}
