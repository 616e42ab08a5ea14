//! Evaluation statistics: ranking metrics, regression scores, agreement,
//! retrieval precision, and χ² / ANOVA tests.

mod agreement;
mod human;
mod report;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agreement::{agreement_table, fleiss_kappa, kappa_report, AgreementTable, KappaMode, KappaRow, LabelSlot};
pub use human::{human_performance, HumanMode, HumanPerformance, HumanPerformanceConfig, HumanPerformanceOutput};
pub use report::{
    evaluate, read_predictions, write_predictions, CategoryScore, DimensionScore, EvaluationReport, PredictionRow,
};
pub use stats::{anova_oneway, chi2_independence, AnovaResult, Chi2Result};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no positive labels")]
    NoPositives,
    #[error("labels need at least one positive and one negative")]
    DegenerateLabels,
    #[error("truth is constant; R² undefined")]
    ConstantTruth,
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("non-finite score")]
    NonFinite,
    #[error("instance {instance} has {raters} raters; need at least 2")]
    TooFewRaters { instance: usize, raters: u32 },
    #[error("expected agreement is 1; kappa undefined")]
    UndefinedKappa,
    #[error("fixed-n kappa needs equal rater counts")]
    UnequalRaters,
    #[error("relevant set is empty; R-precision undefined")]
    EmptyRelevant,
    #[error("duplicate id `{0}` in ranking")]
    DuplicateRanked(String),
    #[error("contingency table has a zero row or column total")]
    ZeroMarginal,
    #[error("within-group variance is zero")]
    DegenerateVariance,
    #[error("{0}")]
    Invalid(String),
}

fn check_len(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    Ok(())
}

fn check_finite(xs: &[f64]) -> Result<(), MetricError> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

/// Non-interpolated average precision: mean over positives of the precision
/// at their rank. Scores are sorted descending; ties keep input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_len(scores.len(), labels.len())?;
    check_finite(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Average (1-based) ranks in ascending order; ties share the mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// ROC AUC as the Mann-Whitney statistic: fraction of (positive, negative)
/// pairs ranked correctly, ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_len(scores.len(), labels.len())?;
    check_finite(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum R2Mode {
    #[default]
    Vanilla,
    /// Both vectors replaced by `(average rank − 1) / (n − 1)` first.
    RankPercentile,
}

/// `(average rank − 1) / (n − 1)`, in `[0, 1]`.
pub fn rank_percentiles(xs: &[f64]) -> Vec<f64> {
    if xs.len() < 2 {
        return vec![0.0; xs.len()];
    }
    let d = (xs.len() - 1) as f64;
    average_ranks(xs).into_iter().map(|r| (r - 1.0) / d).collect()
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(pred: &[f64], truth: &[f64], mode: R2Mode) -> Result<f64, MetricError> {
    check_len(pred.len(), truth.len())?;
    if truth.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, got: truth.len() });
    }
    check_finite(pred)?;
    check_finite(truth)?;
    let (p, t) = match mode {
        R2Mode::Vanilla => (pred.to_vec(), truth.to_vec()),
        R2Mode::RankPercentile => (rank_percentiles(pred), rank_percentiles(truth)),
    };
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let ss_tot: f64 = t.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ConstantTruth);
    }
    let ss_res: f64 = p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check_len(pred.len(), truth.len())?;
    if truth.is_empty() {
        return Err(MetricError::TooFew { needed: 1, got: 0 });
    }
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64)
}

/// `2TP / (2TP + FP + FN)`. With nothing predicted and nothing true the score
/// is 1; with true positives present and none found it is 0.
pub fn f1(pred: &[bool], truth: &[bool]) -> Result<f64, MetricError> {
    check_len(pred.len(), truth.len())?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    let den = 2 * tp + fp + fne;
    Ok(if den == 0 { 1.0 } else { 2.0 * tp as f64 / den as f64 })
}

/// Emotion recognition score `½ (mR² + ½ (mAP + mRA))`.
pub fn ers(m_r2: f64, m_ap: f64, m_ra: f64) -> f64 {
    0.5 * (m_r2 + 0.5 * (m_ap + m_ra))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErsSummary {
    pub m_r2: f64,
    pub m_ap: f64,
    pub m_ra: f64,
    pub ers: f64,
}

impl ErsSummary {
    pub fn new(m_r2: f64, m_ap: f64, m_ra: f64) -> Self {
        ErsSummary { m_r2, m_ap, m_ra, ers: ers(m_r2, m_ap, m_ra) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// `(k, P@k)` in the order requested.
    pub precision_at: Vec<(usize, f64)>,
    pub r_precision: f64,
    pub warnings: Vec<String>,
}

/// P@K for each `k` and R-precision. A `k` past the end of the ranking is
/// evaluated on the available prefix (still divided by `k`) with a warning.
pub fn retrieval_metrics(ranked: &[&str], relevant: &[&str], ks: &[usize]) -> Result<RetrievalMetrics, MetricError> {
    let mut seen = std::collections::HashSet::new();
    for id in ranked {
        if !seen.insert(*id) {
            return Err(MetricError::DuplicateRanked(id.to_string()));
        }
    }
    let rel: std::collections::HashSet<&str> = relevant.iter().copied().collect();
    if rel.is_empty() {
        return Err(MetricError::EmptyRelevant);
    }
    let hits_in = |k: usize| ranked.iter().take(k).filter(|id| rel.contains(*id)).count();
    let mut warnings = Vec::new();
    let mut precision_at = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 {
            return Err(MetricError::Invalid("k must be positive".into()));
        }
        if k > ranked.len() {
            warnings.push(format!("k = {k} exceeds ranking length {}", ranked.len()));
        }
        precision_at.push((k, hits_in(k) as f64 / k as f64));
    }
    let r = rel.len();
    if r > ranked.len() {
        warnings.push(format!("R = {r} exceeds ranking length {}", ranked.len()));
    }
    Ok(RetrievalMetrics { precision_at, r_precision: hits_in(r) as f64 / r as f64, warnings })
}
