use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{average_precision, mse, r2, roc_auc, ErsSummary, MetricError, R2Mode};
use crate::annotations::{Category, Dimension, LabelRow, Split, NUM_CATEGORIES};

/// Model output for one instance: a score per category and VAD in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub instance_id: String,
    pub scores: [f64; NUM_CATEGORIES],
    pub vad: [f64; 3],
}

fn prediction_header() -> Vec<String> {
    let mut h = vec!["instance_id".to_string()];
    h.extend(Category::ALL.iter().map(|c| format!("score_{}", c.name())));
    h.extend(Dimension::ALL.iter().map(|d| d.name().to_string()));
    h
}

fn io_err(e: impl std::fmt::Display) -> MetricError {
    MetricError::Invalid(e.to_string())
}

pub fn write_predictions<W: Write>(w: W, rows: &[PredictionRow]) -> Result<(), MetricError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(prediction_header()).map_err(io_err)?;
    for r in rows {
        let mut rec = vec![r.instance_id.clone()];
        rec.extend(r.scores.iter().chain(&r.vad).map(|x| x.to_string()));
        out.write_record(rec).map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_predictions<R: Read>(r: R) -> Result<Vec<PredictionRow>, MetricError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(io_err)?.iter().map(|s| s.trim().to_string()).collect();
    if header != prediction_header() {
        return Err(MetricError::Invalid("prediction table: unexpected header".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io_err)?;
        let num = |j: usize| -> Result<f64, MetricError> {
            rec[j].trim().parse().map_err(|_| MetricError::Invalid(format!("prediction row {}: bad number `{}`", i + 1, &rec[j])))
        };
        let mut scores = [0.0; NUM_CATEGORIES];
        for (c, s) in scores.iter_mut().enumerate() {
            *s = num(1 + c)?;
        }
        let b = 1 + NUM_CATEGORIES;
        out.push(PredictionRow { instance_id: rec[0].to_string(), scores, vad: [num(b)?, num(b + 1)?, num(b + 2)?] });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: Category,
    pub positive_proportion: f64,
    /// Missing when the category has no positives.
    pub ap: Option<f64>,
    /// Missing when the category is all positive or all negative.
    pub ra: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub dimension: Dimension,
    pub r2: Option<f64>,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_instances: usize,
    pub categories: Vec<CategoryScore>,
    pub dimensions: Vec<DimensionScore>,
    pub summary: ErsSummary,
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> f64 {
    let v: Vec<f64> = xs.flatten().collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scores predictions against label rows (restricted to `split` when given).
/// Means skip undefined per-category or per-dimension entries.
pub fn evaluate(labels: &[LabelRow], preds: &[PredictionRow], split: Option<Split>) -> Result<EvaluationReport, MetricError> {
    let by_id: HashMap<&str, &PredictionRow> = preds.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let rows: Vec<&LabelRow> = labels.iter().filter(|l| split.is_none() || l.split == split).collect();
    if rows.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, got: rows.len() });
    }
    let mut joined = Vec::with_capacity(rows.len());
    for l in rows {
        let p = by_id
            .get(l.instance_id.as_str())
            .ok_or_else(|| MetricError::Invalid(format!("no prediction for `{}`", l.instance_id)))?;
        joined.push((l, *p));
    }
    let n = joined.len();
    let categories: Vec<CategoryScore> = Category::ALL
        .iter()
        .map(|&c| {
            let i = c.index();
            let s: Vec<f64> = joined.iter().map(|(_, p)| p.scores[i]).collect();
            let y: Vec<bool> = joined.iter().map(|(l, _)| l.labels[i]).collect();
            let pos = y.iter().filter(|&&b| b).count();
            Ok(CategoryScore {
                category: c,
                positive_proportion: pos as f64 / n as f64,
                ap: match average_precision(&s, &y) {
                    Ok(v) => Some(v),
                    Err(MetricError::NoPositives) => None,
                    Err(e) => return Err(e),
                },
                ra: match roc_auc(&s, &y) {
                    Ok(v) => Some(v),
                    Err(MetricError::DegenerateLabels) => None,
                    Err(e) => return Err(e),
                },
            })
        })
        .collect::<Result<_, _>>()?;
    let dimensions: Vec<DimensionScore> = Dimension::ALL
        .iter()
        .map(|&d| {
            let p: Vec<f64> = joined.iter().map(|(_, p)| p.vad[d.index()]).collect();
            let t: Vec<f64> = joined.iter().map(|(l, _)| l.vad[d.index()]).collect();
            Ok(DimensionScore { dimension: d, r2: r2(&p, &t, R2Mode::Vanilla).ok(), mse: mse(&p, &t)? })
        })
        .collect::<Result<_, MetricError>>()?;
    let summary = ErsSummary::new(
        mean_defined(dimensions.iter().map(|d| d.r2)),
        mean_defined(categories.iter().map(|c| c.ap)),
        mean_defined(categories.iter().map(|c| c.ra)),
    );
    Ok(EvaluationReport { n_instances: n, categories, dimensions, summary })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl EvaluationReport {
    /// Plain-text report: per-category and per-dimension tables, then the
    /// mR² / mAP / mRA / ERS summary row.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "instances: {}", self.n_instances);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8}", "category", "P.P.", "AP", "RA");
        for c in &self.categories {
            let _ = writeln!(
                s,
                "{:<16} {:>8.4} {:>8} {:>8}",
                c.category.name(),
                c.positive_proportion,
                opt(c.ap),
                opt(c.ra)
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>8} {:>8}", "dimension", "R2", "MSE");
        for d in &self.dimensions {
            let _ = writeln!(s, "{:<16} {:>8} {:>8.4}", d.dimension.name(), opt(d.r2), d.mse);
        }
        let _ = writeln!(s);
        let m = &self.summary;
        let _ = writeln!(s, "{:>8} {:>8} {:>8} {:>8}", "mR2", "mAP", "mRA", "ERS");
        let _ = writeln!(s, "{:>8.4} {:>8.4} {:>8.4} {:>8.3}", m.m_r2, m.m_ap, m.m_ra, m.ers);
        s
    }
}
