use serde::{Deserialize, Serialize};

use super::{ForestError, Result};
use crate::par;

/// Fewer valid rows than this and a feature is skipped.
pub const MIN_VALID_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub feature: String,
    pub r2: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignificanceOutput {
    /// Sorted by R² descending; ties keep column order.
    pub rows: Vec<SignificanceRow>,
    /// `(feature, reason)` for features that could not be fitted.
    pub skipped: Vec<(String, String)>,
}

fn ols(pairs: &[(f64, f64)]) -> std::result::Result<(f64, f64, f64), &'static str> {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err("constant feature");
    }
    if syy == 0.0 {
        return Err("constant target on valid rows");
    }
    let slope = sxy / sxx;
    let r2 = (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0);
    Ok((r2, slope, my - slope * mx))
}

/// Single-feature least squares of `target` on each column, using the rows
/// where both are present.
pub fn feature_significance(
    names: &[String],
    rows: &[Vec<Option<f64>>],
    target: &[Option<f64>],
) -> Result<SignificanceOutput> {
    if rows.len() != target.len() {
        return Err(ForestError::Shape(format!("{} rows but {} targets", rows.len(), target.len())));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != names.len()) {
        return Err(ForestError::Shape(format!("row {i} has {} columns, expected {}", rows[i].len(), names.len())));
    }
    let present: Vec<f64> = target.iter().flatten().copied().collect();
    if present.windows(2).all(|w| w[0] == w[1]) {
        return Err(ForestError::Target("target is constant".into()));
    }
    let fits = par::map_range(names.len(), |j| {
        let pairs: Vec<(f64, f64)> = rows
            .iter()
            .zip(target)
            .filter_map(|(r, t)| Some((r[j]?, (*t)?)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        if pairs.len() < MIN_VALID_ROWS {
            return Err(format!("{} valid rows; need at least {MIN_VALID_ROWS}", pairs.len()));
        }
        ols(&pairs).map(|(r2, slope, intercept)| (r2, slope, intercept, pairs.len())).map_err(str::to_string)
    });
    let mut out = SignificanceOutput::default();
    for (name, fit) in names.iter().zip(fits) {
        match fit {
            Ok((r2, slope, intercept, n)) => out.rows.push(SignificanceRow { feature: name.clone(), r2, slope, intercept, n }),
            Err(reason) => out.skipped.push((name.clone(), reason)),
        }
    }
    out.rows.sort_by(|a, b| b.r2.total_cmp(&a.r2));
    Ok(out)
}
