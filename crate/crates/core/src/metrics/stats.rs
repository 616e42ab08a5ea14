use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::special::{chi2_sf, f_sf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
}

/// Pearson χ² test of independence on a K×M table of counts.
pub fn chi2_independence(table: &[Vec<f64>]) -> Result<Chi2Result, MetricError> {
    let k = table.len();
    let m = table.first().map_or(0, Vec::len);
    if k < 2 || m < 2 || table.iter().any(|r| r.len() != m) {
        return Err(MetricError::Invalid("contingency table must be at least 2×2 and rectangular".into()));
    }
    if table.iter().flatten().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(MetricError::Invalid("counts must be finite and non-negative".into()));
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..m).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    if rows.iter().chain(&cols).any(|&s| s == 0.0) {
        return Err(MetricError::ZeroMarginal);
    }
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &obs) in r.iter().enumerate() {
            let exp = rows[i] * cols[j] / total;
            stat += (obs - exp) * (obs - exp) / exp;
        }
    }
    let df = (k - 1) * (m - 1);
    Ok(Chi2Result { statistic: stat, df, p: chi2_sf(stat, df as f64) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
}

/// One-way ANOVA `F = MSB / MSW`.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<AnovaResult, MetricError> {
    if groups.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, got: groups.len() });
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(MetricError::TooFew { needed: 2, got: g.len() });
    }
    for g in groups {
        super::check_finite(g)?;
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (mean - grand).powi(2);
        ssw += g.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    }
    let df_between = groups.len() - 1;
    let df_within = n - groups.len();
    if ssw == 0.0 {
        return Err(MetricError::DegenerateVariance);
    }
    let f = (ssb / df_between as f64) / (ssw / df_within as f64);
    Ok(AnovaResult { f, df_between, df_within, p: f_sf(f, df_between as f64, df_within as f64) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn chi2_cases() {
        let r = chi2_independence(&[vec![10.0, 10.0], vec![10.0, 10.0]]).unwrap();
        assert_eq!((r.statistic, r.df, r.p), (0.0, 1, 1.0));
        // expected counts all 12.5: 4 · 7.5² / 12.5 = 18
        let r = chi2_independence(&[vec![20.0, 5.0], vec![5.0, 20.0]]).unwrap();
        assert!((r.statistic - 18.0).abs() < 1e-12);
        assert!((r.p - 2.209_049_699_858_544e-5).abs() < 1e-12);
        assert_eq!(chi2_independence(&[vec![0.0, 0.0], vec![1.0, 2.0]]), Err(MetricError::ZeroMarginal));
    }

    #[test]
    fn chi2_df_for_rectangular() {
        let r = chi2_independence(&[vec![5.0, 7.0, 9.0], vec![8.0, 2.0, 4.0]]).unwrap();
        assert_eq!(r.df, 2);
        assert!(r.p > 0.0 && r.p < 1.0);
    }

    #[test]
    fn anova_cases() {
        let r = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!((r.f, r.p), (0.0, 1.0));
        let r = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!((r.df_between, r.df_within), (1, 4));
        assert!((r.f - 13.5).abs() < 1e-12);
        assert!((r.p - 0.021_311_641_128_756_726).abs() < 1e-10);
        assert_eq!(anova_oneway(&[vec![1.0, 1.0], vec![2.0, 2.0]]), Err(MetricError::DegenerateVariance));
        assert!(anova_oneway(&[vec![1.0], vec![2.0, 3.0]]).is_err());
    }

    proptest! {
        #[test]
        fn p_values_non_increasing_in_statistic(a in 0.0f64..50.0, b in 0.0f64..50.0, df in 1usize..8, d2 in 2usize..40) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(chi2_sf(hi, df as f64) <= chi2_sf(lo, df as f64) + 1e-15);
            prop_assert!(f_sf(hi, df as f64, d2 as f64) <= f_sf(lo, df as f64, d2 as f64) + 1e-15);
        }
    }
}
