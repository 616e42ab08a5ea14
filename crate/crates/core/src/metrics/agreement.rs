use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::annotations::{
    AgeGroup, AnnotationRecord, CategoricalLabel, Category, Ethnicity, Gender, ParticipantProfile,
};
use crate::par;

/// Per-instance rating counts `n_ij`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub counts: Vec<Vec<u32>>,
}

impl AgreementTable {
    pub fn new(counts: Vec<Vec<u32>>) -> Result<Self, MetricError> {
        let k = counts.first().map_or(0, Vec::len);
        if k < 2 {
            return Err(MetricError::Invalid("agreement table needs at least two classes".into()));
        }
        if counts.iter().any(|r| r.len() != k) {
            return Err(MetricError::Invalid("ragged agreement table".into()));
        }
        Ok(AgreementTable { counts })
    }

    pub fn n_instances(&self) -> usize {
        self.counts.len()
    }

    pub fn raters(&self, i: usize) -> u32 {
        self.counts[i].iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMode {
    /// Every instance has the same number of raters `n`.
    FixedN,
    /// Class proportions averaged per instance: `p_j = (1/N) Σ_i n_ij / n_i`.
    VariableN,
}

/// Fleiss' kappa `(P̄ − P_e) / (1 − P_e)` with
/// `P_i = (Σ_j n_ij² − n_i) / (n_i (n_i − 1))` and `P_e = Σ_j p_j²`.
pub fn fleiss_kappa(table: &AgreementTable, mode: KappaMode) -> Result<f64, MetricError> {
    let n_inst = table.n_instances();
    if n_inst == 0 {
        return Err(MetricError::TooFew { needed: 1, got: 0 });
    }
    let k = table.counts[0].len();
    for i in 0..n_inst {
        let n = table.raters(i);
        if n < 2 {
            return Err(MetricError::TooFewRaters { instance: i, raters: n });
        }
    }
    let mut p = vec![0.0; k];
    match mode {
        KappaMode::FixedN => {
            let n = table.raters(0);
            if (1..n_inst).any(|i| table.raters(i) != n) {
                return Err(MetricError::UnequalRaters);
            }
            for row in &table.counts {
                for (pj, &c) in p.iter_mut().zip(row) {
                    *pj += c as f64;
                }
            }
            p.iter_mut().for_each(|x| *x /= (n_inst as u64 * n as u64) as f64);
        }
        KappaMode::VariableN => {
            for (i, row) in table.counts.iter().enumerate() {
                let n = table.raters(i) as f64;
                for (pj, &c) in p.iter_mut().zip(row) {
                    *pj += c as f64 / n;
                }
            }
            p.iter_mut().for_each(|x| *x /= n_inst as f64);
        }
    }
    let p_bar = table
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n = table.raters(i) as f64;
            let sq: f64 = row.iter().map(|&c| (c as f64) * (c as f64)).sum();
            (sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / n_inst as f64;
    let p_e: f64 = p.iter().map(|x| x * x).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(MetricError::UndefinedKappa);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// A categorical question on the annotation form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSlot {
    Category(Category),
    Gender,
    Age,
    Ethnicity,
}

impl LabelSlot {
    pub fn all() -> Vec<LabelSlot> {
        let mut v: Vec<LabelSlot> = Category::ALL.iter().map(|&c| LabelSlot::Category(c)).collect();
        v.extend([LabelSlot::Gender, LabelSlot::Age, LabelSlot::Ethnicity]);
        v
    }

    pub fn name(self) -> String {
        match self {
            LabelSlot::Category(c) => c.name().to_string(),
            LabelSlot::Gender => "gender".into(),
            LabelSlot::Age => "age".into(),
            LabelSlot::Ethnicity => "ethnicity".into(),
        }
    }

    pub fn classes(self) -> usize {
        match self {
            LabelSlot::Category(_) => 2,
            LabelSlot::Gender => Gender::classes(),
            LabelSlot::Age => AgeGroup::classes(),
            LabelSlot::Ethnicity => Ethnicity::classes(),
        }
    }

    pub fn value(self, r: &AnnotationRecord) -> usize {
        match self {
            LabelSlot::Category(c) => r.has(c) as usize,
            LabelSlot::Gender => r.char_gender.index(),
            LabelSlot::Age => r.char_age.index(),
            LabelSlot::Ethnicity => r.char_ethnicity.index(),
        }
    }
}

/// Subject-by-class table for one question over non-corrupted records that
/// pass `keep`. Instances left with fewer than two raters are dropped.
pub fn agreement_table(
    records: &[AnnotationRecord],
    slot: LabelSlot,
    keep: impl Fn(&AnnotationRecord) -> bool,
) -> Option<AgreementTable> {
    let k = slot.classes();
    let mut by_inst: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.corrupted && keep(r)) {
        by_inst.entry(r.instance_id.as_str()).or_insert_with(|| vec![0; k])[slot.value(r)] += 1;
    }
    let counts: Vec<Vec<u32>> = by_inst.into_values().filter(|c| c.iter().sum::<u32>() >= 2).collect();
    if counts.is_empty() {
        return None;
    }
    AgreementTable::new(counts).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub label: String,
    pub kappa: Option<f64>,
    pub instances: usize,
    pub filtered_kappa: Option<f64>,
    pub filtered_instances: usize,
}

fn kappa_of(t: Option<&AgreementTable>) -> Option<f64> {
    t.and_then(|t| fleiss_kappa(t, KappaMode::VariableN).ok())
}

/// Kappa per category and demographic question. With `filter`, a second
/// column keeps only participants whose reliability is at least the
/// threshold (participants without a profile are dropped).
pub fn kappa_report(records: &[AnnotationRecord], filter: Option<(&[ParticipantProfile], f64)>) -> Vec<KappaRow> {
    let reliable: Option<HashMap<&str, bool>> = filter.map(|(profiles, thr)| {
        profiles.iter().map(|p| (p.participant_id.as_str(), p.r >= thr)).collect()
    });
    par::map(&LabelSlot::all(), |&slot| {
        let all = agreement_table(records, slot, |_| true);
        let filtered = reliable.as_ref().map(|ok| {
            agreement_table(records, slot, |r| ok.get(r.participant_id.as_str()).copied().unwrap_or(false))
        });
        KappaRow {
            label: slot.name(),
            kappa: kappa_of(all.as_ref()),
            instances: all.as_ref().map_or(0, |t| t.n_instances()),
            filtered_kappa: filtered.as_ref().and_then(|t| kappa_of(t.as_ref())),
            filtered_instances: filtered.flatten().map_or(0, |t| t.n_instances()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(rows: &[&[u32]]) -> AgreementTable {
        AgreementTable::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn hand_case() {
        // P̄ = 7/9, p = (5/9, 4/9), P_e = 41/81 → κ = 22/40
        let k = fleiss_kappa(&t(&[&[3, 0], &[0, 3], &[2, 1]]), KappaMode::FixedN).unwrap();
        assert!((k - 0.55).abs() < 1e-12);
    }

    #[test]
    fn perfect_agreement() {
        let k = fleiss_kappa(&t(&[&[5, 0], &[0, 5], &[5, 0]]), KappaMode::VariableN).unwrap();
        assert_eq!(k, 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(fleiss_kappa(&t(&[&[1, 0]]), KappaMode::VariableN), Err(MetricError::TooFewRaters { instance: 0, raters: 1 }));
        assert_eq!(fleiss_kappa(&t(&[&[3, 0], &[2, 0]]), KappaMode::VariableN), Err(MetricError::UndefinedKappa));
        assert_eq!(fleiss_kappa(&t(&[&[3, 0], &[1, 1]]), KappaMode::FixedN), Err(MetricError::UnequalRaters));
    }

    #[test]
    fn uniform_random_labels_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<u32>> = (0..10_000)
            .map(|_| {
                let pos = (0..5).filter(|_| rng.random::<bool>()).count() as u32;
                vec![5 - pos, pos]
            })
            .collect();
        let k = fleiss_kappa(&AgreementTable::new(rows).unwrap(), KappaMode::FixedN).unwrap();
        assert!(k.abs() < 0.05, "{k}");
    }

    proptest! {
        #[test]
        fn fixed_equals_variable_for_constant_n(rows in prop::collection::vec(0u32..=4, 2..40)) {
            let table = AgreementTable::new(rows.iter().map(|&a| vec![a, 4 - a]).collect()).unwrap();
            let a = fleiss_kappa(&table, KappaMode::FixedN);
            let b = fleiss_kappa(&table, KappaMode::VariableN);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
