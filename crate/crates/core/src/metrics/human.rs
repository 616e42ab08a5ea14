use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{f1, mse, r2, R2Mode};
use crate::annotations::{
    aggregate_dimensional, instance_confidence, AggregatedLabel, AnnotationRecord, Dimension, ParticipantProfile,
    NUM_CATEGORIES,
};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HumanMode {
    /// Score against the final aggregate, which includes the participant.
    #[default]
    FullAggregate,
    /// Score against a reliability-weighted consensus of the other annotators.
    LeaveOneOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanPerformanceConfig {
    pub confidence_min: f64,
    pub mode: HumanMode,
}

impl Default for HumanPerformanceConfig {
    fn default() -> Self {
        HumanPerformanceConfig { confidence_min: 0.95, mode: HumanMode::FullAggregate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanPerformance {
    pub participant_id: String,
    /// Instances scored for categories.
    pub n_instances: usize,
    /// Instances scored for VAD (confidence filter applied).
    pub n_dimensional: usize,
    pub f1: Vec<f64>,
    pub mean_f1: f64,
    pub r2: [Option<f64>; 3],
    pub r2_rank: [Option<f64>; 3],
    pub mse: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HumanPerformanceOutput {
    pub participants: Vec<HumanPerformance>,
    pub excluded: Vec<(String, String)>,
}

struct Truth {
    labels: [bool; NUM_CATEGORIES],
    vad: [f64; 3],
    confidence: f64,
}

fn leave_one_out(others: &[&AnnotationRecord], rel: &HashMap<&str, f64>) -> Option<Truth> {
    if others.is_empty() {
        return None;
    }
    let rs: Vec<f64> = others.iter().map(|r| rel.get(r.participant_id.as_str()).copied().unwrap_or(0.0)).collect();
    let total: f64 = rs.iter().sum();
    let weights: Vec<f64> = if total > 0.0 { rs.clone() } else { vec![1.0; rs.len()] };
    let wsum: f64 = weights.iter().sum();
    let mut labels = [false; NUM_CATEGORIES];
    for (c, slot) in labels.iter_mut().enumerate() {
        let pos: f64 = others.iter().zip(&weights).filter(|(r, _)| r.categories[c]).map(|(_, w)| w).sum();
        *slot = pos / wsum >= 0.5;
    }
    let mut vad = [0.0; 3];
    for d in Dimension::ALL {
        let pairs: Vec<(u8, f64)> = others.iter().zip(&rs).map(|(r, &w)| (r.dimension(d), w)).collect();
        vad[d.index()] = aggregate_dimensional(&pairs).ok()?;
    }
    Some(Truth { labels, vad, confidence: instance_confidence(&rs) })
}

/// Scores each participant's own annotations as predictions against the
/// consensus labels. Participants with fewer than two scored instances are
/// reported in `excluded`.
pub fn human_performance(
    records: &[AnnotationRecord],
    labels: &[AggregatedLabel],
    profiles: &[ParticipantProfile],
    cfg: &HumanPerformanceConfig,
) -> HumanPerformanceOutput {
    let agg: HashMap<&str, &AggregatedLabel> = labels.iter().map(|l| (l.instance_id.as_str(), l)).collect();
    let rel: HashMap<&str, f64> = profiles.iter().map(|p| (p.participant_id.as_str(), p.r)).collect();
    let mut by_participant: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    let mut by_instance: HashMap<&str, Vec<&AnnotationRecord>> = HashMap::new();
    for r in records.iter().filter(|r| !r.corrupted) {
        by_participant.entry(r.participant_id.as_str()).or_default().push(r);
        by_instance.entry(r.instance_id.as_str()).or_default().push(r);
    }
    let participants: Vec<(&str, Vec<&AnnotationRecord>)> = by_participant.into_iter().collect();

    let results = par::map(&participants, |(pid, recs)| {
        let mut scored: Vec<(&AnnotationRecord, Truth)> = Vec::new();
        for r in recs {
            let truth = match cfg.mode {
                HumanMode::FullAggregate => agg.get(r.instance_id.as_str()).map(|l| Truth {
                    labels: l.binary_labels,
                    vad: l.vad,
                    confidence: l.confidence,
                }),
                HumanMode::LeaveOneOut => {
                    let others: Vec<&AnnotationRecord> = by_instance[r.instance_id.as_str()]
                        .iter()
                        .copied()
                        .filter(|o| o.participant_id != *pid)
                        .collect();
                    leave_one_out(&others, &rel)
                }
            };
            if let Some(t) = truth {
                scored.push((r, t));
            }
        }
        if scored.len() < 2 {
            return Err((pid.to_string(), format!("{} scored instances; need at least 2", scored.len())));
        }
        let f1s: Vec<f64> = (0..NUM_CATEGORIES)
            .map(|c| {
                let pred: Vec<bool> = scored.iter().map(|(r, _)| r.categories[c]).collect();
                let truth: Vec<bool> = scored.iter().map(|(_, t)| t.labels[c]).collect();
                f1(&pred, &truth).expect("equal lengths")
            })
            .collect();
        let dim: Vec<&(&AnnotationRecord, Truth)> =
            scored.iter().filter(|(_, t)| t.confidence >= cfg.confidence_min).collect();
        let mut out = HumanPerformance {
            participant_id: pid.to_string(),
            n_instances: scored.len(),
            n_dimensional: dim.len(),
            mean_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
            f1: f1s,
            r2: [None; 3],
            r2_rank: [None; 3],
            mse: [None; 3],
        };
        for d in Dimension::ALL {
            let pred: Vec<f64> = dim.iter().map(|(r, _)| r.dimension(d) as f64 / 10.0).collect();
            let truth: Vec<f64> = dim.iter().map(|(_, t)| t.vad[d.index()]).collect();
            out.r2[d.index()] = r2(&pred, &truth, R2Mode::Vanilla).ok();
            out.r2_rank[d.index()] = r2(&pred, &truth, R2Mode::RankPercentile).ok();
            out.mse[d.index()] = mse(&pred, &truth).ok();
        }
        Ok(out)
    });

    let mut output = HumanPerformanceOutput::default();
    for r in results {
        match r {
            Ok(p) => output.participants.push(p),
            Err(e) => output.excluded.push(e),
        }
    }
    output
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{AgeGroup, Ethnicity, Gender};

    fn rec(instance: usize, participant: &str, v: u8, cats: &[usize]) -> AnnotationRecord {
        let mut categories = [false; NUM_CATEGORIES];
        for &c in cats {
            categories[c] = true;
        }
        AnnotationRecord {
            instance_id: format!("m/i{instance}"),
            participant_id: participant.into(),
            corrupted: false,
            categories,
            valence: v,
            arousal: v,
            dominance: v,
            char_gender: Gender::Male,
            char_age: AgeGroup::Adult,
            char_ethnicity: Ethnicity::White,
            start_frame: 0,
            end_frame: 1,
        }
    }

    fn label(instance: usize, v: f64, cats: &[usize], confidence: f64) -> AggregatedLabel {
        let mut binary_labels = [false; NUM_CATEGORIES];
        for &c in cats {
            binary_labels[c] = true;
        }
        AggregatedLabel {
            instance_id: format!("m/i{instance}"),
            movie_id: "m".into(),
            ds_scores: binary_labels.map(|b| b as u8 as f64),
            binary_labels,
            vad: [v; 3],
            confidence,
            interval: (0, 1),
            gender: Gender::Male,
            age: AgeGroup::Adult,
            ethnicity: Ethnicity::White,
            n_annotations: 1,
        }
    }

    #[test]
    fn identical_to_aggregate_scores_perfectly() {
        let recs: Vec<_> = (0..6).map(|i| rec(i, "p", (i + 2) as u8, &[i % 3])).collect();
        let labels: Vec<_> = (0..6).map(|i| label(i, (i + 2) as f64 / 10.0, &[i % 3], 1.0)).collect();
        let out = human_performance(&recs, &labels, &[], &HumanPerformanceConfig::default());
        let p = &out.participants[0];
        assert!(p.f1.iter().all(|&f| f == 1.0));
        assert_eq!(p.r2, [Some(1.0); 3]);
        assert_eq!(p.mse, [Some(0.0); 3]);
    }

    #[test]
    fn constant_mean_answer_gives_zero_r2() {
        let truth = [0.2, 0.4, 0.6, 0.8];
        let recs: Vec<_> = (0..4).map(|i| rec(i, "p", 5, &[])).collect();
        let labels: Vec<_> = (0..4).map(|i| label(i, truth[i], &[], 1.0)).collect();
        let out = human_performance(&recs, &labels, &[], &HumanPerformanceConfig::default());
        assert!(out.participants[0].r2[0].unwrap().abs() < 1e-12);
    }

    #[test]
    fn low_confidence_skipped_for_dimensions_and_sparse_participant_excluded() {
        let recs = vec![rec(0, "p", 5, &[]), rec(1, "p", 6, &[]), rec(2, "p", 7, &[]), rec(0, "q", 5, &[])];
        let labels = vec![label(0, 0.5, &[], 0.9), label(1, 0.6, &[], 0.99), label(2, 0.7, &[], 0.99)];
        let out = human_performance(&recs, &labels, &[], &HumanPerformanceConfig::default());
        assert_eq!(out.participants[0].n_instances, 3);
        assert_eq!(out.participants[0].n_dimensional, 2);
        assert_eq!(out.excluded.len(), 1);
        assert_eq!(out.excluded[0].0, "q");
    }

    #[test]
    fn leave_one_out_uses_others() {
        let mut recs = Vec::new();
        for i in 0..4 {
            recs.push(rec(i, "a", 8, &[0]));
            recs.push(rec(i, "b", 8, &[0]));
            recs.push(rec(i, "c", 2, &[1]));
        }
        let profiles: Vec<_> = ["a", "b", "c"].iter().map(|p| ParticipantProfile::new(*p, 1.0, 1.0, 1.0, 4)).collect();
        let cfg = HumanPerformanceConfig { confidence_min: 0.0, mode: HumanMode::LeaveOneOut };
        let out = human_performance(&recs, &[], &profiles, &cfg);
        let get = |p: &str| out.participants.iter().find(|x| x.participant_id == p).unwrap();
        assert_eq!(get("a").f1[0], 1.0);
        assert_eq!(get("c").f1[0], 0.0);
        assert!(get("a").mean_f1 > get("c").mean_f1);
    }
}
