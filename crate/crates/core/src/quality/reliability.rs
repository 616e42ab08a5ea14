use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::QcError;
use crate::annotations::{AnnotationRecord, Dimension, ParticipantProfile};
use crate::par;

/// Output of a reliability scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    /// One profile per participant, sorted by participant id.
    pub profiles: Vec<ParticipantProfile>,
    /// Largest reliability change per iteration, per dimension (V, A, D).
    pub deltas: [Vec<f64>; 3],
    pub converged: [bool; 3],
}

/// Per-participant reliability in `(0, 1]` for each VAD dimension.
pub trait ReliabilityScorer: Sync {
    /// `scores[i]` lists `(worker, score 1..=10)` for instance `i`; returns
    /// one reliability per worker and the per-iteration max change.
    fn score_dimension(&self, n_workers: usize, scores: &[Vec<(usize, u8)>]) -> (Vec<f64>, Vec<f64>, bool);

    fn score(&self, records: &[AnnotationRecord]) -> Result<ReliabilityReport, QcError> {
        let mut workers: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in records {
            workers.entry(r.participant_id.as_str()).or_insert((0, 0));
        }
        if workers.len() < 2 {
            return Err(QcError::TooFewAnnotators(workers.len()));
        }
        for (i, v) in workers.values_mut().enumerate() {
            v.0 = i;
        }
        let mut by_instance: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
        for r in records.iter().filter(|r| !r.corrupted) {
            by_instance.entry(r.instance_id.as_str()).or_default().push(r);
            workers.get_mut(r.participant_id.as_str()).expect("indexed above").1 += 1;
        }
        let per_dim = par::map(&Dimension::ALL, |&d| {
            let scores: Vec<Vec<(usize, u8)>> = by_instance
                .values()
                .map(|recs| recs.iter().map(|r| (workers[r.participant_id.as_str()].0, r.dimension(d))).collect())
                .collect();
            self.score_dimension(workers.len(), &scores)
        });
        let profiles = workers
            .iter()
            .map(|(&pid, &(w, n))| ParticipantProfile::new(pid, per_dim[0].0[w], per_dim[1].0[w], per_dim[2].0[w], n))
            .collect();
        let mut it = per_dim.into_iter();
        let mut next = || it.next().expect("three dimensions");
        let (v, a, d) = (next(), next(), next());
        Ok(ReliabilityReport { profiles, deltas: [v.1, a.1, d.1], converged: [v.2, a.2, d.2] })
    }
}

/// Iterates consensus and per-worker error: the consensus is the
/// reliability-weighted mean score, `e_w` is the worker's mean squared
/// deviation (on the 0-1 scale) from it, and `r_w = exp(−e_w / λ)` with
/// `λ = 2 · mean_w e_w` floored at `lambda_floor`. Starts from `r = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialErrorScorer {
    pub max_iters: usize,
    pub tol: f64,
    pub lambda_floor: f64,
}

impl Default for ExponentialErrorScorer {
    fn default() -> Self {
        ExponentialErrorScorer { max_iters: 50, tol: 1e-6, lambda_floor: 1e-6 }
    }
}

impl ReliabilityScorer for ExponentialErrorScorer {
    fn score_dimension(&self, n_workers: usize, scores: &[Vec<(usize, u8)>]) -> (Vec<f64>, Vec<f64>, bool) {
        let mut r = vec![1.0; n_workers];
        let mut deltas = Vec::new();
        let mut err = vec![0.0; n_workers];
        let mut cnt = vec![0usize; n_workers];
        let mut converged = false;
        for _ in 0..self.max_iters {
            err.iter_mut().for_each(|e| *e = 0.0);
            cnt.iter_mut().for_each(|c| *c = 0);
            for inst in scores {
                let (num, den) = inst
                    .iter()
                    .fold((0.0, 0.0), |(n, d), &(w, s)| (n + r[w] * s as f64, d + r[w]));
                if den <= 0.0 {
                    continue;
                }
                let consensus = num / (10.0 * den);
                for &(w, s) in inst {
                    let dev = s as f64 / 10.0 - consensus;
                    err[w] += dev * dev;
                    cnt[w] += 1;
                }
            }
            let active: Vec<usize> = (0..n_workers).filter(|&w| cnt[w] > 0).collect();
            for &w in &active {
                err[w] /= cnt[w] as f64;
            }
            let mean_err = if active.is_empty() {
                0.0
            } else {
                active.iter().map(|&w| err[w]).sum::<f64>() / active.len() as f64
            };
            let lambda = (2.0 * mean_err).max(self.lambda_floor);
            let mut delta: f64 = 0.0;
            for &w in &active {
                let new = (-err[w] / lambda).exp().max(f64::MIN_POSITIVE);
                delta = delta.max((new - r[w]).abs());
                r[w] = new;
            }
            deltas.push(delta);
            if delta < self.tol {
                converged = true;
                break;
            }
        }
        (r, deltas, converged)
    }
}

/// Reliability profiles from the default scorer.
pub fn reliability_scores(records: &[AnnotationRecord]) -> Result<ReliabilityReport, QcError> {
    ExponentialErrorScorer::default().score(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{AgeGroup, Ethnicity, Gender, NUM_CATEGORIES};

    fn rec(instance: usize, participant: &str, v: u8, a: u8, d: u8) -> AnnotationRecord {
        AnnotationRecord {
            instance_id: format!("i{instance}"),
            participant_id: participant.into(),
            corrupted: false,
            categories: [false; NUM_CATEGORIES],
            valence: v,
            arousal: a,
            dominance: d,
            char_gender: Gender::Male,
            char_age: AgeGroup::Adult,
            char_ethnicity: Ethnicity::White,
            start_frame: 0,
            end_frame: 1,
        }
    }

    #[test]
    fn identical_workers_are_fully_reliable() {
        let mut recs = Vec::new();
        for i in 0..10 {
            for p in ["a", "b", "c"] {
                recs.push(rec(i, p, (i % 10 + 1) as u8, 5, 7));
            }
        }
        let rep = reliability_scores(&recs).unwrap();
        for p in &rep.profiles {
            assert_eq!((p.r_v, p.r_a, p.r_d, p.r), (1.0, 1.0, 1.0, 1.0));
            assert_eq!(p.n_annotations, 10);
        }
        assert!(rep.converged.iter().all(|&c| c));
    }

    #[test]
    fn symmetric_disagreement_gives_equal_scores() {
        let recs: Vec<_> = (0..8).flat_map(|i| [rec(i, "a", 3, 4, 5), rec(i, "b", 7, 6, 5)]).collect();
        let rep = reliability_scores(&recs).unwrap();
        let (a, b) = (&rep.profiles[0], &rep.profiles[1]);
        // equal up to rounding of s/10
        assert!((a.r_v - b.r_v).abs() < 1e-12);
        assert!((a.r_a - b.r_a).abs() < 1e-12);
        assert!(a.r_v > 0.0 && a.r_v <= 1.0);
    }

    #[test]
    fn outlier_scores_lowest() {
        let mut recs = Vec::new();
        for i in 0..30 {
            let base = (i % 8 + 2) as u8;
            for p in ["a", "b", "c", "d"] {
                recs.push(rec(i, p, base, base, base));
            }
            let off = if base > 5 { 1 } else { 10 };
            recs.push(rec(i, "z", off, off, off));
        }
        let rep = reliability_scores(&recs).unwrap();
        let z = rep.profiles.iter().find(|p| p.participant_id == "z").unwrap();
        for p in rep.profiles.iter().filter(|p| p.participant_id != "z") {
            assert!(p.r > z.r);
            assert!(p.r > 0.0 && p.r <= 1.0);
        }
    }

    #[test]
    fn needs_two_annotators() {
        assert!(matches!(reliability_scores(&[rec(0, "a", 1, 1, 1)]), Err(QcError::TooFewAnnotators(1))));
    }

    #[test]
    fn corrupted_only_participant_keeps_prior() {
        let mut recs: Vec<_> = (0..4).flat_map(|i| [rec(i, "a", 3, 4, 5), rec(i, "b", 4, 4, 5)]).collect();
        recs.push(AnnotationRecord { corrupted: true, ..rec(0, "c", 10, 10, 10) });
        let rep = reliability_scores(&recs).unwrap();
        let c = rep.profiles.iter().find(|p| p.participant_id == "c").unwrap();
        assert_eq!(c.n_annotations, 0);
        assert_eq!(c.r, 1.0);
    }
}
