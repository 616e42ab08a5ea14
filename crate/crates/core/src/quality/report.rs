use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{hit_outcome, participant_policy, GoldSet, HitOutcome, QcConfig, QcError, ReliabilityScorer};
use crate::annotations::{AnnotationRecord, ParticipantProfile, ParticipantStatus};

/// The instances one participant saw in one HIT (tasks and control).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitAssignment {
    pub hit_id: String,
    pub participant_id: String,
    pub instance_ids: Vec<String>,
}

/// Reads `hit_id,participant_id,instance_id` rows; rows of one HIT are
/// grouped in order of first appearance.
pub fn read_hit_assignments<R: Read>(r: R) -> Result<Vec<HitAssignment>, QcError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != ["hit_id", "participant_id", "instance_id"] {
        return Err(QcError::HitRow { row: 0, message: "header must be hit_id,participant_id,instance_id".into() });
    }
    let mut out: Vec<HitAssignment> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().map(str::trim).collect();
        let (hit, pid, inst) = (f[0], f[1], f[2]);
        if hit.is_empty() || pid.is_empty() || inst.is_empty() {
            return Err(QcError::HitRow { row: i + 1, message: "empty field".into() });
        }
        match index.get(hit) {
            Some(&k) => {
                if out[k].participant_id != pid {
                    return Err(QcError::HitRow { row: i + 1, message: format!("HIT `{hit}` has two participants") });
                }
                out[k].instance_ids.push(inst.to_string());
            }
            None => {
                index.insert(hit.to_string(), out.len());
                out.push(HitAssignment {
                    hit_id: hit.to_string(),
                    participant_id: pid.to_string(),
                    instance_ids: vec![inst.to_string()],
                });
            }
        }
    }
    Ok(out)
}

pub fn write_hit_assignments<W: Write>(w: W, hits: &[HitAssignment]) -> Result<(), QcError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["hit_id", "participant_id", "instance_id"])?;
    for h in hits {
        for inst in &h.instance_ids {
            out.write_record([&h.hit_id, &h.participant_id, inst])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSummary {
    #[serde(flatten)]
    pub profile: ParticipantProfile,
    pub reliability_fail: bool,
    pub hits: usize,
    pub low_performance_hits: usize,
    pub rejected_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub format: String,
    pub version: u32,
    pub evaluated_at: u64,
    pub config: QcConfig,
    pub participants: Vec<ParticipantSummary>,
    pub hits: Vec<HitOutcome>,
    pub active: usize,
    pub blocked: usize,
    pub excluded: usize,
}

/// Scores reliability, replays HIT outcomes in order through the participant
/// policy (blocks and exclusions accumulate), then applies the reliability
/// rule to everyone. A HIT must contain exactly one control instance.
pub fn build_qc_report(
    records: &[AnnotationRecord],
    hits: &[HitAssignment],
    gold: &GoldSet,
    scorer: &dyn ReliabilityScorer,
    cfg: &QcConfig,
    now: u64,
) -> Result<QcReport, QcError> {
    let rel = scorer.score(records)?;
    let mut summaries: Vec<ParticipantSummary> = rel
        .profiles
        .into_iter()
        .map(|profile| ParticipantSummary { profile, reliability_fail: false, hits: 0, low_performance_hits: 0, rejected_hits: 0 })
        .collect();
    let pos: HashMap<String, usize> =
        summaries.iter().enumerate().map(|(i, s)| (s.profile.participant_id.clone(), i)).collect();
    let lookup: HashMap<(&str, &str), &AnnotationRecord> =
        records.iter().map(|r| ((r.participant_id.as_str(), r.instance_id.as_str()), r)).collect();

    let mut outcomes = Vec::with_capacity(hits.len());
    for h in hits {
        let mut tasks = Vec::new();
        let mut controls = Vec::new();
        for inst in &h.instance_ids {
            let r = lookup.get(&(h.participant_id.as_str(), inst.as_str())).ok_or_else(|| QcError::MissingRecord {
                hit_id: h.hit_id.clone(),
                participant_id: h.participant_id.clone(),
                instance_id: inst.clone(),
            })?;
            match gold.get(inst) {
                Some(g) => controls.push(((*r).clone(), g)),
                None => tasks.push((*r).clone()),
            }
        }
        if controls.len() != 1 || tasks.len() != cfg.hit_size {
            return Err(QcError::HitArity {
                hit_id: h.hit_id.clone(),
                expected: cfg.hit_size,
                tasks: tasks.len(),
                controls: controls.len(),
            });
        }
        let (control, g) = &controls[0];
        let mut outcome = hit_outcome(&h.hit_id, &tasks, control, g, cfg)?;
        let s = &mut summaries[pos[&h.participant_id]];
        let decision = participant_policy(&s.profile, Some(&outcome), cfg, now);
        outcome.work_rejected = decision.work_rejected;
        s.profile.status = decision.status;
        s.hits += 1;
        s.low_performance_hits += outcome.low_performance as usize;
        s.rejected_hits += outcome.work_rejected as usize;
        outcomes.push(outcome);
    }
    for s in &mut summaries {
        let d = participant_policy(&s.profile, None, cfg, now);
        s.profile.status = d.status;
        s.reliability_fail = d.reliability_fail;
    }
    let count = |f: fn(&ParticipantStatus) -> bool| summaries.iter().filter(|s| f(&s.profile.status)).count();
    Ok(QcReport {
        format: "bodyaffect-qc-report".into(),
        version: 1,
        evaluated_at: now,
        config: *cfg,
        active: count(|s| matches!(s, ParticipantStatus::Active)),
        blocked: count(|s| matches!(s, ParticipantStatus::BlockedUntil { .. })),
        excluded: count(|s| matches!(s, ParticipantStatus::Excluded)),
        participants: summaries,
        hits: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{AgeGroup, Category, Ethnicity, Gender, NUM_CATEGORIES};
    use crate::quality::{ExponentialErrorScorer, GoldStandard};

    fn rec(instance: &str, participant: &str, v: u8, happy: bool) -> AnnotationRecord {
        let mut categories = [false; NUM_CATEGORIES];
        categories[Category::Happiness.index()] = happy;
        AnnotationRecord {
            instance_id: instance.into(),
            participant_id: participant.into(),
            corrupted: false,
            categories,
            valence: v,
            arousal: 5,
            dominance: 5,
            char_gender: Gender::Female,
            char_age: AgeGroup::Adult,
            char_ethnicity: Ethnicity::Other,
            start_frame: 0,
            end_frame: 5,
        }
    }

    #[test]
    fn hit_table_round_trip() {
        let hits = vec![
            HitAssignment { hit_id: "h1".into(), participant_id: "a".into(), instance_ids: vec!["x".into(), "y".into()] },
            HitAssignment { hit_id: "h2".into(), participant_id: "b".into(), instance_ids: vec!["z".into()] },
        ];
        let mut buf = Vec::new();
        write_hit_assignments(&mut buf, &hits).unwrap();
        assert_eq!(read_hit_assignments(buf.as_slice()).unwrap(), hits);
    }

    #[test]
    fn report_blocks_low_performer() {
        let mut recs = Vec::new();
        let mut hits = Vec::new();
        for (p, bad) in [("good", 0), ("sloppy", 2)] {
            let mut ids = Vec::new();
            for i in 0..20 {
                let id = format!("t{i}");
                // happiness with low valence violates the sanity rules
                let v = if i < bad { 3 } else { 8 };
                recs.push(rec(&id, p, v, true));
                ids.push(id);
            }
            recs.push(rec("ctrl", p, 4, false));
            ids.insert(7, "ctrl".into());
            hits.push(HitAssignment { hit_id: format!("h-{p}"), participant_id: p.into(), instance_ids: ids });
        }
        let gold = GoldSet { controls: vec![GoldStandard { valence: (1, 6), ..GoldStandard::vacuous("ctrl") }] };
        let rep =
            build_qc_report(&recs, &hits, &gold, &ExponentialErrorScorer::default(), &QcConfig::default(), 10).unwrap();
        assert_eq!(rep.hits.len(), 2);
        assert!(!rep.hits[0].low_performance);
        assert!(rep.hits[1].low_performance);
        let sloppy = rep.participants.iter().find(|s| s.profile.participant_id == "sloppy").unwrap();
        assert_eq!(sloppy.profile.status, ParticipantStatus::BlockedUntil { until: 3610 });
        assert_eq!((rep.active, rep.blocked, rep.excluded), (1, 1, 0));
        let js = serde_json::to_value(&rep).unwrap();
        assert!(js["participants"][0]["r"].is_number());
    }

    #[test]
    fn missing_record_is_error() {
        let recs = vec![rec("a", "p", 5, false), rec("a", "q", 5, false)];
        let hits = vec![HitAssignment { hit_id: "h".into(), participant_id: "p".into(), instance_ids: vec!["b".into()] }];
        let err = build_qc_report(&recs, &hits, &GoldSet::default(), &ExponentialErrorScorer::default(), &QcConfig::default(), 0);
        assert!(matches!(err, Err(QcError::MissingRecord { .. })));
    }
}
