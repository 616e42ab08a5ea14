//! Quality control: sanity rules between categories and VAD scores, relaxed
//! gold-standard controls, reliability scoring and the participant policy.

mod reliability;
mod report;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{AnnotationRecord, Category, Dimension, ParticipantProfile, ParticipantStatus};

pub use reliability::{reliability_scores, ExponentialErrorScorer, ReliabilityReport, ReliabilityScorer};
pub use report::{
    build_qc_report, read_hit_assignments, write_hit_assignments, HitAssignment, ParticipantSummary, QcReport,
};

#[derive(Debug, Error)]
pub enum QcError {
    #[error("gold standard: {0}")]
    Gold(String),
    #[error("record for `{record}` checked against control `{control}`")]
    ControlMismatch { record: String, control: String },
    #[error("HIT `{hit_id}`: expected {expected} task records and 1 control, got {tasks} and {controls}")]
    HitArity { hit_id: String, expected: usize, tasks: usize, controls: usize },
    #[error("HIT `{hit_id}`: no annotation by `{participant_id}` for `{instance_id}`")]
    MissingRecord { hit_id: String, participant_id: String, instance_id: String },
    #[error("reliability scoring needs at least two annotators, found {0}")]
    TooFewAnnotators(usize),
    #[error("hit table row {row}: {message}")]
    HitRow { row: usize, message: String },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Thresholds and durations used by the QC rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcConfig {
    pub hit_size: usize,
    /// Violating instances per HIT that make it low-performance.
    pub violation_limit: usize,
    pub block_secs: u64,
    pub reliability_threshold: f64,
    /// Annotations needed before a low reliability score can exclude anyone.
    pub min_effective: usize,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            hit_size: 20,
            violation_limit: 2,
            block_secs: 3600,
            reliability_threshold: 1.0 / 3.0,
            min_effective: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SanityRule {
    /// Category implies valence at or above 6.
    ValenceAbove,
    /// Category implies valence at or below 5.
    ValenceBelow,
    /// Category implies arousal at or below 5.
    ArousalBelow,
    /// Category implies arousal at or above 6.
    ArousalAbove,
}

impl SanityRule {
    pub fn dimension(self) -> Dimension {
        match self {
            SanityRule::ValenceAbove | SanityRule::ValenceBelow => Dimension::Valence,
            SanityRule::ArousalAbove | SanityRule::ArousalBelow => Dimension::Arousal,
        }
    }

    fn violated_by(self, score: u8) -> bool {
        match self {
            SanityRule::ValenceAbove | SanityRule::ArousalAbove => score <= 5,
            SanityRule::ValenceBelow | SanityRule::ArousalBelow => score >= 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanityViolation {
    pub category: Category,
    pub rule: SanityRule,
    pub dimension: Dimension,
    pub score: u8,
    pub message: String,
}

impl fmt::Display for SanityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Category sets tied to a side of the VAD midpoint (5.5).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanityRuleTable {
    pub valence_above: Vec<Category>,
    pub valence_below: Vec<Category>,
    pub arousal_below: Vec<Category>,
    pub arousal_above: Vec<Category>,
}

impl Default for SanityRuleTable {
    fn default() -> Self {
        use Category::*;
        SanityRuleTable {
            valence_above: vec![Affection, Esteem, Happiness, Pleasure],
            valence_below: vec![
                Disapproval,
                Aversion,
                Annoyance,
                Anger,
                Sensitivity,
                Sadness,
                Disquietment,
                Fear,
                Pain,
                Suffering,
            ],
            arousal_below: vec![Peace],
            arousal_above: vec![Excitement],
        }
    }
}

impl SanityRuleTable {
    pub fn rules(&self) -> impl Iterator<Item = (Category, SanityRule)> + '_ {
        let tag = |v: &'_ [Category], r: SanityRule| v.iter().map(move |&c| (c, r)).collect::<Vec<_>>();
        tag(&self.valence_above, SanityRule::ValenceAbove)
            .into_iter()
            .chain(tag(&self.valence_below, SanityRule::ValenceBelow))
            .chain(tag(&self.arousal_below, SanityRule::ArousalBelow))
            .chain(tag(&self.arousal_above, SanityRule::ArousalAbove))
    }

    pub fn check(&self, record: &AnnotationRecord) -> Vec<SanityViolation> {
        let mut out = Vec::new();
        for (category, rule) in self.rules() {
            if !record.has(category) {
                continue;
            }
            let dimension = rule.dimension();
            let score = record.dimension(dimension);
            if rule.violated_by(score) {
                let side = match rule {
                    SanityRule::ValenceAbove | SanityRule::ArousalAbove => "at least 6",
                    SanityRule::ValenceBelow | SanityRule::ArousalBelow => "at most 5",
                };
                out.push(SanityViolation {
                    category,
                    rule,
                    dimension,
                    score,
                    message: format!("{category} selected with {dimension} {score}; expected {dimension} {side}"),
                });
            }
        }
        out
    }
}

/// Violations of the default rule table.
pub fn sanity_check(record: &AnnotationRecord) -> Vec<SanityViolation> {
    SanityRuleTable::default().check(record)
}

fn full_range() -> (u8, u8) {
    (1, 10)
}

/// A control instance with wide acceptable answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldStandard {
    pub instance_id: String,
    #[serde(default = "full_range")]
    pub valence: (u8, u8),
    #[serde(default = "full_range")]
    pub arousal: (u8, u8),
    #[serde(default = "full_range")]
    pub dominance: (u8, u8),
    #[serde(default)]
    pub required: Vec<Category>,
    #[serde(default)]
    pub forbidden: Vec<Category>,
}

impl GoldStandard {
    pub fn vacuous(instance_id: impl Into<String>) -> Self {
        GoldStandard {
            instance_id: instance_id.into(),
            valence: full_range(),
            arousal: full_range(),
            dominance: full_range(),
            required: Vec::new(),
            forbidden: Vec::new(),
        }
    }

    pub fn range(&self, d: Dimension) -> (u8, u8) {
        match d {
            Dimension::Valence => self.valence,
            Dimension::Arousal => self.arousal,
            Dimension::Dominance => self.dominance,
        }
    }

    fn validate(&self) -> Result<(), QcError> {
        for d in Dimension::ALL {
            let (lo, hi) = self.range(d);
            if lo > hi || lo < 1 || hi > 10 {
                return Err(QcError::Gold(format!("{}: {d} range ({lo}, {hi}) invalid", self.instance_id)));
            }
        }
        if let Some(c) = self.required.iter().find(|c| self.forbidden.contains(c)) {
            return Err(QcError::Gold(format!("{}: {c} both required and forbidden", self.instance_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reasons", rename_all = "snake_case")]
pub enum GoldVerdict {
    Pass,
    Fail(Vec<String>),
}

impl GoldVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, GoldVerdict::Pass)
    }
}

/// A corrupted flag on a control counts as a failure: controls are vetted clips.
pub fn gold_standard_check(record: &AnnotationRecord, gold: &GoldStandard) -> Result<GoldVerdict, QcError> {
    if record.instance_id != gold.instance_id {
        return Err(QcError::ControlMismatch { record: record.instance_id.clone(), control: gold.instance_id.clone() });
    }
    let mut reasons = Vec::new();
    if record.corrupted {
        reasons.push("control marked corrupted".to_string());
    } else {
        for d in Dimension::ALL {
            let (lo, hi) = gold.range(d);
            let v = record.dimension(d);
            if v < lo || v > hi {
                reasons.push(format!("{d} {v} outside [{lo}, {hi}]"));
            }
        }
        for c in &gold.required {
            if !record.has(*c) {
                reasons.push(format!("{c} required"));
            }
        }
        for c in &gold.forbidden {
            if record.has(*c) {
                reasons.push(format!("{c} forbidden"));
            }
        }
    }
    Ok(if reasons.is_empty() { GoldVerdict::Pass } else { GoldVerdict::Fail(reasons) })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoldSet {
    #[serde(default, rename = "control")]
    pub controls: Vec<GoldStandard>,
}

impl GoldSet {
    /// Parses TOML with one `[[control]]` table per control instance.
    pub fn parse(text: &str) -> Result<GoldSet, QcError> {
        let set: GoldSet = toml::from_str(text)?;
        let mut seen = HashSet::new();
        for g in &set.controls {
            g.validate()?;
            if !seen.insert(g.instance_id.as_str()) {
                return Err(QcError::Gold(format!("duplicate control `{}`", g.instance_id)));
            }
        }
        Ok(set)
    }

    pub fn get(&self, instance_id: &str) -> Option<&GoldStandard> {
        self.controls.iter().find(|g| g.instance_id == instance_id)
    }

    pub fn is_control(&self, instance_id: &str) -> bool {
        self.get(instance_id).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitOutcome {
    pub hit_id: String,
    pub participant_id: String,
    /// Task instances with at least one sanity violation.
    pub violations: usize,
    pub gold_failed: bool,
    pub low_performance: bool,
    /// Set by [`participant_policy`]; false until the policy runs.
    pub work_rejected: bool,
}

/// Scores one HIT: `tasks` must hold exactly `cfg.hit_size` records.
pub fn hit_outcome(
    hit_id: &str,
    tasks: &[AnnotationRecord],
    control: &AnnotationRecord,
    gold: &GoldStandard,
    cfg: &QcConfig,
) -> Result<HitOutcome, QcError> {
    if tasks.len() != cfg.hit_size {
        return Err(QcError::HitArity { hit_id: hit_id.into(), expected: cfg.hit_size, tasks: tasks.len(), controls: 1 });
    }
    let rules = SanityRuleTable::default();
    let violations = tasks.iter().filter(|r| !rules.check(r).is_empty()).count();
    let gold_failed = !gold_standard_check(control, gold)?.passed();
    Ok(HitOutcome {
        hit_id: hit_id.into(),
        participant_id: control.participant_id.clone(),
        violations,
        gold_failed,
        low_performance: violations >= cfg.violation_limit || gold_failed,
        work_rejected: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub status: ParticipantStatus,
    pub work_rejected: bool,
    pub reliability_fail: bool,
}

/// `r < threshold` with enough annotations to trust the estimate.
pub fn reliability_fail(profile: &ParticipantProfile, cfg: &QcConfig) -> bool {
    profile.r < cfg.reliability_threshold && profile.n_annotations >= cfg.min_effective
}

/// Status after a HIT. Exclusion is permanent; an expired block lifts.
pub fn participant_policy(
    profile: &ParticipantProfile,
    outcome: Option<&HitOutcome>,
    cfg: &QcConfig,
    now: u64,
) -> PolicyDecision {
    let rel_fail = reliability_fail(profile, cfg);
    let low = outcome.is_some_and(|o| o.low_performance);
    let status = if rel_fail || profile.status == ParticipantStatus::Excluded {
        ParticipantStatus::Excluded
    } else if low {
        ParticipantStatus::BlockedUntil { until: now + cfg.block_secs }
    } else {
        match profile.status {
            ParticipantStatus::BlockedUntil { until } if until > now => profile.status,
            _ => ParticipantStatus::Active,
        }
    };
    PolicyDecision { status, work_rejected: low && rel_fail, reliability_fail: rel_fail }
}
