//! Session engine. Every mutation is first written as an [`Event`] and then
//! applied through [`Service::apply`], so replaying a log rebuilds the same
//! state. Randomness is keyed by `(seed, session number)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use bodyaffect::annotations::ParticipantStatus;
use bodyaffect::quality::{
    build_qc_report, hit_outcome, participant_policy, sanity_check, ExponentialErrorScorer, HitAssignment,
    HitOutcome, QcConfig, QcReport, ReliabilityScorer, SanityViolation,
};
use bodyaffect::{AnnotationRecord, ParticipantProfile};

use crate::pool::{Pool, PoolItem};
use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Fewest assignments first, random among ties.
    LeastAnnotated,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceConfig {
    pub qc: QcConfig,
    pub sampling: Sampling,
    /// Annotations wanted per task instance; reported by the pool endpoint.
    pub target_per_instance: usize,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { qc: QcConfig::default(), sampling: Sampling::LeastAnnotated, target_per_instance: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        at: u64,
        session_id: String,
        participant_id: String,
        eq_passed: bool,
        instance_ids: Vec<String>,
        control_position: usize,
    },
    AnnotationSubmitted {
        at: u64,
        session_id: String,
        record: AnnotationRecord,
    },
    SessionCompleted {
        at: u64,
        session_id: String,
        outcome: HitOutcome,
        status: ParticipantStatus,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionState {
    Open,
    Completed(HitOutcome),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub instance_ids: Vec<String>,
    pub control_position: usize,
    pub records: Vec<AnnotationRecord>,
    /// Task instances with a sanity violation so far.
    pub violations: usize,
    pub state: SessionState,
}

impl Session {
    pub fn cursor(&self) -> usize {
        self.records.len()
    }

    pub fn is_open(&self) -> bool {
        self.state == SessionState::Open
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Participant {
    pub status: ParticipantStatus,
    pub eq_passed: bool,
    pub hits: usize,
    pub low_performance_hits: usize,
}

/// The item at the cursor. Tasks and the control look the same.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextItem {
    pub position: usize,
    pub total: usize,
    pub instance_id: String,
    pub media_url: String,
    pub frames: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub instance_id: String,
    pub assigned: usize,
    pub annotated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStatus {
    pub target_per_instance: usize,
    pub instances: Vec<PoolEntry>,
    pub at_target: usize,
    pub open_sessions: usize,
    pub completed_sessions: usize,
    pub active: usize,
    pub blocked: usize,
    pub excluded: usize,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct Service {
    pub config: ServiceConfig,
    pool: Pool,
    sessions: BTreeMap<String, Session>,
    participants: BTreeMap<String, Participant>,
    assigned: HashMap<String, usize>,
    seen: HashMap<String, HashSet<String>>,
    store: Vec<AnnotationRecord>,
    hits: Vec<HitAssignment>,
    events: Vec<Event>,
    log: Option<File>,
}

impl Service {
    pub fn new(config: ServiceConfig, pool: Pool) -> Service {
        Service {
            config,
            pool,
            sessions: BTreeMap::new(),
            participants: BTreeMap::new(),
            assigned: HashMap::new(),
            seen: HashMap::new(),
            store: Vec::new(),
            hits: Vec::new(),
            events: Vec::new(),
            log: None,
        }
    }

    /// Replays `events` without writing them anywhere.
    pub fn replay(config: ServiceConfig, pool: Pool, events: &[Event]) -> Result<Service, ServiceError> {
        let mut s = Service::new(config, pool);
        for e in events {
            s.apply(e.clone())?;
        }
        Ok(s)
    }

    /// Loads an existing JSON-lines log (if any), then appends to it.
    pub fn open_log(config: ServiceConfig, pool: Pool, path: &Path) -> Result<Service, ServiceError> {
        let mut events = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                events.push(
                    serde_json::from_str(&line).map_err(|e| ServiceError::Log(format!("line {}: {e}", i + 1)))?,
                );
            }
        }
        let mut s = Service::replay(config, pool, &events)?;
        s.log = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(s)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn participants(&self) -> &BTreeMap<String, Participant> {
        &self.participants
    }

    pub fn session(&self, id: &str) -> Result<&Session, ServiceError> {
        self.sessions.get(id).ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Completed-session records, in completion order.
    pub fn store(&self) -> &[AnnotationRecord] {
        &self.store
    }

    pub fn hit_assignments(&self) -> &[HitAssignment] {
        &self.hits
    }

    fn commit(&mut self, e: Event) -> Result<(), ServiceError> {
        if let Some(f) = self.log.as_mut() {
            let mut line = serde_json::to_string(&e).map_err(|e| ServiceError::Log(e.to_string()))?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.apply(e)
    }

    /// State transition for one event. Live calls and replay both land here.
    pub fn apply(&mut self, e: Event) -> Result<(), ServiceError> {
        match &e {
            Event::SessionCreated { session_id, participant_id, eq_passed, instance_ids, control_position, .. } => {
                if self.sessions.contains_key(session_id) {
                    return Err(ServiceError::Log(format!("session `{session_id}` created twice")));
                }
                let p = self.participants.entry(participant_id.clone()).or_default();
                p.eq_passed |= *eq_passed;
                let seen = self.seen.entry(participant_id.clone()).or_default();
                for (i, id) in instance_ids.iter().enumerate() {
                    seen.insert(id.clone());
                    if i != *control_position {
                        *self.assigned.entry(id.clone()).or_default() += 1;
                    }
                }
                self.sessions.insert(
                    session_id.clone(),
                    Session {
                        session_id: session_id.clone(),
                        participant_id: participant_id.clone(),
                        instance_ids: instance_ids.clone(),
                        control_position: *control_position,
                        records: Vec::new(),
                        violations: 0,
                        state: SessionState::Open,
                    },
                );
            }
            Event::AnnotationSubmitted { session_id, record, .. } => {
                let s = self.sessions.get_mut(session_id).ok_or_else(|| ServiceError::UnknownSession(session_id.clone()))?;
                if s.cursor() != s.control_position && !sanity_check(record).is_empty() {
                    s.violations += 1;
                }
                s.records.push(record.clone());
            }
            Event::SessionCompleted { session_id, outcome, status, .. } => {
                let s = self.sessions.get_mut(session_id).ok_or_else(|| ServiceError::UnknownSession(session_id.clone()))?;
                s.state = SessionState::Completed(outcome.clone());
                self.store.extend(s.records.iter().cloned());
                self.hits.push(HitAssignment {
                    hit_id: session_id.clone(),
                    participant_id: s.participant_id.clone(),
                    instance_ids: s.instance_ids.clone(),
                });
                let p = self.participants.entry(s.participant_id.clone()).or_default();
                p.status = *status;
                p.hits += 1;
                p.low_performance_hits += outcome.low_performance as usize;
            }
        }
        self.events.push(e);
        Ok(())
    }

    fn check_admission(&self, participant_id: &str, eq_passed: bool, now: u64) -> Result<(), ServiceError> {
        match self.participants.get(participant_id) {
            None if !eq_passed => Err(ServiceError::EqRequired(participant_id.into())),
            None => Ok(()),
            Some(p) => match p.status {
                ParticipantStatus::Excluded => Err(ServiceError::Excluded(participant_id.into())),
                ParticipantStatus::BlockedUntil { until } if until > now => {
                    Err(ServiceError::Blocked { participant_id: participant_id.into(), until, retry_after: until - now })
                }
                _ if !p.eq_passed && !eq_passed => Err(ServiceError::EqRequired(participant_id.into())),
                _ => Ok(()),
            },
        }
    }

    pub fn create_session(&mut self, participant_id: &str, eq_passed: bool, now: u64) -> Result<&Session, ServiceError> {
        if participant_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("empty participant_id".into()));
        }
        self.check_admission(participant_id, eq_passed, now)?;
        let number = self.sessions.len() as u64 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(splitmix(self.config.seed) ^ number));
        let seen = self.seen.get(participant_id);
        let mut candidates: Vec<(usize, u64, &PoolItem)> = self
            .pool
            .tasks
            .iter()
            .filter(|it| seen.is_none_or(|s| !s.contains(&it.instance_id)))
            .map(|it| {
                let load = match self.config.sampling {
                    Sampling::LeastAnnotated => self.assigned.get(&it.instance_id).copied().unwrap_or(0),
                    Sampling::Uniform => 0,
                };
                (load, rng.random::<u64>(), it)
            })
            .collect();
        let n = self.config.qc.hit_size;
        if candidates.len() < n {
            return Err(ServiceError::PoolExhausted { participant_id: participant_id.into(), available: candidates.len() });
        }
        candidates.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut instance_ids: Vec<String> = candidates[..n].iter().map(|c| c.2.instance_id.clone()).collect();
        let control = &self.pool.controls[rng.random_range(0..self.pool.controls.len())];
        let control_position = rng.random_range(0..=n);
        instance_ids.insert(control_position, control.instance_id.clone());

        let session_id = format!("s{number:06}");
        self.commit(Event::SessionCreated {
            at: now,
            session_id: session_id.clone(),
            participant_id: participant_id.into(),
            eq_passed,
            instance_ids,
            control_position,
        })?;
        Ok(&self.sessions[&session_id])
    }

    pub fn next_item(&self, session_id: &str) -> Result<Option<NextItem>, ServiceError> {
        let s = self.session(session_id)?;
        if !s.is_open() || s.cursor() == s.instance_ids.len() {
            return Ok(None);
        }
        let id = &s.instance_ids[s.cursor()];
        let item = self.pool.item(id).ok_or_else(|| ServiceError::Log(format!("instance `{id}` left the pool")))?;
        Ok(Some(NextItem {
            position: s.cursor(),
            total: s.instance_ids.len(),
            instance_id: id.clone(),
            media_url: item.media_url.clone(),
            frames: item.frames,
        }))
    }

    /// Stores the record for the cursor item and returns its sanity violations.
    pub fn submit(&mut self, session_id: &str, record: AnnotationRecord, now: u64) -> Result<Vec<SanityViolation>, ServiceError> {
        let s = self.session(session_id)?;
        if !s.is_open() {
            return Err(ServiceError::Closed(session_id.into()));
        }
        let Some(expected) = s.instance_ids.get(s.cursor()) else {
            return Err(ServiceError::OutOfOrder { expected: None, got: record.instance_id });
        };
        if *expected != record.instance_id {
            return Err(ServiceError::OutOfOrder { expected: Some(expected.clone()), got: record.instance_id });
        }
        if record.participant_id != s.participant_id {
            return Err(ServiceError::BadRequest(format!(
                "record participant `{}` does not own session `{session_id}`",
                record.participant_id
            )));
        }
        record.validate().map_err(ServiceError::BadRequest)?;
        let violations = sanity_check(&record);
        self.commit(Event::AnnotationSubmitted { at: now, session_id: session_id.into(), record })?;
        Ok(violations)
    }

    /// Scores the HIT and applies the participant policy. Reliability comes
    /// from everything stored so far plus this session; with a single
    /// annotator there is nothing to compare against and it stays at 1.
    pub fn complete(&mut self, session_id: &str, now: u64) -> Result<(HitOutcome, ParticipantStatus), ServiceError> {
        let s = self.session(session_id)?;
        if !s.is_open() {
            return Err(ServiceError::Closed(session_id.into()));
        }
        if s.cursor() < s.instance_ids.len() {
            return Err(ServiceError::Incomplete { missing: s.instance_ids[s.cursor()..].to_vec() });
        }
        let control = &s.records[s.control_position];
        let gold = self
            .pool
            .gold
            .get(&control.instance_id)
            .ok_or_else(|| ServiceError::Log(format!("control `{}` has no gold standard", control.instance_id)))?;
        let tasks: Vec<AnnotationRecord> =
            s.records.iter().enumerate().filter(|(i, _)| *i != s.control_position).map(|(_, r)| r.clone()).collect();
        let outcome = hit_outcome(session_id, &tasks, control, gold, &self.config.qc)?;

        let mut profile = self.profile_with(&s.records, &s.participant_id);
        profile.status = self.participants.get(&s.participant_id).map(|p| p.status).unwrap_or_default();
        let decision = participant_policy(&profile, Some(&outcome), &self.config.qc, now);
        let outcome = HitOutcome { work_rejected: decision.work_rejected, ..outcome };
        self.commit(Event::SessionCompleted {
            at: now,
            session_id: session_id.into(),
            outcome: outcome.clone(),
            status: decision.status,
        })?;
        Ok((outcome, decision.status))
    }

    fn profile_with(&self, pending: &[AnnotationRecord], participant_id: &str) -> ParticipantProfile {
        let mut all = self.store.clone();
        all.extend(pending.iter().cloned());
        let scored = ExponentialErrorScorer::default().score(&all).ok();
        scored
            .and_then(|r| r.profiles.into_iter().find(|p| p.participant_id == participant_id))
            .unwrap_or_else(|| {
                let n = all.iter().filter(|r| r.participant_id == participant_id && !r.corrupted).count();
                ParticipantProfile::new(participant_id, 1.0, 1.0, 1.0, n)
            })
    }

    pub fn qc_report(&self, now: u64) -> Result<QcReport, ServiceError> {
        Ok(build_qc_report(
            &self.store,
            &self.hits,
            &self.pool.gold,
            &ExponentialErrorScorer::default(),
            &self.config.qc,
            now,
        )?)
    }

    pub fn pool_status(&self, now: u64) -> PoolStatus {
        let mut annotated: HashMap<&str, usize> = HashMap::new();
        for r in &self.store {
            *annotated.entry(r.instance_id.as_str()).or_default() += 1;
        }
        let instances: Vec<PoolEntry> = self
            .pool
            .tasks
            .iter()
            .map(|it| PoolEntry {
                instance_id: it.instance_id.clone(),
                assigned: self.assigned.get(&it.instance_id).copied().unwrap_or(0),
                annotated: annotated.get(it.instance_id.as_str()).copied().unwrap_or(0),
            })
            .collect();
        let (mut active, mut blocked, mut excluded) = (0, 0, 0);
        for p in self.participants.values() {
            match p.status {
                ParticipantStatus::Excluded => excluded += 1,
                ParticipantStatus::BlockedUntil { until } if until > now => blocked += 1,
                _ => active += 1,
            }
        }
        let open = self.sessions.values().filter(|s| s.is_open()).count();
        PoolStatus {
            target_per_instance: self.config.target_per_instance,
            at_target: instances.iter().filter(|e| e.annotated >= self.config.target_per_instance).count(),
            instances,
            open_sessions: open,
            completed_sessions: self.sessions.len() - open,
            active,
            blocked,
            excluded,
        }
    }
}
