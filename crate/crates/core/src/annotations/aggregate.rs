use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dawid_skene::{dawid_skene, DsConfig, DsObservation, DsResult};
use super::{
    AgeGroup, AnnotationError, AnnotationRecord, CategoricalLabel, Dimension, Ethnicity, Gender,
    LabelRow, ParticipantProfile, NUM_CATEGORIES,
};
use crate::par;

/// Reliability-weighted mean of 1-10 scores, scaled to [0, 1]:
/// `Σ r_i s_i / (10 Σ r_i)`.
pub fn aggregate_dimensional(scores: &[(u8, f64)]) -> Result<f64, AnnotationError> {
    let (num, den) = scores
        .iter()
        .fold((0.0, 0.0), |(n, d), &(s, r)| (n + r * s as f64, d + r));
    if den <= 0.0 {
        return Err(AnnotationError::UndefinedConsensus);
    }
    Ok(num / (10.0 * den))
}

/// `1 − Π (1 − r_i)`.
pub fn instance_confidence(reliabilities: &[f64]) -> f64 {
    1.0 - reliabilities.iter().map(|r| 1.0 - r).product::<f64>()
}

/// `(2 r_v + r_a) / 3`; dominance reliability is carried for reporting only.
pub fn ensemble_reliability(r_v: f64, r_a: f64, _r_d: f64) -> f64 {
    (2.0 * r_v + r_a) / 3.0
}

/// Interval of the most reliable annotator; ties go to the lexicographically
/// smallest participant id.
pub fn aggregate_interval(records: &[&AnnotationRecord], reliability: impl Fn(&str) -> f64) -> Option<(u32, u32)> {
    records
        .iter()
        .map(|r| (reliability(&r.participant_id), r))
        .reduce(|best, cur| {
            if cur.0 > best.0 || (cur.0 == best.0 && cur.1.participant_id < best.1.participant_id) {
                cur
            } else {
                best
            }
        })
        .map(|(_, r)| (r.start_frame, r.end_frame))
}

/// Movie of an instance: the mapping entry if present, otherwise the prefix
/// of the instance id before the first `/` (the whole id when there is none).
pub fn movie_of(movies: &HashMap<String, String>, instance_id: &str) -> String {
    movies
        .get(instance_id)
        .cloned()
        .unwrap_or_else(|| instance_id.split('/').next().unwrap_or(instance_id).to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub instance_id: String,
    pub movie_id: String,
    /// Dawid-Skene positive-class posterior per category.
    pub ds_scores: [f64; NUM_CATEGORIES],
    /// `ds_scores >= 0.5`.
    pub binary_labels: [bool; NUM_CATEGORIES],
    /// Valence, arousal, dominance in [0, 1].
    pub vad: [f64; 3],
    pub confidence: f64,
    pub interval: (u32, u32),
    pub gender: Gender,
    pub age: AgeGroup,
    pub ethnicity: Ethnicity,
    pub n_annotations: usize,
}

impl AggregatedLabel {
    pub fn to_row(&self, split: Option<Split>) -> LabelRow {
        LabelRow {
            instance_id: self.instance_id.clone(),
            ds_scores: self.ds_scores,
            labels: self.binary_labels,
            vad: self.vad,
            confidence: self.confidence,
            split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregationOutput {
    pub labels: Vec<AggregatedLabel>,
    /// Instances without a consensus, with the reason.
    pub skipped: Vec<(String, String)>,
}

struct Indexed<'a> {
    instances: Vec<&'a str>,
    by_instance: Vec<Vec<&'a AnnotationRecord>>,
    workers: BTreeMap<&'a str, usize>,
}

fn index_records(records: &[AnnotationRecord]) -> Indexed<'_> {
    let mut inst: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    let mut workers = BTreeMap::new();
    for r in records.iter().filter(|r| !r.corrupted) {
        inst.entry(r.instance_id.as_str()).or_default().push(r);
        workers.entry(r.participant_id.as_str()).or_insert(0);
    }
    for (i, v) in workers.values_mut().enumerate() {
        *v = i;
    }
    let (instances, by_instance) = inst.into_iter().unzip();
    Indexed { instances, by_instance, workers }
}

fn run_ds(ix: &Indexed<'_>, k: usize, label: impl Fn(&AnnotationRecord) -> usize, cfg: &DsConfig) -> Result<DsResult, AnnotationError> {
    let obs: Vec<DsObservation> = ix
        .by_instance
        .iter()
        .enumerate()
        .flat_map(|(item, recs)| {
            recs.iter()
                .map(|r| DsObservation { item, worker: ix.workers[r.participant_id.as_str()], label: label(r) })
                .collect::<Vec<_>>()
        })
        .collect();
    dawid_skene(ix.instances.len(), ix.workers.len(), k, &obs, cfg)
}

fn demographic<T: CategoricalLabel>(
    ix: &Indexed<'_>,
    get: impl Fn(&AnnotationRecord) -> T,
    cfg: &DsConfig,
) -> Result<Vec<T>, AnnotationError> {
    let r = run_ds(ix, T::classes(), |rec| get(rec).index(), cfg)?;
    Ok((0..ix.instances.len()).map(|i| T::from_index(r.argmax(i))).collect())
}

/// Consensus labels for every instance with at least one non-corrupted
/// annotation. Categories and character demographics go through
/// Dawid-Skene (categories in parallel); VAD is reliability-weighted.
/// Participants without a profile count with reliability 0.
pub fn aggregate_labels(
    records: &[AnnotationRecord],
    profiles: &[ParticipantProfile],
    movies: &HashMap<String, String>,
    ds: &DsConfig,
) -> Result<AggregationOutput, AnnotationError> {
    let ix = index_records(records);
    let mut out = AggregationOutput::default();
    let mut all_ids: Vec<&str> = records.iter().map(|r| r.instance_id.as_str()).collect();
    all_ids.sort_unstable();
    all_ids.dedup();
    for id in all_ids {
        if ix.instances.binary_search(&id).is_err() {
            out.skipped.push((id.to_string(), "all annotations marked corrupted".into()));
        }
    }
    if ix.instances.is_empty() {
        return Ok(out);
    }

    let per_category = par::map_range(NUM_CATEGORIES, |c| run_ds(&ix, 2, |r| r.categories[c] as usize, ds));
    let mut scores = vec![[0.0; NUM_CATEGORIES]; ix.instances.len()];
    for (c, res) in per_category.into_iter().enumerate() {
        let res = res?;
        for (i, s) in scores.iter_mut().enumerate() {
            s[c] = res.posteriors[i][1];
        }
    }
    let genders = demographic(&ix, |r| r.char_gender, ds)?;
    let ages = demographic(&ix, |r| r.char_age, ds)?;
    let ethnicities = demographic(&ix, |r| r.char_ethnicity, ds)?;

    let rel: HashMap<&str, f64> = profiles.iter().map(|p| (p.participant_id.as_str(), p.r)).collect();
    let reliability = |pid: &str| rel.get(pid).copied().unwrap_or(0.0);

    for (i, (&id, recs)) in ix.instances.iter().zip(&ix.by_instance).enumerate() {
        let rs: Vec<f64> = recs.iter().map(|r| reliability(&r.participant_id)).collect();
        let mut vad = [0.0; 3];
        let mut undefined = false;
        for d in Dimension::ALL {
            let pairs: Vec<(u8, f64)> = recs.iter().zip(&rs).map(|(r, &w)| (r.dimension(d), w)).collect();
            match aggregate_dimensional(&pairs) {
                Ok(v) => vad[d.index()] = v,
                Err(_) => undefined = true,
            }
        }
        if undefined {
            out.skipped.push((id.to_string(), "no annotator with positive reliability".into()));
            continue;
        }
        let ds_scores = scores[i];
        out.labels.push(AggregatedLabel {
            instance_id: id.to_string(),
            movie_id: movie_of(movies, id),
            ds_scores,
            binary_labels: ds_scores.map(|s| s >= 0.5),
            vad,
            confidence: instance_confidence(&rs),
            interval: aggregate_interval(recs, reliability).unwrap_or((0, 0)),
            gender: genders[i],
            age: ages[i],
            ethnicity: ethnicities[i],
            n_annotations: recs.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub confidence_min: f64,
    /// Train / validation / test proportions (normalized internally).
    pub split: [f64; 3],
    pub seed: u64,
    pub ds: DsConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { confidence_min: 0.95, split: [0.7, 0.1, 0.2], seed: 0, ds: DsConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<AggregatedLabel>,
    pub val: Vec<AggregatedLabel>,
    pub test: Vec<AggregatedLabel>,
    pub excluded: Vec<(String, String)>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[AggregatedLabel] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Label-table rows, train then val then test.
    pub fn rows(&self) -> Vec<LabelRow> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .flat_map(|s| self.split(s).iter().map(move |l| l.to_row(Some(s))))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Drops low-confidence instances, then assigns whole movies to splits: movies
/// are shuffled with `seed` and filled into train, then val, then test until
/// each split's share of instances is reached.
pub fn build_dataset(
    records: &[AnnotationRecord],
    profiles: &[ParticipantProfile],
    movies: &HashMap<String, String>,
    cfg: &DatasetConfig,
) -> Result<Dataset, AnnotationError> {
    let agg = aggregate_labels(records, profiles, movies, &cfg.ds)?;
    let mut ds = Dataset { excluded: agg.skipped, ..Default::default() };
    let mut kept = Vec::new();
    for l in agg.labels {
        if l.confidence < cfg.confidence_min {
            ds.excluded.push((l.instance_id.clone(), format!("confidence {:.4} below {}", l.confidence, cfg.confidence_min)));
        } else {
            kept.push(l);
        }
    }

    let mut per_movie: BTreeMap<String, usize> = BTreeMap::new();
    for l in &kept {
        *per_movie.entry(l.movie_id.clone()).or_default() += 1;
    }
    let mut order: Vec<String> = per_movie.keys().cloned().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let total_ratio: f64 = cfg.split.iter().sum();
    let n = kept.len() as f64;
    let train_cut = n * cfg.split[0] / total_ratio;
    let val_cut = n * (cfg.split[0] + cfg.split[1]) / total_ratio;
    let mut assignment = HashMap::new();
    let mut cum = 0usize;
    for m in order {
        let before = cum as f64;
        let split = if before < train_cut {
            Split::Train
        } else if before < val_cut {
            Split::Val
        } else {
            Split::Test
        };
        cum += per_movie[&m];
        assignment.insert(m, split);
    }
    for l in kept {
        match assignment[&l.movie_id] {
            Split::Train => ds.train.push(l),
            Split::Val => ds.val.push(l),
            Split::Test => ds.test.push(l),
        }
    }
    Ok(ds)
}
