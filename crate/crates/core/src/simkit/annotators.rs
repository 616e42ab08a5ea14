use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{cell_rng, SimError};
use crate::annotations::{
    AgeGroup, AnnotationRecord, CategoricalLabel, DsObservation, Ethnicity, Gender, LabelRow, Split, NUM_CATEGORIES,
};
use crate::metrics::PredictionRow;

pub const HONEST_FLIP: f64 = 0.1;
pub const DISHONEST_FLIP: f64 = 0.5;
pub const EXOTIC_FLIP: f64 = 0.1;
/// Chance that an exotic worker reports a true category as its partner
/// under [`exotic_partner`].
pub const EXOTIC_PERMUTE: f64 = 0.25;
/// Mean per-category positive rate of the default planted truth.
pub const MEAN_POSITIVE_RATE: f64 = 0.1055;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    /// Truth plus rounded Gaussian noise.
    Honest { sigma: f64 },
    /// Uniform answers.
    Dishonest,
    /// Truth shifted by a constant offset on every dimension.
    Exotic { delta: i8 },
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Honest { .. } => "honest",
            Role::Dishonest => "dishonest",
            Role::Exotic { .. } => "exotic",
        }
    }

    fn default_flip(&self) -> f64 {
        match self {
            Role::Honest { .. } => HONEST_FLIP,
            Role::Dishonest => DISHONEST_FLIP,
            Role::Exotic { .. } => EXOTIC_FLIP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSpec {
    #[serde(flatten)]
    pub role: Role,
    pub count: usize,
    /// Per-category flip probability; the role default when absent.
    #[serde(default)]
    pub flip_prob: Option<f64>,
}

impl AnnotatorSpec {
    pub fn new(role: Role, count: usize) -> Self {
        AnnotatorSpec { role, count, flip_prob: None }
    }

    pub fn flip(&self) -> f64 {
        self.flip_prob.unwrap_or_else(|| self.role.default_flip())
    }

    fn check(&self) -> Result<(), SimError> {
        match self.role {
            Role::Honest { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return Err(SimError::Spec(format!("sigma must be finite and >= 0, got {sigma}")));
            }
            Role::Exotic { delta } if !(-9..=9).contains(&delta) => {
                return Err(SimError::Spec(format!("delta {delta} outside -9..=9")));
            }
            _ => {}
        }
        match self.flip_prob {
            Some(p) if !(0.0..=1.0).contains(&p) => Err(SimError::Spec(format!("flip probability {p} outside [0, 1]"))),
            _ => Ok(()),
        }
    }
}

/// The category an exotic worker may confuse `c` with: neighbours in the
/// canonical order are swapped in pairs (0↔1, 2↔3, ...).
pub fn exotic_partner(c: usize) -> usize {
    c ^ 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedInstance {
    pub instance_id: String,
    pub movie_id: String,
    pub categories: [bool; NUM_CATEGORIES],
    /// Valence, arousal, dominance on the 1..=10 scale.
    pub vad: [u8; 3],
    pub gender: Gender,
    pub age: AgeGroup,
    pub ethnicity: Ethnicity,
    pub interval: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    pub n_instances: usize,
    pub n_movies: usize,
    pub positive_rates: [f64; NUM_CATEGORIES],
    /// Clip length in frames; planted intervals lie inside `0..frames`.
    pub frames: u32,
    pub seed: u64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            n_instances: 200,
            n_movies: 20,
            positive_rates: default_positive_rates(),
            frames: 300,
            seed: 0,
        }
    }
}

/// Rates spread linearly from 0.02 to 0.191 with mean [`MEAN_POSITIVE_RATE`].
pub fn default_positive_rates() -> [f64; NUM_CATEGORIES] {
    let mut r = [0.0; NUM_CATEGORIES];
    let half = MEAN_POSITIVE_RATE - 0.02;
    for (c, slot) in r.iter_mut().enumerate() {
        *slot = MEAN_POSITIVE_RATE + half * (2.0 * c as f64 / (NUM_CATEGORIES - 1) as f64 - 1.0);
    }
    r
}

fn uniform_label<L: CategoricalLabel>(rng: &mut impl Rng) -> L {
    L::from_index(rng.random_range(0..L::NAMES.len()))
}

pub fn planted_truth(cfg: &TruthConfig) -> Vec<PlantedInstance> {
    let movies = cfg.n_movies.max(1);
    let frames = cfg.frames.max(2);
    (0..cfg.n_instances)
        .map(|i| {
            let mut rng = cell_rng(cfg.seed, 0x7275_7468, i as u64);
            let mut categories = [false; NUM_CATEGORIES];
            for (c, slot) in categories.iter_mut().enumerate() {
                *slot = rng.random::<f64>() < cfg.positive_rates[c];
            }
            let vad = [rng.random_range(1..=10), rng.random_range(1..=10), rng.random_range(1..=10)];
            let a = rng.random_range(0..frames - 1);
            let b = rng.random_range(a + 1..frames);
            PlantedInstance {
                instance_id: format!("sim{:03}/inst{i:05}", i % movies),
                movie_id: format!("sim{:03}", i % movies),
                categories,
                vad,
                gender: uniform_label(&mut rng),
                age: uniform_label(&mut rng),
                ethnicity: uniform_label(&mut rng),
                interval: (a, b),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorker {
    pub participant_id: String,
    #[serde(flatten)]
    pub spec: AnnotatorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPopulation {
    pub workers: Vec<SimWorker>,
    pub records: Vec<AnnotationRecord>,
}

fn clip_score(v: f64) -> u8 {
    v.round().clamp(1.0, 10.0) as u8
}

fn annotate(w: &SimWorker, t: &PlantedInstance, frames: u32, rng: &mut ChaCha8Rng) -> AnnotationRecord {
    let flip = w.spec.flip();
    let role = w.spec.role;
    let mut seen = t.categories;
    if let Role::Exotic { .. } = role {
        let mut permuted = [false; NUM_CATEGORIES];
        for (c, &on) in t.categories.iter().enumerate() {
            if on {
                let to = if rng.random::<f64>() < EXOTIC_PERMUTE { exotic_partner(c) } else { c };
                permuted[to] = true;
            }
        }
        seen = permuted;
    }
    let mut categories = seen;
    for slot in categories.iter_mut() {
        if rng.random::<f64>() < flip {
            *slot = !*slot;
        }
    }
    let mut vad = [0u8; 3];
    for (d, slot) in vad.iter_mut().enumerate() {
        let truth = t.vad[d] as f64;
        *slot = match role {
            Role::Honest { sigma } => {
                let noise = if sigma > 0.0 { Normal::new(0.0, sigma).expect("sigma > 0").sample(rng) } else { 0.0 };
                clip_score(truth + noise)
            }
            Role::Dishonest => rng.random_range(1..=10),
            Role::Exotic { delta } => clip_score(truth + delta as f64),
        };
    }
    let honest_like = !matches!(role, Role::Dishonest);
    let keep = |rng: &mut ChaCha8Rng| honest_like && rng.random::<f64>() >= flip;
    let gender = if keep(rng) { t.gender } else { uniform_label(rng) };
    let age = if keep(rng) { t.age } else { uniform_label(rng) };
    let ethnicity = if keep(rng) { t.ethnicity } else { uniform_label(rng) };
    let (start_frame, end_frame) = if honest_like {
        let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-3i64..=3);
        let a = (t.interval.0 as i64 + jitter(rng)).clamp(0, frames as i64 - 1);
        let b = (t.interval.1 as i64 + jitter(rng)).clamp(a, frames as i64 - 1);
        (a as u32, b as u32)
    } else {
        let a = rng.random_range(0..frames);
        (a, rng.random_range(a..frames))
    };
    AnnotationRecord {
        instance_id: t.instance_id.clone(),
        participant_id: w.participant_id.clone(),
        corrupted: false,
        categories,
        valence: vad[0],
        arousal: vad[1],
        dominance: vad[2],
        char_gender: gender,
        char_age: age,
        char_ethnicity: ethnicity,
        start_frame,
        end_frame,
    }
}

/// Annotates every planted instance with `per_instance` workers drawn without
/// replacement (all workers when `None`). Workers are named `w0000`, `w0001`,
/// ... in spec order. Records come out grouped by instance.
pub fn gen_annotations(
    specs: &[AnnotatorSpec],
    truth: &[PlantedInstance],
    per_instance: Option<usize>,
    frames: u32,
    seed: u64,
) -> Result<SimPopulation, SimError> {
    if specs.is_empty() || specs.iter().all(|s| s.count == 0) {
        return Err(SimError::Spec("no annotators".into()));
    }
    for s in specs {
        s.check()?;
    }
    let workers: Vec<SimWorker> = specs
        .iter()
        .flat_map(|s| std::iter::repeat_n(*s, s.count))
        .enumerate()
        .map(|(i, spec)| SimWorker { participant_id: format!("w{i:04}"), spec })
        .collect();
    let k = per_instance.unwrap_or(workers.len());
    if k == 0 || k > workers.len() {
        return Err(SimError::Spec(format!("{k} annotators per instance with {} workers", workers.len())));
    }
    let frames = frames.max(2);
    let mut records = Vec::with_capacity(truth.len() * k);
    for (i, t) in truth.iter().enumerate() {
        let mut rng = cell_rng(seed, 0x616e_6e6f, i as u64);
        let chosen = rand::seq::index::sample(&mut rng, workers.len(), k).into_vec();
        let mut chosen = chosen;
        chosen.sort_unstable();
        for w in chosen {
            records.push(annotate(&workers[w], t, frames, &mut rng));
        }
    }
    Ok(SimPopulation { workers, records })
}

/// Binary votes from `n_workers` workers who each answer correctly with
/// probability `accuracy`, on items that are positive with probability `prior`.
pub fn binary_votes(
    n_items: usize,
    n_workers: usize,
    accuracy: f64,
    prior: f64,
    seed: u64,
) -> (Vec<bool>, Vec<DsObservation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<bool> = (0..n_items).map(|_| rng.random::<f64>() < prior).collect();
    let mut obs = Vec::with_capacity(n_items * n_workers);
    for (item, &t) in truth.iter().enumerate() {
        for worker in 0..n_workers {
            let correct = rng.random::<f64>() < accuracy;
            obs.push(DsObservation { item, worker, label: (t == correct) as usize });
        }
    }
    (truth, obs)
}

/// Label rows with binary labels drawn at `positive_rates` and uniform VAD in
/// [0.1, 1]. Every row is in the test split.
pub fn planted_labels(n: usize, positive_rates: &[f64; NUM_CATEGORIES], seed: u64) -> Vec<LabelRow> {
    (0..n)
        .map(|i| {
            let mut rng = cell_rng(seed, 0x6c61_6265, i as u64);
            let mut labels = [false; NUM_CATEGORIES];
            for (c, slot) in labels.iter_mut().enumerate() {
                *slot = rng.random::<f64>() < positive_rates[c];
            }
            let vad = [0; 3].map(|_: u8| rng.random_range(1..=10) as f64 / 10.0);
            LabelRow {
                instance_id: format!("sim/inst{i:06}"),
                ds_scores: labels.map(|b| b as u8 as f64),
                labels,
                vad,
                confidence: 1.0,
                split: Some(Split::Test),
            }
        })
        .collect()
}

/// Chance-level predictor: uniform random category scores and, for each
/// dimension, the mean of the labels (R² = 0 by construction).
pub fn chance_predictions(labels: &[LabelRow], seed: u64) -> Vec<PredictionRow> {
    let n = labels.len().max(1) as f64;
    let mut mean = [0.0; 3];
    for l in labels {
        for d in 0..3 {
            mean[d] += l.vad[d] / n;
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut rng = cell_rng(seed, 0x6368_616e, i as u64);
            PredictionRow { instance_id: l.instance_id.clone(), scores: [0.0; NUM_CATEGORIES].map(|_| rng.random()), vad: mean }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(n: usize) -> Vec<PlantedInstance> {
        planted_truth(&TruthConfig { n_instances: n, ..Default::default() })
    }

    #[test]
    fn noiseless_honest_reproduce_truth() {
        let t = truth(50);
        let spec = AnnotatorSpec { flip_prob: Some(0.0), ..AnnotatorSpec::new(Role::Honest { sigma: 0.0 }, 3) };
        let pop = gen_annotations(&[spec], &t, None, 300, 1).unwrap();
        assert_eq!(pop.records.len(), 150);
        for r in &pop.records {
            let p = t.iter().find(|p| p.instance_id == r.instance_id).unwrap();
            assert_eq!([r.valence, r.arousal, r.dominance], p.vad);
            assert_eq!(r.categories, p.categories);
            assert_eq!((r.char_gender, r.char_age, r.char_ethnicity), (p.gender, p.age, p.ethnicity));
            assert!(r.validate().is_ok());
        }
    }

    #[test]
    fn dishonest_variance_matches_discrete_uniform() {
        let t = truth(10_000);
        let pop = gen_annotations(&[AnnotatorSpec::new(Role::Dishonest, 1)], &t, None, 300, 2).unwrap();
        for d in 0..3 {
            let xs: Vec<f64> = pop.records.iter().map(|r| [r.valence, r.arousal, r.dominance][d] as f64).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((var - 8.25).abs() < 0.5, "{var}");
        }
    }

    #[test]
    fn exotic_offset_clipped() {
        let t = truth(100);
        let pop = gen_annotations(&[AnnotatorSpec::new(Role::Exotic { delta: 3 }, 1)], &t, None, 300, 3).unwrap();
        for (r, p) in pop.records.iter().zip(&t) {
            assert_eq!(r.valence, (p.vad[0] + 3).min(10));
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let t = truth(40);
        let specs = [AnnotatorSpec::new(Role::Honest { sigma: 1.0 }, 4), AnnotatorSpec::new(Role::Dishonest, 2)];
        let a = gen_annotations(&specs, &t, Some(3), 300, 9).unwrap();
        assert_eq!(a, gen_annotations(&specs, &t, Some(3), 300, 9).unwrap());
        assert_ne!(a, gen_annotations(&specs, &t, Some(3), 300, 10).unwrap());
        assert!(a.records.iter().all(|r| r.validate().is_ok()));
        assert!(gen_annotations(&[], &t, None, 300, 0).is_err());
        assert!(gen_annotations(&[AnnotatorSpec::new(Role::Honest { sigma: -1.0 }, 1)], &t, None, 300, 0).is_err());
        assert!(gen_annotations(&specs, &t, Some(7), 300, 0).is_err());
    }

    #[test]
    fn positive_rates_mean() {
        let r = default_positive_rates();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        assert!((m - MEAN_POSITIVE_RATE).abs() < 1e-12);
        assert!(r.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn chance_vad_is_label_mean() {
        let labels = planted_labels(100, &default_positive_rates(), 4);
        let preds = chance_predictions(&labels, 5);
        assert_eq!(preds.len(), 100);
        assert!(preds.iter().all(|p| p.vad == preds[0].vad));
        assert!(preds.iter().flat_map(|p| p.scores).all(|s| (0.0..1.0).contains(&s)));
    }

    #[test]
    fn binary_vote_accuracy() {
        let (truth, obs) = binary_votes(2000, 5, 0.8, 0.3, 6);
        let correct = obs.iter().filter(|o| (o.label == 1) == truth[o.item]).count() as f64 / obs.len() as f64;
        assert!((correct - 0.8).abs() < 0.02);
    }
}
