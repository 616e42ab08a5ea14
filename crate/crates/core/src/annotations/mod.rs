//! Crowdsourced affect annotations and their consensus aggregation.

mod aggregate;
mod dawid_skene;
mod table;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{
    aggregate_dimensional, aggregate_interval, aggregate_labels, build_dataset, ensemble_reliability,
    instance_confidence, movie_of, AggregatedLabel, AggregationOutput, Dataset, DatasetConfig, Split,
};
pub use dawid_skene::{dawid_skene, majority_vote, DsConfig, DsObservation, DsResult};
pub use table::{
    parse_annotations, read_label_table, write_annotations, write_label_table, LabelRow, ANNOTATION_COLUMNS,
};

pub const NUM_CATEGORIES: usize = 26;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation schema: {0}")]
    Schema(String),
    #[error("{}", format_rows(.0))]
    Rows(Vec<RowError>),
    #[error("dawid-skene: {0}")]
    DawidSkene(String),
    #[error("no annotator with positive reliability")]
    UndefinedConsensus,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub message: String,
}

fn format_rows(rows: &[RowError]) -> String {
    let shown: Vec<String> = rows.iter().take(5).map(|r| format!("row {}: {}", r.row, r.message)).collect();
    let more = if rows.len() > 5 { format!(" (+{} more)", rows.len() - 5) } else { String::new() };
    format!("{}{more}", shown.join("; "))
}

/// The 26 emotion categories, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Peace,
    Affection,
    Esteem,
    Anticipation,
    Engagement,
    Confidence,
    Happiness,
    Pleasure,
    Excitement,
    Surprise,
    Sympathy,
    DoubtConfusion,
    Disconnection,
    Fatigue,
    Embarrassment,
    Yearning,
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
}

const CATEGORY_NAMES: [&str; NUM_CATEGORIES] = [
    "peace",
    "affection",
    "esteem",
    "anticipation",
    "engagement",
    "confidence",
    "happiness",
    "pleasure",
    "excitement",
    "surprise",
    "sympathy",
    "doubt_confusion",
    "disconnection",
    "fatigue",
    "embarrassment",
    "yearning",
    "disapproval",
    "aversion",
    "annoyance",
    "anger",
    "sensitivity",
    "sadness",
    "disquietment",
    "fear",
    "pain",
    "suffering",
];

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = {
        use Category::*;
        [
            Peace, Affection, Esteem, Anticipation, Engagement, Confidence, Happiness, Pleasure,
            Excitement, Surprise, Sympathy, DoubtConfusion, Disconnection, Fatigue, Embarrassment,
            Yearning, Disapproval, Aversion, Annoyance, Anger, Sensitivity, Sadness, Disquietment,
            Fear, Pain, Suffering,
        ]
    };

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        CATEGORY_NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Category> {
        CATEGORY_NAMES.iter().position(|n| *n == name).map(|i| Category::ALL[i])
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Small closed label sets aggregated with multi-class Dawid-Skene.
pub trait CategoricalLabel: Copy + Eq + fmt::Debug + Send + Sync + 'static {
    const NAMES: &'static [&'static str];

    fn index(self) -> usize;
    fn from_index(i: usize) -> Self;

    fn classes() -> usize {
        Self::NAMES.len()
    }

    fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::NAMES.iter().position(|n| *n == name).map(Self::from_index)
    }
}

macro_rules! categorical_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl CategoricalLabel for $name {
            const NAMES: &'static [&'static str] = &[$($label),+];

            fn index(self) -> usize {
                self as usize
            }

            fn from_index(i: usize) -> Self {
                const ALL: &[$name] = &[$($name::$variant),+];
                ALL[i]
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

categorical_enum!(Gender { Male => "male", Female => "female" });

categorical_enum!(
    /// Kid: up to 12 years; teenager: 13-20; adult: over 20.
    AgeGroup { Kid => "kid", Teenager => "teenager", Adult => "adult" }
);

categorical_enum!(Ethnicity {
    AmericanIndian => "american_indian_or_alaska_native",
    Asian => "asian",
    AfricanAmerican => "african_american",
    HispanicLatino => "hispanic_or_latino",
    PacificIslander => "native_hawaiian_or_pacific_islander",
    White => "white",
    Other => "other",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Valence,
    Arousal,
    Dominance,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Valence, Dimension::Arousal, Dimension::Dominance];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Valence => "valence",
            Dimension::Arousal => "arousal",
            Dimension::Dominance => "dominance",
        }
    }

    pub fn from_name(s: &str) -> Option<Dimension> {
        Dimension::ALL.into_iter().find(|d| d.name() == s)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

mod selected {
    use super::{Category, NUM_CATEGORIES};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(flags: &[bool; NUM_CATEGORIES], s: S) -> Result<S::Ok, S::Error> {
        let sel: Vec<Category> = Category::ALL.iter().copied().filter(|c| flags[c.index()]).collect();
        sel.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[bool; NUM_CATEGORIES], D::Error> {
        let sel = Vec::<Category>::deserialize(d)?;
        let mut flags = [false; NUM_CATEGORIES];
        for c in sel {
            flags[c.index()] = true;
        }
        Ok(flags)
    }
}

/// One participant's labeling of one instance. Over JSON, `categories` is the
/// list of selected category names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub participant_id: String,
    pub corrupted: bool,
    #[serde(with = "selected")]
    pub categories: [bool; NUM_CATEGORIES],
    pub valence: u8,
    pub arousal: u8,
    pub dominance: u8,
    pub char_gender: Gender,
    pub char_age: AgeGroup,
    pub char_ethnicity: Ethnicity,
    pub start_frame: u32,
    pub end_frame: u32,
}

impl AnnotationRecord {
    pub fn dimension(&self, d: Dimension) -> u8 {
        match d {
            Dimension::Valence => self.valence,
            Dimension::Arousal => self.arousal,
            Dimension::Dominance => self.dominance,
        }
    }

    pub fn has(&self, c: Category) -> bool {
        self.categories[c.index()]
    }

    pub fn selected(&self) -> impl Iterator<Item = Category> + '_ {
        Category::ALL.into_iter().filter(|c| self.has(*c))
    }

    /// Range checks: scores are integers in 1..=10 and the interval is ordered.
    pub fn validate(&self) -> Result<(), String> {
        for d in Dimension::ALL {
            let v = self.dimension(d);
            if !(1..=10).contains(&v) {
                return Err(format!("{d} = {v} outside 1..=10"));
            }
        }
        if self.start_frame > self.end_frame {
            return Err(format!("start_frame {} > end_frame {}", self.start_frame, self.end_frame));
        }
        if self.instance_id.is_empty() || self.participant_id.is_empty() {
            return Err("empty instance_id or participant_id".into());
        }
        Ok(())
    }
}

/// Lifecycle state of a participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ParticipantStatus {
    #[default]
    Active,
    /// Blocked until the given unix time (seconds).
    BlockedUntil { until: u64 },
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub participant_id: String,
    pub r_v: f64,
    pub r_a: f64,
    pub r_d: f64,
    /// Ensemble reliability `(2 r_v + r_a) / 3`.
    pub r: f64,
    pub n_annotations: usize,
    pub eq_passed: bool,
    pub status: ParticipantStatus,
}

impl ParticipantProfile {
    pub fn new(participant_id: impl Into<String>, r_v: f64, r_a: f64, r_d: f64, n_annotations: usize) -> Self {
        ParticipantProfile {
            participant_id: participant_id.into(),
            r_v,
            r_a,
            r_d,
            r: ensemble_reliability(r_v, r_a, r_d),
            n_annotations,
            eq_passed: true,
            status: ParticipantStatus::Active,
        }
    }
}
