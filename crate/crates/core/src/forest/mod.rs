//! Random forests (CART on bootstrap samples) over imputed LMA features,
//! cross-validated grid search and single-feature significance scans.
//!
//! Randomness is keyed: every tree's bootstrap and every node's feature draw
//! come from a generator seeded by `(seed, tree, node)`, so the ensemble does
//! not depend on how trees are scheduled across threads.

mod cv;
mod significance;
mod tree;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

pub use cv::{cv_search, default_grid, CvResult, GridScore};
pub use significance::{feature_significance, SignificanceOutput, SignificanceRow};
pub use tree::{Node, Tree};

pub const IMPUTE_VALUE: f64 = 1000.0;
pub const MODEL_FORMAT: &str = "bodyaffect-forest";
pub const BUNDLE_FORMAT: &str = "bodyaffect-model-bundle";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("classification target has a single class")]
    SingleClass,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("invalid target: {0}")]
    Target(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ForestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Binary targets in {0, 1}; predictions are positive-class probabilities.
    Classification,
    Regression,
}

/// Dense row-major matrix with no missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
    pub impute_value: f64,
}

impl ImputedMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> ImputedMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        ImputedMatrix { n_rows: idx.len(), n_cols: self.n_cols, data, impute_value: self.impute_value }
    }
}

/// Replaces every missing slot with [`IMPUTE_VALUE`].
pub fn impute(rows: &[Vec<Option<f64>>]) -> Result<ImputedMatrix> {
    impute_with(rows, IMPUTE_VALUE)
}

pub fn impute_with(rows: &[Vec<Option<f64>>], value: f64) -> Result<ImputedMatrix> {
    let n_cols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_cols) {
        return Err(ForestError::Shape(format!("row {i} has {} columns, expected {n_cols}", r.len())));
    }
    let data = rows.iter().flatten().map(|v| v.unwrap_or(value)).collect();
    Ok(ImputedMatrix { n_rows: rows.len(), n_cols, data, impute_value: value })
}

/// How many candidate features each split looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    Sqrt,
    Third,
    All,
    Fixed(usize),
}

impl FeaturesPerSplit {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => FeaturesPerSplit::Sqrt,
            Task::Regression => FeaturesPerSplit::Third,
        }
    }

    pub fn resolve(self, d: usize) -> usize {
        let m = match self {
            FeaturesPerSplit::Sqrt => (d as f64).sqrt().round() as usize,
            FeaturesPerSplit::Third => d / 3,
            FeaturesPerSplit::All => d,
            FeaturesPerSplit::Fixed(m) => m,
        };
        m.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `Some(0)` is a single leaf; `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub seed: u64,
}

impl ForestConfig {
    pub fn for_task(task: Task) -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: Some(16),
            min_samples_leaf: 1,
            features_per_split: FeaturesPerSplit::for_task(task),
            seed: 0,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one `(tree, node)` cell. `node == u64::MAX` is the bootstrap draw.
pub(crate) fn keyed_rng(seed: u64, tree: u64, node: u64) -> ChaCha8Rng {
    let k = splitmix(splitmix(splitmix(seed) ^ tree) ^ node);
    ChaCha8Rng::seed_from_u64(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub task: Task,
    pub config: ForestConfig,
    pub n_features: usize,
    #[serde(default)]
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    /// Smallest and largest leaf values; predictions are clamped to this range.
    pub range: (f64, f64),
}

fn check_targets(task: Task, y: &[f64]) -> Result<()> {
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(ForestError::Target(format!("non-finite value {v}")));
    }
    if task == Task::Classification {
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(ForestError::Target("classification targets must be 0 or 1".into()));
        }
        if y.iter().all(|&v| v == y[0]) {
            return Err(ForestError::SingleClass);
        }
    }
    Ok(())
}

/// Trains `cfg.n_trees` CART trees on bootstrap samples of the rows.
pub fn train_forest(x: &ImputedMatrix, y: &[f64], task: Task, cfg: &ForestConfig) -> Result<Forest> {
    if x.n_rows != y.len() {
        return Err(ForestError::Shape(format!("{} rows but {} targets", x.n_rows, y.len())));
    }
    if x.n_rows < 2 {
        return Err(ForestError::TooFewSamples { needed: 2, got: x.n_rows });
    }
    if x.n_cols == 0 {
        return Err(ForestError::Shape("no feature columns".into()));
    }
    if cfg.n_trees == 0 {
        return Err(ForestError::Shape("n_trees must be at least 1".into()));
    }
    check_targets(task, y)?;
    let mtry = cfg.features_per_split.resolve(x.n_cols);
    let trees = par::map_range(cfg.n_trees, |t| {
        let p = tree::TreeParams {
            task,
            max_depth: cfg.max_depth,
            min_samples_leaf: cfg.min_samples_leaf,
            mtry,
            seed: cfg.seed,
            tree: t as u64,
        };
        tree::build_tree(x, y, &p)
    });
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for t in &trees {
        for n in &t.nodes {
            if let Node::Leaf { value } = *n {
                range = (range.0.min(value), range.1.max(value));
            }
        }
    }
    Ok(Forest { task, config: *cfg, n_features: x.n_cols, feature_names: Vec::new(), trees, range })
}

/// Like [`train_forest`], but rows are first ordered by `ids` so the model
/// does not depend on the order the rows were supplied in.
pub fn train_forest_keyed(
    ids: &[String],
    x: &ImputedMatrix,
    y: &[f64],
    task: Task,
    cfg: &ForestConfig,
) -> Result<Forest> {
    if ids.len() != x.n_rows {
        return Err(ForestError::Shape(format!("{} ids for {} rows", ids.len(), x.n_rows)));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    if order.windows(2).any(|w| ids[w[0]] == ids[w[1]]) {
        return Err(ForestError::Shape("duplicate instance ids".into()));
    }
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    train_forest(&x.select(&order), &ys, task, cfg)
}

impl Forest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        // rounding in the mean can step just outside the leaf range
        (sum / self.trees.len() as f64).clamp(self.range.0, self.range.1)
    }

    pub fn predict(&self, x: &ImputedMatrix) -> Result<Vec<f64>> {
        if x.n_cols != self.n_features {
            return Err(ForestError::Shape(format!("model has {} features, input has {}", self.n_features, x.n_cols)));
        }
        Ok(par::map_range(x.n_rows, |i| self.predict_row(x.row(i))))
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, &ModelFile { format: MODEL_FORMAT.into(), version: FORMAT_VERSION, model: self.clone() })?;
        Ok(())
    }

    pub fn from_json<R: Read>(r: R) -> Result<Forest> {
        let f: ModelFile = serde_json::from_reader(r)?;
        check_format(&f.format, MODEL_FORMAT, f.version)?;
        Ok(f.model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: Forest,
}

fn check_format(got: &str, want: &str, version: u32) -> Result<()> {
    if got != want {
        return Err(ForestError::Format(format!("expected format `{want}`, found `{got}`")));
    }
    if version != FORMAT_VERSION {
        return Err(ForestError::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

/// Several named models sharing one feature layout (for example one per
/// category plus one per dimension).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub models: BTreeMap<String, Forest>,
}

impl ModelBundle {
    pub fn new(feature_names: Vec<String>) -> Self {
        ModelBundle { format: BUNDLE_FORMAT.into(), version: FORMAT_VERSION, feature_names, models: BTreeMap::new() }
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn from_json<R: Read>(r: R) -> Result<ModelBundle> {
        let b: ModelBundle = serde_json::from_reader(r)?;
        check_format(&b.format, BUNDLE_FORMAT, b.version)?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(super) fn planted(n: usize, d: usize, seed: u64) -> (ImputedMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<Option<f64>>> =
            (0..n).map(|_| (0..d).map(|_| Some(rng.random_range(0.0..1.0))).collect()).collect();
        let y = rows.iter().map(|r| (r[2].unwrap() > 0.4) as u8 as f64).collect();
        (impute(&rows).unwrap(), y)
    }

    fn cfg(n_trees: usize) -> ForestConfig {
        ForestConfig { n_trees, ..ForestConfig::for_task(Task::Classification) }
    }

    #[test]
    fn imputation() {
        let m = impute(&[vec![Some(1.0), None], vec![None, None]]).unwrap();
        assert_eq!(m.data, vec![1.0, 1000.0, 1000.0, 1000.0]);
        assert!(impute(&[vec![Some(1.0)], vec![]]).is_err());
    }

    #[test]
    fn planted_rule_held_out_accuracy() {
        let (x, y) = planted(700, 8, 1);
        let train: Vec<usize> = (0..500).collect();
        let test: Vec<usize> = (500..700).collect();
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let f = train_forest(&x.select(&train), &ytr, Task::Classification, &cfg(50)).unwrap();
        let p = f.predict(&x.select(&test)).unwrap();
        let acc = test.iter().zip(&p).filter(|(&i, &s)| (s >= 0.5) == (y[i] == 1.0)).count() as f64 / 200.0;
        assert!(acc >= 0.95, "{acc}");
        assert!(p.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let (x, y) = planted(200, 6, 2);
        let a = train_forest(&x, &y, Task::Classification, &cfg(20)).unwrap().predict(&x).unwrap();
        let b = train_forest(&x, &y, Task::Classification, &cfg(20)).unwrap().predict(&x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn constant_regression_target() {
        let (x, _) = planted(50, 4, 3);
        let y = vec![0.37; 50];
        let c = ForestConfig { n_trees: 10, ..ForestConfig::for_task(Task::Regression) };
        let f = train_forest(&x, &y, Task::Regression, &c).unwrap();
        assert!(f.predict(&x).unwrap().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn single_class_is_error() {
        let (x, _) = planted(20, 3, 4);
        assert!(matches!(train_forest(&x, &[1.0; 20], Task::Classification, &cfg(3)), Err(ForestError::SingleClass)));
    }

    #[test]
    fn stump_is_one_leaf() {
        let (x, y) = planted(60, 3, 5);
        let c = ForestConfig { max_depth: Some(0), ..cfg(4) };
        let f = train_forest(&x, &y, Task::Classification, &c).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1 && t.depth() == 0));
    }

    #[test]
    fn keyed_training_ignores_row_order() {
        let (x, y) = planted(120, 5, 6);
        let ids: Vec<String> = (0..120).map(|i| format!("i{i:03}")).collect();
        let a = train_forest_keyed(&ids, &x, &y, Task::Classification, &cfg(10)).unwrap();
        let perm: Vec<usize> = (0..120).rev().collect();
        let ids2: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
        let y2: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let b = train_forest_keyed(&ids2, &x.select(&perm), &y2, Task::Classification, &cfg(10)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regression_within_target_range() {
        let (x, _) = planted(80, 4, 7);
        let y: Vec<f64> = (0..80).map(|i| x.get(i, 0) * 3.0 - 1.0).collect();
        let c = ForestConfig { n_trees: 15, ..ForestConfig::for_task(Task::Regression) };
        let f = train_forest(&x, &y, Task::Regression, &c).unwrap();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(f.predict(&x).unwrap().iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = planted(60, 4, 8);
        let f = train_forest(&x, &y, Task::Classification, &cfg(5)).unwrap();
        let mut buf = Vec::new();
        f.to_json(&mut buf).unwrap();
        let g = Forest::from_json(buf.as_slice()).unwrap();
        assert_eq!(f, g);
        let mut bundle = ModelBundle::new(vec!["a".into()]);
        bundle.models.insert("happy".into(), g);
        let mut buf = Vec::new();
        bundle.to_json(&mut buf).unwrap();
        assert_eq!(ModelBundle::from_json(buf.as_slice()).unwrap(), bundle);
        assert!(Forest::from_json(&b"{\"format\":\"other\",\"version\":1}"[..]).is_err());
    }
}
