use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_forest, FeaturesPerSplit, Forest, ForestConfig, ForestError, ImputedMatrix, Result, Task};
use crate::metrics::{average_precision, r2, R2Mode};

/// `n_trees ∈ {100, 300} × max_depth ∈ {8, 16, none} × min_samples_leaf ∈ {1, 5}`.
pub fn default_grid(task: Task, seed: u64) -> Vec<ForestConfig> {
    let mut grid = Vec::new();
    for n_trees in [100, 300] {
        for max_depth in [Some(8), Some(16), None] {
            for min_samples_leaf in [1, 5] {
                grid.push(ForestConfig {
                    n_trees,
                    max_depth,
                    min_samples_leaf,
                    features_per_split: FeaturesPerSplit::for_task(task),
                    seed,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub config: ForestConfig,
    /// Mean validation AP (classification) or R² (regression) over scored folds.
    pub mean_score: Option<f64>,
    pub folds_scored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best_index: usize,
    pub best: ForestConfig,
    pub scores: Vec<GridScore>,
    pub model: Forest,
}

fn fold_score(task: Task, pred: &[f64], truth: &[f64]) -> Option<f64> {
    match task {
        Task::Classification => {
            let labels: Vec<bool> = truth.iter().map(|&v| v == 1.0).collect();
            average_precision(pred, &labels).ok()
        }
        Task::Regression => r2(pred, truth, R2Mode::Vanilla).ok(),
    }
}

/// k-fold search over `grid`. Rows are shuffled once with `seed` and dealt
/// round-robin into folds. Folds where the metric is undefined (no validation
/// positives, constant validation target, single-class training part) are
/// skipped. The best mean wins; ties keep the earlier grid point. The winner
/// is refit on all rows.
pub fn cv_search(
    x: &ImputedMatrix,
    y: &[f64],
    task: Task,
    grid: &[ForestConfig],
    k_folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(ForestError::EmptyGrid);
    }
    if x.n_rows != y.len() {
        return Err(ForestError::Shape(format!("{} rows but {} targets", x.n_rows, y.len())));
    }
    let k = k_folds.max(2);
    if x.n_rows < k {
        return Err(ForestError::TooFewSamples { needed: k, got: x.n_rows });
    }
    let mut perm: Vec<usize> = (0..x.n_rows).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..k)
        .map(|f| {
            let (mut tr, mut va) = (Vec::new(), Vec::new());
            for (pos, &i) in perm.iter().enumerate() {
                if pos % k == f { va.push(i) } else { tr.push(i) }
            }
            tr.sort_unstable();
            va.sort_unstable();
            (tr, va)
        })
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    for cfg in grid {
        let mut vals = Vec::new();
        for (tr, va) in &folds {
            let ytr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
            let model = match train_forest(&x.select(tr), &ytr, task, cfg) {
                Ok(m) => m,
                Err(ForestError::SingleClass) => continue,
                Err(e) => return Err(e),
            };
            let pred = model.predict(&x.select(va))?;
            let yva: Vec<f64> = va.iter().map(|&i| y[i]).collect();
            if let Some(s) = fold_score(task, &pred, &yva) {
                vals.push(s);
            }
        }
        let mean_score = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        scores.push(GridScore { config: *cfg, mean_score, folds_scored: vals.len() });
    }

    let mut best_index = 0;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = s.mean_score {
            if scores[best_index].mean_score.is_none_or(|b| v > b) {
                best_index = i;
            }
        }
    }
    let best = grid[best_index];
    let model = train_forest(x, y, task, &best)?;
    Ok(CvResult { best_index, best, scores, model })
}
