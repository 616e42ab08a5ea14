use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{keyed_rng, ImputedMatrix, Task};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left as usize).max(go(nodes, right as usize)),
            }
        }
        go(&self.nodes, 0)
    }
}

pub(super) struct TreeParams {
    pub task: Task,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub mtry: usize,
    pub seed: u64,
    pub tree: u64,
}

struct Builder<'a> {
    x: &'a ImputedMatrix,
    y: &'a [f64],
    p: &'a TreeParams,
    nodes: Vec<Node>,
    // scratch
    pairs: Vec<(f64, f64)>,
    features: Vec<usize>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

fn leaf_value(y: &[f64], idx: &[usize]) -> f64 {
    let first = y[idx[0]];
    if idx.iter().all(|&i| y[i] == first) {
        return first;
    }
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

/// Sum of per-child impurity times size: Gini for classification, squared
/// error for regression.
fn node_cost(task: Task, n: f64, sum: f64, sum_sq: f64) -> f64 {
    match task {
        // y ∈ {0, 1}: sum = positives; n·2p(1−p)
        Task::Classification => 2.0 * sum * (n - sum) / n,
        Task::Regression => (sum_sq - sum * sum / n).max(0.0),
    }
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let value = leaf_value(self.y, idx);
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        let depth_done = self.p.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_done || idx.len() < 2 * self.p.min_samples_leaf.max(1) {
            self.nodes[id] = Node::Leaf { value };
            return id as u32;
        }
        match self.best_split(idx, id as u64) {
            Some(best) => {
                let f = best.feature;
                let d = self.x.n_cols;
                let data = &self.x.data;
                // stable partition keeps the builder deterministic
                let (mut l, mut r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| data[i * d + f] <= best.threshold);
                let left = self.build(&mut l, depth + 1);
                let right = self.build(&mut r, depth + 1);
                self.nodes[id] = Node::Split { feature: f, threshold: best.threshold, left, right };
            }
            None => self.nodes[id] = Node::Leaf { value },
        }
        id as u32
    }

    fn best_split(&mut self, idx: &[usize], node: u64) -> Option<BestSplit> {
        let d = self.x.n_cols;
        let mut rng = keyed_rng(self.p.seed, self.p.tree, node);
        // partial Fisher-Yates for the candidate features
        let m = self.p.mtry.clamp(1, d);
        self.features.clear();
        self.features.extend(0..d);
        for k in 0..m {
            let j = rng.random_range(k..d);
            self.features.swap(k, j);
        }

        let n = idx.len() as f64;
        let (tot, tot_sq) = idx.iter().fold((0.0, 0.0), |(s, q), &i| (s + self.y[i], q + self.y[i] * self.y[i]));
        let parent = node_cost(self.p.task, n, tot, tot_sq);
        let min_leaf = self.p.min_samples_leaf.max(1);
        let mut best: Option<BestSplit> = None;

        for k in 0..m {
            let f = self.features[k];
            self.pairs.clear();
            self.pairs.extend(idx.iter().map(|&i| (self.x.data[i * d + f], self.y[i])));
            self.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if self.pairs[0].0 == self.pairs[self.pairs.len() - 1].0 {
                continue;
            }
            let (mut sl, mut ql) = (0.0, 0.0);
            for pos in 1..self.pairs.len() {
                let (xv, yv) = self.pairs[pos - 1];
                sl += yv;
                ql += yv * yv;
                let next = self.pairs[pos].0;
                if pos < min_leaf || self.pairs.len() - pos < min_leaf || xv == next {
                    continue;
                }
                let nl = pos as f64;
                let nr = n - nl;
                let score = node_cost(self.p.task, nl, sl, ql) + node_cost(self.p.task, nr, tot - sl, tot_sq - ql);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let mut threshold = xv + (next - xv) / 2.0;
                    if threshold >= next {
                        threshold = xv;
                    }
                    best = Some(BestSplit { score, feature: f, threshold });
                }
            }
        }
        best.filter(|b| b.score < parent - 1e-12 * parent.abs().max(1.0))
    }
}

pub(super) fn build_tree(x: &ImputedMatrix, y: &[f64], p: &TreeParams) -> Tree {
    let n = x.n_rows;
    let mut rng = keyed_rng(p.seed, p.tree, u64::MAX);
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut b = Builder { x, y, p, nodes: Vec::new(), pairs: Vec::with_capacity(n), features: Vec::new() };
    b.build(&mut idx, 0);
    Tree { nodes: b.nodes }
}
