//! Dawid-Skene EM for noisy categorical votes.
//!
//! Parameters are class priors `p_j` and one confusion matrix per worker,
//! `π_w[j][l] = P(worker w answers l | true class j)`. Posteriors start from
//! vote fractions. By default the M-step is the plain maximum-likelihood
//! update, so the observed-data log-likelihood never decreases. A positive
//! `smoothing` adds pseudo-counts to every confusion cell; EM then maximizes
//! the log-likelihood plus a symmetric Dirichlet log-prior, and only that sum
//! (`objective`) is guaranteed monotone.

use super::AnnotationError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsConfig {
    pub max_iters: usize,
    /// Stop when the largest absolute posterior change drops below this.
    pub tol: f64,
    /// Pseudo-count added to every confusion-matrix cell; 0 is standard EM.
    pub smoothing: f64,
}

impl Default for DsConfig {
    fn default() -> Self {
        DsConfig { max_iters: 100, tol: 1e-6, smoothing: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DsObservation {
    pub item: usize,
    pub worker: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsResult {
    /// `posteriors[item][class]`.
    pub posteriors: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
    /// `confusion[worker][true_class][answered_class]`.
    pub confusion: Vec<Vec<Vec<f64>>>,
    /// Observed-data log-likelihood at each iteration's parameters.
    pub log_likelihood: Vec<f64>,
    /// Log-likelihood plus the smoothing log-prior; monotone. Equal to
    /// `log_likelihood` when smoothing is 0.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl DsResult {
    pub fn argmax(&self, item: usize) -> usize {
        argmax(&self.posteriors[item])
    }
}

fn argmax(xs: &[f64]) -> usize {
    // first maximum wins
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn group_by_item(n_items: usize, k: usize, obs: &[DsObservation]) -> Result<Vec<Vec<(usize, usize)>>, AnnotationError> {
    let mut by_item = vec![Vec::new(); n_items];
    for o in obs {
        if o.label >= k {
            return Err(AnnotationError::DawidSkene(format!("label {} out of range for {k} classes", o.label)));
        }
        let slot = by_item
            .get_mut(o.item)
            .ok_or_else(|| AnnotationError::DawidSkene(format!("item {} out of range", o.item)))?;
        slot.push((o.worker, o.label));
    }
    if let Some(i) = by_item.iter().position(Vec::is_empty) {
        return Err(AnnotationError::DawidSkene(format!("item {i} has no labels")));
    }
    Ok(by_item)
}

/// Per-item vote fractions.
pub fn majority_vote(n_items: usize, k: usize, obs: &[DsObservation]) -> Result<Vec<Vec<f64>>, AnnotationError> {
    let by_item = group_by_item(n_items, k, obs)?;
    Ok(by_item
        .iter()
        .map(|votes| {
            let mut p = vec![0.0; k];
            for &(_, l) in votes {
                p[l] += 1.0;
            }
            let n = votes.len() as f64;
            p.iter_mut().for_each(|x| *x /= n);
            p
        })
        .collect())
}

pub fn dawid_skene(
    n_items: usize,
    n_workers: usize,
    k: usize,
    obs: &[DsObservation],
    cfg: &DsConfig,
) -> Result<DsResult, AnnotationError> {
    if obs.is_empty() || n_items == 0 {
        return Err(AnnotationError::DawidSkene("no observations".into()));
    }
    if k < 2 {
        return Err(AnnotationError::DawidSkene("need at least two classes".into()));
    }
    if let Some(o) = obs.iter().find(|o| o.worker >= n_workers) {
        return Err(AnnotationError::DawidSkene(format!("worker {} out of range", o.worker)));
    }
    let by_item = group_by_item(n_items, k, obs)?;
    let mut post = majority_vote(n_items, k, obs)?;
    let alpha = cfg.smoothing;

    let mut priors = vec![0.0; k];
    let mut confusion = vec![vec![vec![0.0; k]; k]; n_workers];
    let mut lls = Vec::new();
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut log_terms = vec![0.0; k];

    for _ in 0..cfg.max_iters.max(1) {
        iterations += 1;

        // M-step
        priors.iter_mut().for_each(|p| *p = 0.0);
        for p in &post {
            for (acc, x) in priors.iter_mut().zip(p) {
                *acc += x;
            }
        }
        priors.iter_mut().for_each(|p| *p /= n_items as f64);

        for m in confusion.iter_mut() {
            for row in m.iter_mut() {
                row.iter_mut().for_each(|c| *c = alpha);
            }
        }
        for (item, votes) in by_item.iter().enumerate() {
            for &(w, l) in votes {
                for j in 0..k {
                    confusion[w][j][l] += post[item][j];
                }
            }
        }
        let mut log_prior = 0.0;
        for m in confusion.iter_mut() {
            for row in m.iter_mut() {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter_mut().for_each(|c| *c /= total);
                } else {
                    row.iter_mut().for_each(|c| *c = 1.0 / k as f64);
                }
                if alpha > 0.0 {
                    log_prior += row.iter().map(|c| alpha * c.ln()).sum::<f64>();
                }
            }
        }
        let log_priors: Vec<f64> = priors.iter().map(|p| p.ln()).collect();

        // E-step
        let mut ll = 0.0;
        let mut delta: f64 = 0.0;
        for (item, votes) in by_item.iter().enumerate() {
            for j in 0..k {
                log_terms[j] = log_priors[j] + votes.iter().map(|&(w, l)| confusion[w][j][l].ln()).sum::<f64>();
            }
            let z = logsumexp(&log_terms);
            ll += z;
            for j in 0..k {
                let p = (log_terms[j] - z).exp();
                delta = delta.max((p - post[item][j]).abs());
                post[item][j] = p;
            }
        }
        lls.push(ll);
        objectives.push(ll + log_prior);
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(DsResult {
        posteriors: post,
        priors,
        confusion,
        log_likelihood: lls,
        objective: objectives,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs(triples: &[(usize, usize, usize)]) -> Vec<DsObservation> {
        triples.iter().map(|&(item, worker, label)| DsObservation { item, worker, label }).collect()
    }

    #[test]
    fn unanimous_positive_votes() {
        let mut t = Vec::new();
        for i in 0..10 {
            for w in 0..4 {
                t.push((i, w, 1));
            }
        }
        let r = dawid_skene(10, 4, 2, &obs(&t), &DsConfig::default()).unwrap();
        assert!(r.posteriors.iter().all(|p| p[1] >= 0.99));
    }

    #[test]
    fn single_worker_single_item() {
        let r = dawid_skene(1, 1, 2, &obs(&[(0, 0, 1)]), &DsConfig::default()).unwrap();
        // prior collapses onto the voted class
        assert_eq!(r.posteriors[0][1], 1.0);
        assert_eq!(r.priors[1], 1.0);
    }

    #[test]
    fn errors() {
        let cfg = DsConfig::default();
        assert!(dawid_skene(1, 1, 2, &[], &cfg).is_err());
        assert!(dawid_skene(1, 1, 1, &obs(&[(0, 0, 0)]), &cfg).is_err());
        assert!(dawid_skene(2, 1, 2, &obs(&[(0, 0, 0)]), &cfg).is_err());
        assert!(dawid_skene(1, 1, 2, &obs(&[(0, 0, 2)]), &cfg).is_err());
    }

    #[test]
    fn objective_non_decreasing_and_recovers_planted_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 300;
        let accuracies = [0.9, 0.8, 0.7, 0.6, 0.55];
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut t = Vec::new();
        for (i, &y) in truth.iter().enumerate() {
            for (w, &acc) in accuracies.iter().enumerate() {
                let l = if rng.random::<f64>() < acc { y } else { (y + rng.random_range(1..3)) % 3 };
                t.push((i, w, l));
            }
        }
        let r = dawid_skene(n, 5, 3, &obs(&t), &DsConfig::default()).unwrap();
        assert_eq!(r.log_likelihood, r.objective);
        for w in r.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        let smoothed = dawid_skene(n, 5, 3, &obs(&t), &DsConfig { smoothing: 1.0, ..DsConfig::default() }).unwrap();
        for w in smoothed.objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        let correct = (0..n).filter(|&i| r.argmax(i) == truth[i]).count();
        assert!(correct as f64 / n as f64 > 0.9);
        // best worker's estimated diagonal is highest
        let diag = |w: usize| (0..3).map(|j| r.confusion[w][j][j]).sum::<f64>() / 3.0;
        assert!(diag(0) > diag(4));
        for p in &r.posteriors {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
