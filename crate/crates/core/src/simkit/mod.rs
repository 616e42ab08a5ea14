//! Planted-truth generators: annotator populations with honest, dishonest and
//! exotic workers, and parametric skeleton motions with closed-form
//! kinematics. Everything is a pure function of its spec and seed.

mod annotators;
mod motion;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use annotators::{
    binary_votes, chance_predictions, default_positive_rates, exotic_partner, gen_annotations, planted_labels,
    planted_truth, AnnotatorSpec, PlantedInstance, Role, SimPopulation, SimWorker, TruthConfig, DISHONEST_FLIP,
    EXOTIC_FLIP, EXOTIC_PERMUTE, HONEST_FLIP, MEAN_POSITIVE_RATE,
};
pub use motion::{gen_skeletons, random_motion_spec, rest_pose, MotionKind, MotionSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    Spec(String),
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one `(stream, index)` cell under `seed`.
pub(crate) fn cell_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ stream) ^ index))
}

/// `y = β x + ε` with the noise variance chosen so that the population R² of
/// `y` on `x` equals `r2`: `Var ε = Var(β x) (1/r2 − 1)`, using the sample
/// variance of `x`. Missing `x` gives missing `y`.
pub fn linear_target(x: &[Option<f64>], beta: f64, r2: f64, seed: u64) -> Result<Vec<Option<f64>>, SimError> {
    if !(r2 > 0.0 && r2 <= 1.0) {
        return Err(SimError::Spec(format!("target R² {r2} outside (0, 1]")));
    }
    let xs: Vec<f64> = x.iter().flatten().copied().collect();
    if xs.len() < 2 {
        return Err(SimError::Spec("need at least two defined inputs".into()));
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / xs.len() as f64;
    let sd = (beta * beta * var * (1.0 / r2 - 1.0)).sqrt();
    let mut rng = cell_rng(seed, 0x6c69_6e65, 0);
    let noise = (sd > 0.0).then(|| Normal::new(0.0, sd).expect("sd > 0"));
    Ok(x.iter()
        .map(|v| v.map(|v| beta * v + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng))))
        .collect())
}
