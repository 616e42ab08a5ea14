//! Laban movement analysis features.
//!
//! A sequence is first scale-normalized by its mean visible limb length, then
//! three families of per-frame series are computed:
//!
//! - body: inter-landmark distances ([`body_features`]),
//! - effort: joint speed / acceleration / jerk magnitudes and limb-pair angular
//!   velocity / acceleration ([`joint_kinematics`], [`angular_kinematics`]),
//! - shape: bounding-box volumes and torso height ([`shape_features`]).
//!
//! Every series is reduced to `max, min, mean, std` over its non-missing
//! frames. With the default 23-limb graph that gives [`LMA_DIM`] slots:
//! 30 scalar rows × 4 + 2 angular rows × 4 × C(23, 2).

mod body;
mod kinematics;
mod shape;
mod table;

use std::sync::Arc;

use thiserror::Error;

use crate::par;
use crate::skeleton::{LimbGraph, SkeletonSequence, NUM_JOINTS};

pub use body::{body_features, BodyFeatures};
pub use kinematics::{angular_kinematics, joint_kinematics, AngularKinematics, JointGroup, JointKinematics};
pub use shape::{shape_features, ShapeFeatures};
pub use table::{read_feature_table, write_feature_table, FeatureTable, TableError};

/// Slot count under the default limb graph.
pub const LMA_DIM: usize = 2144;

/// Number of scalar (non-angular) feature rows.
pub const SCALAR_ROWS: usize = 30;

pub const STAT_NAMES: [&str; 4] = ["max", "min", "mean", "std"];

/// Per-frame series; `None` where the frame's dependencies are missing or the
/// value is undefined (e.g. the tail of a lagged difference).
pub type Series = Vec<Option<f64>>;

/// Per-frame normalized joint positions.
pub type NormalizedFrame = [Option<[f64; 2]>; NUM_JOINTS];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmaError {
    #[error("`{instance_id}`: no limb has both endpoints visible in any frame")]
    NormalizationImpossible { instance_id: String },
    #[error("frame lag {tau} must satisfy 1 <= tau < {frames}")]
    InvalidTau { tau: usize, frames: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KinematicParams {
    /// Frame lag of the finite differences.
    pub tau: usize,
}

impl Default for KinematicParams {
    fn default() -> Self {
        KinematicParams { tau: 15 }
    }
}

impl KinematicParams {
    pub fn check(&self, frames: usize) -> Result<(), LmaError> {
        if self.tau >= 1 && self.tau < frames {
            Ok(())
        } else {
            Err(LmaError::InvalidTau { tau: self.tau, frames })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSequence {
    pub frames: Vec<NormalizedFrame>,
    /// Mean visible limb length in pixels.
    pub scale: f64,
    /// Number of (limb, frame) terms that entered the mean.
    pub visible_pairs: usize,
}

impl NormalizedSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Divides every visible coordinate by the mean endpoint distance over all
/// (limb, frame) pairs whose endpoints are both visible.
pub fn normalize_sequence(seq: &SkeletonSequence, limbs: &LimbGraph) -> Result<NormalizedSequence, LmaError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for frame in &seq.frames {
        for &(a, b) in limbs.edges() {
            if let (Some(pa), Some(pb)) = (frame.pose.get(a).position(), frame.pose.get(b).position()) {
                total += dist(pa, pb);
                count += 1;
            }
        }
    }
    let scale = if count > 0 { total / count as f64 } else { 0.0 };
    if count == 0 || !(scale > 0.0) {
        return Err(LmaError::NormalizationImpossible { instance_id: seq.instance_id.clone() });
    }
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let mut out: NormalizedFrame = [None; NUM_JOINTS];
            for (slot, kp) in out.iter_mut().zip(&f.pose.joints) {
                if kp.visible {
                    *slot = Some([kp.x / scale, kp.y / scale]);
                }
            }
            out
        })
        .collect();
    Ok(NormalizedSequence { frames, scale, visible_pairs: count })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn as_array(&self) -> [f64; 4] {
        [self.max, self.min, self.mean, self.std]
    }
}

/// Max, min, mean and population std over the non-missing frames; `None`
/// when fewer than two frames are valid.
pub fn summarize(series: &[Option<f64>]) -> Option<Summary> {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for v in series.iter().flatten() {
        n += 1;
        sum += v;
        max = max.max(*v);
        min = min.min(*v);
    }
    if n < 2 {
        return None;
    }
    let mean = sum / n as f64;
    let var = series.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Some(Summary { max, min, mean, std: var.sqrt() })
}

/// Named, possibly-missing LMA features of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LmaFeatureVector {
    pub names: Arc<[String]>,
    pub values: Vec<Option<f64>>,
}

impl LmaFeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<Option<f64>> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Option<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

/// Row labels of the scalar families in canonical order.
pub fn scalar_row_names() -> Vec<String> {
    let mut rows: Vec<String> = BodyFeatures::ROW_NAMES.iter().map(|s| s.to_string()).collect();
    rows.extend(JointKinematics::row_names());
    rows.extend(ShapeFeatures::ROW_NAMES.iter().map(|s| s.to_string()));
    rows
}

/// Number of feature slots for a limb graph.
pub fn lma_dim(limbs: &LimbGraph) -> usize {
    SCALAR_ROWS * 4 + 2 * 4 * limbs.pair_count()
}

/// Canonical slot names: body rows, kinematic rows, angular velocity and
/// angular acceleration for every limb pair in lexicographic pair order, then
/// shape rows. Each row expands to `_max`, `_min`, `_mean`, `_std`.
pub fn feature_names(limbs: &LimbGraph) -> Vec<String> {
    let mut rows: Vec<String> = BodyFeatures::ROW_NAMES.iter().map(|s| s.to_string()).collect();
    rows.extend(JointKinematics::row_names());
    for code in ["f38", "f39"] {
        for (a, b) in limbs.pairs() {
            rows.push(format!("{code}_{}_{}", limbs.edge_name(a), limbs.edge_name(b)));
        }
    }
    rows.extend(ShapeFeatures::ROW_NAMES.iter().map(|s| s.to_string()));
    rows.into_iter()
        .flat_map(|r| STAT_NAMES.iter().map(move |s| format!("{r}_{s}")))
        .collect()
}

/// Reusable extractor holding the limb graph, lag and slot names.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    limbs: LimbGraph,
    params: KinematicParams,
    names: Arc<[String]>,
}

impl FeatureExtractor {
    pub fn new(limbs: LimbGraph, params: KinematicParams) -> Self {
        let names: Arc<[String]> = feature_names(&limbs).into();
        FeatureExtractor { limbs, params, names }
    }

    pub fn names(&self) -> &Arc<[String]> {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn limbs(&self) -> &LimbGraph {
        &self.limbs
    }

    pub fn extract(&self, seq: &SkeletonSequence) -> Result<LmaFeatureVector, LmaError> {
        self.params.check(seq.len())?;
        let nseq = normalize_sequence(seq, &self.limbs)?;
        let mut values = Vec::with_capacity(self.dim());
        let body = body_features(&nseq);
        for (_, s) in body.rows() {
            push_summary(&mut values, summarize(s));
        }
        let kin = joint_kinematics(&nseq, &self.params);
        for s in kin.rows() {
            push_summary(&mut values, summarize(s));
        }
        let (omega, alpha) = kinematics::angular_summaries(&nseq, &self.limbs, &self.params);
        for s in omega.into_iter().chain(alpha) {
            push_summary(&mut values, s);
        }
        let shape = shape_features(&nseq);
        for (_, s) in shape.rows() {
            push_summary(&mut values, summarize(s));
        }
        debug_assert_eq!(values.len(), self.dim());
        Ok(LmaFeatureVector { names: self.names.clone(), values })
    }

    /// Extracts every sequence, in parallel when enabled; output order equals
    /// input order.
    pub fn extract_many(&self, seqs: &[SkeletonSequence]) -> Vec<Result<LmaFeatureVector, LmaError>> {
        par::map(seqs, |s| self.extract(s))
    }

    /// Single-threaded counterpart of [`FeatureExtractor::extract_many`].
    pub fn extract_many_sequential(&self, seqs: &[SkeletonSequence]) -> Vec<Result<LmaFeatureVector, LmaError>> {
        par::map_sequential(seqs, |s| self.extract(s))
    }
}

fn push_summary(values: &mut Vec<Option<f64>>, s: Option<Summary>) {
    match s {
        Some(sum) => values.extend(sum.as_array().map(Some)),
        None => values.extend([None; 4]),
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::new(LimbGraph::default(), KinematicParams::default())
    }
}

/// Full feature vector for one sequence. Prefer [`FeatureExtractor`] when
/// extracting many sequences.
pub fn extract_all(
    seq: &SkeletonSequence,
    limbs: &LimbGraph,
    params: &KinematicParams,
) -> Result<LmaFeatureVector, LmaError> {
    FeatureExtractor::new(limbs.clone(), *params).extract(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{default_limb_graph, Frame, JointId, Keypoint, Pose};

    fn seq_from(poses: Vec<Pose>) -> SkeletonSequence {
        let frames = poses.into_iter().enumerate().map(|(t, pose)| Frame { t: t as u64, pose }).collect();
        SkeletonSequence::new("x", "m", 30.0, frames).unwrap()
    }

    fn two_joint_pose(a: (JointId, [f64; 2]), b: (JointId, [f64; 2])) -> Pose {
        let mut p = Pose::empty();
        p.set(a.0, Keypoint::visible(a.1[0], a.1[1]));
        p.set(b.0, Keypoint::visible(b.1[0], b.1[1]));
        p
    }

    #[test]
    fn single_limb_scale_halves_coordinates() {
        let pose = two_joint_pose((JointId::NECK, [4.0, 6.0]), (JointId::NOSE, [4.0, 8.0]));
        let seq = seq_from(vec![pose.clone(), pose]);
        let n = normalize_sequence(&seq, &default_limb_graph()).unwrap();
        assert_eq!(n.scale, 2.0);
        assert_eq!(n.visible_pairs, 2);
        assert_eq!(n.frames[0][JointId::NECK.index()], Some([2.0, 3.0]));
        assert_eq!(n.frames[1][JointId::NOSE.index()], Some([2.0, 4.0]));
        assert_eq!(n.frames[0][JointId::R_WRIST.index()], None);
    }

    #[test]
    fn two_limbs_lengths_one_and_three_give_scale_two() {
        // relb-rwri length 1, rkne-rank length 3; no other limb has both ends
        let mut p = Pose::empty();
        p.set(JointId::R_ELBOW, Keypoint::visible(0.0, 0.0));
        p.set(JointId::R_WRIST, Keypoint::visible(0.0, 1.0));
        p.set(JointId::R_KNEE, Keypoint::visible(10.0, 0.0));
        p.set(JointId::R_ANKLE, Keypoint::visible(13.0, 0.0));
        let seq = seq_from(vec![p.clone(), p.clone(), p]);
        let n = normalize_sequence(&seq, &default_limb_graph()).unwrap();
        let terms = [1.0, 3.0, 1.0, 3.0, 1.0, 3.0];
        let oracle = terms.iter().sum::<f64>() / terms.len() as f64;
        assert_eq!(n.scale, oracle);
        assert_eq!(n.scale, 2.0);
    }

    #[test]
    fn scaling_input_leaves_normalized_pose_unchanged() {
        let mut p = Pose::empty();
        p.set(JointId::NECK, Keypoint::visible(1.0, 2.0));
        p.set(JointId::NOSE, Keypoint::visible(1.5, 4.0));
        p.set(JointId::R_SHOULDER, Keypoint::visible(-1.0, 2.5));
        let seq = seq_from(vec![p]);
        let a = normalize_sequence(&seq, &default_limb_graph()).unwrap();
        let b = normalize_sequence(&seq.map_coords(|x, y| (7.0 * x, 7.0 * y)), &default_limb_graph()).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for (ja, jb) in fa.iter().zip(fb) {
                match (ja, jb) {
                    (Some(u), Some(v)) => {
                        assert!((u[0] - v[0]).abs() < 1e-12 && (u[1] - v[1]).abs() < 1e-12)
                    }
                    (None, None) => {}
                    _ => panic!("visibility changed"),
                }
            }
        }
    }

    #[test]
    fn no_visible_limb_is_error() {
        let mut p = Pose::empty();
        p.set(JointId::NOSE, Keypoint::visible(1.0, 1.0));
        let seq = seq_from(vec![p]);
        assert!(matches!(
            normalize_sequence(&seq, &default_limb_graph()),
            Err(LmaError::NormalizationImpossible { .. })
        ));
    }

    #[test]
    fn summarize_cases() {
        let s = summarize(&[Some(3.0), Some(3.0), None, Some(3.0)]).unwrap();
        assert_eq!(s.as_array(), [3.0, 3.0, 3.0, 0.0]);
        let s = summarize(&[Some(1.0), Some(3.0)]).unwrap();
        assert_eq!(s.as_array(), [3.0, 1.0, 2.0, 1.0]);
        assert_eq!(summarize(&[None, None]), None);
        assert_eq!(summarize(&[Some(1.0), None]), None);
    }

    #[test]
    fn lma_dim_matches_table_enumeration() {
        let g = default_limb_graph();
        // 6 body + 18 kinematic + 6 shape rows
        assert_eq!(scalar_row_names().len(), SCALAR_ROWS);
        let names = feature_names(&g);
        assert_eq!(names.len(), 30 * 4 + 2 * 4 * 253);
        assert_eq!(names.len(), LMA_DIM);
        assert_eq!(lma_dim(&g), LMA_DIM);
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(names[0], "f1_feet_hip_max");
        assert!(names.contains(&"f16_hands_accel_mean".to_string()));
    }

    #[test]
    fn invalid_tau_rejected() {
        let mut p = Pose::empty();
        p.set(JointId::NECK, Keypoint::visible(0.0, 0.0));
        p.set(JointId::NOSE, Keypoint::visible(0.0, 1.0));
        let seq = seq_from(vec![p; 10]);
        let g = default_limb_graph();
        assert!(matches!(
            extract_all(&seq, &g, &KinematicParams { tau: 10 }),
            Err(LmaError::InvalidTau { .. })
        ));
        assert!(extract_all(&seq, &g, &KinematicParams { tau: 0 }).is_err());
        assert_eq!(extract_all(&seq, &g, &KinematicParams { tau: 3 }).unwrap().len(), LMA_DIM);
    }
}
