use super::{dist, NormalizedFrame, NormalizedSequence, Series};
use crate::skeleton::JointId;

/// Per-frame body-component distances. Left/right variants are averaged per
/// frame; a frame is missing when any joint it needs is invisible.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyFeatures {
    /// f1: ankle to same-side hip.
    pub feet_hip: Series,
    /// f2: wrist to same-side shoulder.
    pub hands_shoulder: Series,
    /// f3: wrist to wrist.
    pub hands: Series,
    /// f4: wrist to nose.
    pub hands_head: Series,
    /// f8: centroid of all visible joints to the hip midpoint.
    pub centroid_pelvis: Series,
    /// f9: ankle to ankle.
    pub gait_size: Series,
}

impl BodyFeatures {
    pub const ROW_NAMES: [&'static str; 6] = [
        "f1_feet_hip",
        "f2_hands_shoulder",
        "f3_hands",
        "f4_hands_head",
        "f8_centroid_pelvis",
        "f9_gait_size",
    ];

    pub fn rows(&self) -> [(&'static str, &Series); 6] {
        [
            (Self::ROW_NAMES[0], &self.feet_hip),
            (Self::ROW_NAMES[1], &self.hands_shoulder),
            (Self::ROW_NAMES[2], &self.hands),
            (Self::ROW_NAMES[3], &self.hands_head),
            (Self::ROW_NAMES[4], &self.centroid_pelvis),
            (Self::ROW_NAMES[5], &self.gait_size),
        ]
    }
}

fn joint(f: &NormalizedFrame, j: JointId) -> Option<[f64; 2]> {
    f[j.index()]
}

fn pair_dist(f: &NormalizedFrame, a: JointId, b: JointId) -> Option<f64> {
    Some(dist(joint(f, a)?, joint(f, b)?))
}

fn symmetric(f: &NormalizedFrame, right: (JointId, JointId), left: (JointId, JointId)) -> Option<f64> {
    let r = pair_dist(f, right.0, right.1)?;
    let l = pair_dist(f, left.0, left.1)?;
    Some(0.5 * (r + l))
}

pub(crate) fn pelvis(f: &NormalizedFrame) -> Option<[f64; 2]> {
    let r = joint(f, JointId::R_HIP)?;
    let l = joint(f, JointId::L_HIP)?;
    Some([0.5 * (r[0] + l[0]), 0.5 * (r[1] + l[1])])
}

fn centroid(f: &NormalizedFrame) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in f.iter().flatten() {
        sx += p[0];
        sy += p[1];
        n += 1;
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

pub fn body_features(nseq: &NormalizedSequence) -> BodyFeatures {
    use JointId as J;
    let map = |g: &dyn Fn(&NormalizedFrame) -> Option<f64>| -> Series { nseq.frames.iter().map(g).collect() };
    BodyFeatures {
        feet_hip: map(&|f| symmetric(f, (J::R_ANKLE, J::R_HIP), (J::L_ANKLE, J::L_HIP))),
        hands_shoulder: map(&|f| symmetric(f, (J::R_WRIST, J::R_SHOULDER), (J::L_WRIST, J::L_SHOULDER))),
        hands: map(&|f| pair_dist(f, J::R_WRIST, J::L_WRIST)),
        hands_head: map(&|f| symmetric(f, (J::R_WRIST, J::NOSE), (J::L_WRIST, J::NOSE))),
        centroid_pelvis: map(&|f| Some(dist(centroid(f)?, pelvis(f)?))),
        gait_size: map(&|f| pair_dist(f, J::R_ANKLE, J::L_ANKLE)),
    }
}
