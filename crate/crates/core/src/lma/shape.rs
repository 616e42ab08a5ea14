use super::body::pelvis;
use super::{dist, NormalizedFrame, NormalizedSequence, Series};
use crate::skeleton::{JointId, NUM_JOINTS};

/// Shape component: axis-aligned bounding-box areas of joint subsets, and
/// torso height.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFeatures {
    pub volume: Series,
    pub upper: Series,
    pub lower: Series,
    pub left: Series,
    pub right: Series,
    /// Neck to hip-midpoint distance.
    pub torso_height: Series,
}

impl ShapeFeatures {
    pub const ROW_NAMES: [&'static str; 6] = [
        "f19_volume",
        "f20_volume_upper",
        "f21_volume_lower",
        "f22_volume_left",
        "f23_volume_right",
        "f24_torso_height",
    ];

    pub fn rows(&self) -> [(&'static str, &Series); 6] {
        [
            (Self::ROW_NAMES[0], &self.volume),
            (Self::ROW_NAMES[1], &self.upper),
            (Self::ROW_NAMES[2], &self.lower),
            (Self::ROW_NAMES[3], &self.left),
            (Self::ROW_NAMES[4], &self.right),
            (Self::ROW_NAMES[5], &self.torso_height),
        ]
    }
}

const ALL: [u8; NUM_JOINTS] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17];
/// Head, neck and arms.
const UPPER: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 14, 15, 16, 17];
/// Hips, knees, ankles.
const LOWER: [u8; 6] = [8, 9, 10, 11, 12, 13];
const LEFT: [u8; 8] = [5, 6, 7, 11, 12, 13, 15, 17];
const RIGHT: [u8; 8] = [2, 3, 4, 8, 9, 10, 14, 16];

/// Box area over the visible members; missing with fewer than two distinct
/// visible points.
fn box_area(f: &NormalizedFrame, set: &[u8]) -> Option<f64> {
    let mut pts = set.iter().filter_map(|&j| f[j as usize]);
    let first = pts.next()?;
    let (mut x0, mut x1, mut y0, mut y1) = (first[0], first[0], first[1], first[1]);
    let mut distinct = false;
    for p in pts {
        distinct |= p != first;
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    distinct.then(|| (x1 - x0) * (y1 - y0))
}

pub fn shape_features(nseq: &NormalizedSequence) -> ShapeFeatures {
    let map = |set: &[u8]| -> Series { nseq.frames.iter().map(|f| box_area(f, set)).collect() };
    ShapeFeatures {
        volume: map(&ALL),
        upper: map(&UPPER),
        lower: map(&LOWER),
        left: map(&LEFT),
        right: map(&RIGHT),
        torso_height: nseq
            .frames
            .iter()
            .map(|f| Some(dist(f[JointId::NECK.index()]?, pelvis(f)?)))
            .collect(),
    }
}
