//! 2D skeleton sequences: keypoint model, JSON-lines I/O, ingestion filters and
//! the limb graph used by the angular features.
//!
//! Joint indices follow the 18-keypoint COCO layout emitted by common
//! bottom-up pose estimators:
//!
//! | idx | joint      | idx | joint     |
//! |-----|------------|-----|-----------|
//! | 0   | nose       | 9   | R knee    |
//! | 1   | neck       | 10  | R ankle   |
//! | 2   | R shoulder | 11  | L hip     |
//! | 3   | R elbow    | 12  | L knee    |
//! | 4   | R wrist    | 13  | L ankle   |
//! | 5   | L shoulder | 14  | R eye     |
//! | 6   | L elbow    | 15  | L eye     |
//! | 7   | L wrist    | 16  | R ear     |
//! | 8   | R hip      | 17  | L ear     |

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

pub const NUM_JOINTS: usize = 18;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate instance_id `{instance_id}`")]
    DuplicateInstance { line: usize, instance_id: String },
    #[error("invalid sequence `{instance_id}`: {message}")]
    InvalidSequence { instance_id: String, message: String },
    #[error("invalid limb graph: {0}")]
    InvalidLimbGraph(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Index of one of the 18 body keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointId(u8);

const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose", "neck", "rsho", "relb", "rwri", "lsho", "lelb", "lwri", "rhip", "rkne", "rank",
    "lhip", "lkne", "lank", "reye", "leye", "rear", "lear",
];

impl JointId {
    pub const NOSE: JointId = JointId(0);
    pub const NECK: JointId = JointId(1);
    pub const R_SHOULDER: JointId = JointId(2);
    pub const R_ELBOW: JointId = JointId(3);
    pub const R_WRIST: JointId = JointId(4);
    pub const L_SHOULDER: JointId = JointId(5);
    pub const L_ELBOW: JointId = JointId(6);
    pub const L_WRIST: JointId = JointId(7);
    pub const R_HIP: JointId = JointId(8);
    pub const R_KNEE: JointId = JointId(9);
    pub const R_ANKLE: JointId = JointId(10);
    pub const L_HIP: JointId = JointId(11);
    pub const L_KNEE: JointId = JointId(12);
    pub const L_ANKLE: JointId = JointId(13);
    pub const R_EYE: JointId = JointId(14);
    pub const L_EYE: JointId = JointId(15);
    pub const R_EAR: JointId = JointId(16);
    pub const L_EAR: JointId = JointId(17);

    /// Wrists, elbows and shoulders of both sides.
    pub const UPPER_BODY_LANDMARKS: [JointId; 6] = [
        JointId::R_SHOULDER,
        JointId::R_ELBOW,
        JointId::R_WRIST,
        JointId::L_SHOULDER,
        JointId::L_ELBOW,
        JointId::L_WRIST,
    ];

    pub fn new(index: usize) -> Option<Self> {
        (index < NUM_JOINTS).then_some(JointId(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Short lowercase name, e.g. `rwri`.
    pub fn name(self) -> &'static str {
        JOINT_NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        JOINT_NAMES.iter().position(|n| *n == name).map(|i| JointId(i as u8))
    }

    pub fn all() -> impl Iterator<Item = JointId> {
        (0..NUM_JOINTS as u8).map(JointId)
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn visible(x: f64, y: f64) -> Self {
        Keypoint { x, y, visible: true }
    }

    pub const MISSING: Keypoint = Keypoint { x: 0.0, y: 0.0, visible: false };

    pub fn position(&self) -> Option<[f64; 2]> {
        self.visible.then_some([self.x, self.y])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub joints: [Keypoint; NUM_JOINTS],
}

impl Pose {
    pub fn empty() -> Self {
        Pose { joints: [Keypoint::MISSING; NUM_JOINTS] }
    }

    pub fn get(&self, j: JointId) -> &Keypoint {
        &self.joints[j.index()]
    }

    pub fn set(&mut self, j: JointId, kp: Keypoint) {
        self.joints[j.index()] = kp;
    }

    pub fn any_visible(&self) -> bool {
        self.joints.iter().any(|k| k.visible)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Frame index within the source clip.
    pub t: u64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub instance_id: String,
    pub movie_id: String,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl SkeletonSequence {
    /// Builds a sequence, checking the structural invariants (non-empty,
    /// strictly increasing frame indices, positive fps, finite visible
    /// coordinates).
    pub fn new(
        instance_id: impl Into<String>,
        movie_id: impl Into<String>,
        fps: f64,
        frames: Vec<Frame>,
    ) -> Result<Self, SkeletonError> {
        let seq = SkeletonSequence {
            instance_id: instance_id.into(),
            movie_id: movie_id.into(),
            fps,
            frames,
        };
        seq.check()?;
        Ok(seq)
    }

    fn check(&self) -> Result<(), SkeletonError> {
        let fail = |message: &str| SkeletonError::InvalidSequence {
            instance_id: self.instance_id.clone(),
            message: message.to_string(),
        };
        if self.frames.is_empty() {
            return Err(fail("no frames"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(fail("fps must be positive"));
        }
        if self.frames.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(fail("frame indices must be strictly increasing"));
        }
        let bad = self
            .frames
            .iter()
            .flat_map(|f| f.pose.joints.iter())
            .any(|k| k.visible && !(k.x.is_finite() && k.y.is_finite()));
        if bad {
            return Err(fail("visible joint with non-finite coordinate"));
        }
        Ok(())
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Applies `f` to every visible coordinate.
    pub fn map_coords(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> SkeletonSequence {
        let mut out = self.clone();
        for frame in &mut out.frames {
            for kp in frame.pose.joints.iter_mut().filter(|k| k.visible) {
                let (x, y) = f(kp.x, kp.y);
                kp.x = x;
                kp.y = y;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// JSON-lines wire format

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    instance_id: String,
    movie_id: String,
    fps: f64,
    frames: Vec<FrameWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameWire {
    t: u64,
    joints: Vec<[f64; 3]>,
}

fn decode_record(line: &str, line_no: usize) -> Result<SkeletonSequence, SkeletonError> {
    let parse_err = |message: String| SkeletonError::Parse { line: line_no, message };
    let wire: RecordWire = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let mut frames = Vec::with_capacity(wire.frames.len());
    for fw in wire.frames {
        if fw.joints.len() != NUM_JOINTS {
            return Err(parse_err(format!(
                "frame {} has {} joints, expected {NUM_JOINTS}",
                fw.t,
                fw.joints.len()
            )));
        }
        let mut pose = Pose::empty();
        for (slot, &[x, y, conf]) in pose.joints.iter_mut().zip(&fw.joints) {
            if conf > 0.0 {
                *slot = Keypoint::visible(x, y);
            }
        }
        frames.push(Frame { t: fw.t, pose });
    }
    SkeletonSequence::new(wire.instance_id, wire.movie_id, wire.fps, frames)
        .map_err(|e| parse_err(e.to_string()))
}

/// Parses a JSON-lines skeleton stream, one record per non-blank line.
///
/// Records are decoded in parallel; the result keeps input order. A repeated
/// `instance_id` is rejected at the line of its second occurrence.
pub fn parse_skeleton_stream<R: BufRead>(reader: R) -> Result<Vec<SkeletonSequence>, SkeletonError> {
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    let decoded = par::map(&lines, |(no, l)| decode_record(l, *no));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(decoded.len());
    for ((line_no, _), rec) in lines.iter().zip(decoded) {
        let seq = rec?;
        if !seen.insert(seq.instance_id.clone()) {
            return Err(SkeletonError::DuplicateInstance {
                line: *line_no,
                instance_id: seq.instance_id,
            });
        }
        out.push(seq);
    }
    Ok(out)
}

/// Writes sequences in the JSON-lines format read by [`parse_skeleton_stream`].
/// Visible joints get confidence 1, missing joints `[0, 0, 0]`.
pub fn write_skeleton_stream<W: Write>(seqs: &[SkeletonSequence], mut w: W) -> Result<(), SkeletonError> {
    for seq in seqs {
        let wire = RecordWire {
            instance_id: seq.instance_id.clone(),
            movie_id: seq.movie_id.clone(),
            fps: seq.fps,
            frames: seq
                .frames
                .iter()
                .map(|f| FrameWire {
                    t: f.t,
                    joints: f
                        .pose
                        .joints
                        .iter()
                        .map(|k| if k.visible { [k.x, k.y, 1.0] } else { [0.0, 0.0, 0.0] })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &wire).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ingestion filters

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationConfig {
    pub min_frames: usize,
    pub max_frames: usize,
    /// Minimum fraction of frames in which at least one joint is visible.
    pub min_coverage: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { min_frames: 100, max_frames: 300, min_coverage: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    /// Fewer than three of the six upper-body landmarks were ever visible.
    TooFewLandmarks { visible: usize },
    FrameCount { frames: usize, min: usize, max: usize },
    LowCoverage { coverage: f64, min: f64 },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::TooFewLandmarks { visible } => {
                write!(f, "landmarks: only {visible} of 6 upper-body landmarks visible")
            }
            RejectReason::FrameCount { frames, min, max } => {
                write!(f, "frame-count: {frames} frames outside [{min}, {max}]")
            }
            RejectReason::LowCoverage { coverage, min } => {
                write!(f, "coverage: {coverage:.3} below {min}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Reject(Vec<RejectReason>),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

pub fn validate_instance(seq: &SkeletonSequence, cfg: &ValidationConfig) -> Verdict {
    let mut reasons = Vec::new();

    let landmarks = JointId::UPPER_BODY_LANDMARKS
        .iter()
        .filter(|&&j| seq.frames.iter().any(|f| f.pose.get(j).visible))
        .count();
    if landmarks < 3 {
        reasons.push(RejectReason::TooFewLandmarks { visible: landmarks });
    }

    let t = seq.len();
    if t < cfg.min_frames || t > cfg.max_frames {
        reasons.push(RejectReason::FrameCount { frames: t, min: cfg.min_frames, max: cfg.max_frames });
    }

    let covered = seq.frames.iter().filter(|f| f.pose.any_visible()).count();
    let coverage = if t == 0 { 0.0 } else { covered as f64 / t as f64 };
    if coverage < cfg.min_coverage {
        reasons.push(RejectReason::LowCoverage { coverage, min: cfg.min_coverage });
    }

    if reasons.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Reject(reasons)
    }
}

// ---------------------------------------------------------------------------
// Limb graph

/// Undirected limb set. Angular features are computed for every unordered
/// pair of limbs, so `C(len, 2)` pairs exist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LimbGraph {
    edges: Vec<(JointId, JointId)>,
}

impl LimbGraph {
    pub fn new(edges: Vec<(JointId, JointId)>) -> Result<Self, SkeletonError> {
        let mut seen = HashSet::new();
        for &(a, b) in &edges {
            if a == b {
                return Err(SkeletonError::InvalidLimbGraph(format!("self-loop at {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(SkeletonError::InvalidLimbGraph(format!("duplicate edge {a}-{b}")));
            }
        }
        if edges.len() < 2 {
            return Err(SkeletonError::InvalidLimbGraph("need at least two limbs".into()));
        }
        Ok(LimbGraph { edges })
    }

    /// Parses one edge per line as two joint indices or names separated by
    /// whitespace, `-` or `,`. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, SkeletonError> {
        let joint = |tok: &str, line: usize| -> Result<JointId, SkeletonError> {
            tok.parse::<usize>()
                .ok()
                .and_then(JointId::new)
                .or_else(|| JointId::from_name(tok))
                .ok_or_else(|| SkeletonError::Parse { line, message: format!("unknown joint `{tok}`") })
        };
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == '-' || c == ',')
                .filter(|s| !s.is_empty())
                .collect();
            if toks.len() != 2 {
                return Err(SkeletonError::Parse { line: i + 1, message: "expected two joints".into() });
            }
            edges.push((joint(toks[0], i + 1)?, joint(toks[1], i + 1)?));
        }
        LimbGraph::new(edges)
    }

    pub fn edges(&self) -> &[(JointId, JointId)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Number of unordered limb pairs.
    pub fn pair_count(&self) -> usize {
        let n = self.edges.len();
        n * (n - 1) / 2
    }

    /// Unordered limb pairs `(a, b)`, `a < b`, in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.edges.len();
        (0..n).flat_map(move |a| (a + 1..n).map(move |b| (a, b)))
    }

    pub fn edge_name(&self, e: usize) -> String {
        let (a, b) = self.edges[e];
        format!("{a}-{b}")
    }
}

impl Default for LimbGraph {
    fn default() -> Self {
        default_limb_graph()
    }
}

/// The 17 natural bones of the 18-keypoint model followed by 6 cross-body
/// edges, 23 limbs in total.
pub fn default_limb_graph() -> LimbGraph {
    use JointId as J;
    let edges = vec![
        // torso and limbs
        (J::NECK, J::NOSE),
        (J::NECK, J::R_SHOULDER),
        (J::NECK, J::L_SHOULDER),
        (J::R_SHOULDER, J::R_ELBOW),
        (J::R_ELBOW, J::R_WRIST),
        (J::L_SHOULDER, J::L_ELBOW),
        (J::L_ELBOW, J::L_WRIST),
        (J::NECK, J::R_HIP),
        (J::NECK, J::L_HIP),
        (J::R_HIP, J::R_KNEE),
        (J::R_KNEE, J::R_ANKLE),
        (J::L_HIP, J::L_KNEE),
        (J::L_KNEE, J::L_ANKLE),
        // face
        (J::NOSE, J::R_EYE),
        (J::NOSE, J::L_EYE),
        (J::R_EYE, J::R_EAR),
        (J::L_EYE, J::L_EAR),
        // cross-body
        (J::R_SHOULDER, J::L_SHOULDER),
        (J::R_HIP, J::L_HIP),
        (J::R_WRIST, J::L_WRIST),
        (J::R_ANKLE, J::L_ANKLE),
        (J::R_SHOULDER, J::R_HIP),
        (J::L_SHOULDER, J::L_HIP),
    ];
    LimbGraph::new(edges).expect("default limb graph is well-formed")
}
