use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{cell_rng, SimError};
use crate::skeleton::{default_limb_graph, Frame, JointId, Keypoint, Pose, SkeletonSequence, NUM_JOINTS};

/// Upright pose in body units (image axes, y down), indexed by joint.
const BASE_POSE: [[f64; 2]; NUM_JOINTS] = [
    [0.0, -1.6],
    [0.0, -1.2],
    [-0.5, -1.2],
    [-0.6, -0.6],
    [-0.65, -0.05],
    [0.5, -1.2],
    [0.6, -0.6],
    [0.65, -0.05],
    [-0.3, 0.0],
    [-0.32, 0.8],
    [-0.33, 1.6],
    [0.3, 0.0],
    [0.32, 0.8],
    [0.33, 1.6],
    [-0.08, -1.68],
    [0.08, -1.68],
    [-0.18, -1.62],
    [0.18, -1.62],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionKind {
    Stationary,
    /// `p(t) = p₀ + v t` (pixels per frame).
    Uniform { velocity: [f64; 2] },
    /// `p(t) = p₀ + v t + a t² / 2`.
    Quadratic { velocity: [f64; 2], accel: [f64; 2] },
    /// Rotation by `ω t` radians about the pivot joint's current position.
    Rotation { omega: f64, pivot: JointId },
    /// `p(t) = p₀ + A sin(2π t / period)`.
    Oscillation { amplitude: [f64; 2], period: f64 },
    /// Gaussian random walk with per-frame step deviation `step`.
    Random { step: f64 },
    /// Components applied in order.
    Composite { parts: Vec<MotionKind> },
}

impl MotionKind {
    fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Spec(m.to_string()));
        match self {
            MotionKind::Uniform { velocity } if velocity.iter().any(|v| !v.is_finite()) => bad("non-finite velocity"),
            MotionKind::Quadratic { velocity, accel } if velocity.iter().chain(accel).any(|v| !v.is_finite()) => {
                bad("non-finite velocity or acceleration")
            }
            MotionKind::Rotation { omega, .. } if !omega.is_finite() => bad("non-finite angular speed"),
            MotionKind::Oscillation { period, .. } if !(*period > 0.0) => bad("oscillation period must be positive"),
            MotionKind::Random { step } if !(*step >= 0.0 && step.is_finite()) => bad("random step must be >= 0"),
            MotionKind::Composite { parts } => parts.iter().try_for_each(MotionKind::check),
            _ => Ok(()),
        }
    }

    fn random_nodes(&self) -> usize {
        match self {
            MotionKind::Random { .. } => 1,
            MotionKind::Composite { parts } => parts.iter().map(MotionKind::random_nodes).sum(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub instance_id: String,
    pub movie_id: String,
    pub kind: MotionKind,
    pub frames: usize,
    pub fps: f64,
    /// Joints the motion applies to; all joints when empty.
    #[serde(default)]
    pub joints: Vec<JointId>,
    /// Joints that are never visible.
    #[serde(default)]
    pub hidden: Vec<JointId>,
    /// Probability that a visible joint drops out of a single frame.
    #[serde(default)]
    pub dropout: f64,
    /// Mean length of the default limbs in the rest pose, in pixels.
    pub scale: f64,
    /// Rest position of the pose centre.
    pub origin: [f64; 2],
    /// Standard deviation of a per-joint perturbation of the rest pose, in
    /// body units.
    #[serde(default)]
    pub jitter: f64,
}

impl MotionSpec {
    pub fn new(kind: MotionKind, frames: usize) -> Self {
        MotionSpec {
            instance_id: "sim/inst0".into(),
            movie_id: "sim".into(),
            kind,
            frames,
            fps: 30.0,
            joints: Vec::new(),
            hidden: Vec::new(),
            dropout: 0.0,
            scale: 1.0,
            origin: [0.0, 0.0],
            jitter: 0.0,
        }
    }

    fn check(&self) -> Result<(), SimError> {
        if self.frames == 0 {
            return Err(SimError::Spec("frames must be positive".into()));
        }
        if !(self.fps > 0.0) || !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(SimError::Spec("fps and scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SimError::Spec(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.jitter >= 0.0) {
            return Err(SimError::Spec("jitter must be >= 0".into()));
        }
        self.kind.check()
    }
}

/// Rest pose scaled so its mean default-limb length is `scale` and centred
/// on `origin`.
pub fn rest_pose(scale: f64, origin: [f64; 2]) -> [[f64; 2]; NUM_JOINTS] {
    let limbs = default_limb_graph();
    let mean = limbs
        .edges()
        .iter()
        .map(|&(a, b)| {
            let (p, q) = (BASE_POSE[a.index()], BASE_POSE[b.index()]);
            (p[0] - q[0]).hypot(p[1] - q[1])
        })
        .sum::<f64>()
        / limbs.len() as f64;
    let k = scale / mean;
    BASE_POSE.map(|p| [origin[0] + k * p[0], origin[1] + k * p[1]])
}

fn apply(kind: &MotionKind, pos: &mut [[f64; 2]; NUM_JOINTS], moving: &[bool; NUM_JOINTS], t: usize, walks: &[Vec<[f64; 2]>], next_walk: &mut usize) {
    let tf = t as f64;
    let shift = |pos: &mut [[f64; 2]; NUM_JOINTS], d: [f64; 2]| {
        for (p, _) in pos.iter_mut().zip(moving).filter(|(_, m)| **m) {
            p[0] += d[0];
            p[1] += d[1];
        }
    };
    match kind {
        MotionKind::Stationary => {}
        MotionKind::Uniform { velocity } => shift(pos, [velocity[0] * tf, velocity[1] * tf]),
        MotionKind::Quadratic { velocity, accel } => shift(
            pos,
            [velocity[0] * tf + 0.5 * accel[0] * tf * tf, velocity[1] * tf + 0.5 * accel[1] * tf * tf],
        ),
        MotionKind::Rotation { omega, pivot } => {
            let c = pos[pivot.index()];
            let (s, co) = (omega * tf).sin_cos();
            for (j, p) in pos.iter_mut().enumerate() {
                if moving[j] && j != pivot.index() {
                    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
                    *p = [c[0] + co * dx - s * dy, c[1] + s * dx + co * dy];
                }
            }
        }
        MotionKind::Oscillation { amplitude, period } => {
            let s = (TAU * tf / period).sin();
            shift(pos, [amplitude[0] * s, amplitude[1] * s]);
        }
        MotionKind::Random { .. } => {
            let w = walks[*next_walk][t];
            *next_walk += 1;
            shift(pos, w);
        }
        MotionKind::Composite { parts } => {
            for p in parts {
                apply(p, pos, moving, t, walks, next_walk);
            }
        }
    }
}

fn collect_steps(kind: &MotionKind, out: &mut Vec<f64>) {
    match kind {
        MotionKind::Random { step } => out.push(*step),
        MotionKind::Composite { parts } => parts.iter().for_each(|p| collect_steps(p, out)),
        _ => {}
    }
}

/// Renders `spec` into a sequence. Positions are closed-form functions of the
/// frame index except for random walks, which are drawn from `seed`.
pub fn gen_skeletons(spec: &MotionSpec, seed: u64) -> Result<SkeletonSequence, SimError> {
    spec.check()?;
    let mut rest = rest_pose(spec.scale, spec.origin);
    if spec.jitter > 0.0 {
        let mut rng = cell_rng(seed, 0x6a69_7474, 0);
        let n = Normal::new(0.0, spec.jitter * spec.scale).expect("jitter > 0");
        for p in rest.iter_mut() {
            p[0] += n.sample(&mut rng);
            p[1] += n.sample(&mut rng);
        }
    }
    let mut moving = [spec.joints.is_empty(); NUM_JOINTS];
    for j in &spec.joints {
        moving[j.index()] = true;
    }
    let mut steps = Vec::with_capacity(spec.kind.random_nodes());
    collect_steps(&spec.kind, &mut steps);
    let walks: Vec<Vec<[f64; 2]>> = steps
        .iter()
        .enumerate()
        .map(|(k, &step)| {
            let mut rng = cell_rng(seed, 0x7761_6c6b, k as u64);
            let mut acc = [0.0, 0.0];
            (0..spec.frames)
                .map(|t| {
                    if t > 0 && step > 0.0 {
                        let n = Normal::new(0.0, step).expect("step > 0");
                        acc[0] += n.sample(&mut rng);
                        acc[1] += n.sample(&mut rng);
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let mut drop_rng = cell_rng(seed, 0x6472_6f70, 0);
    let frames = (0..spec.frames)
        .map(|t| {
            let mut pos = rest;
            let mut next_walk = 0;
            apply(&spec.kind, &mut pos, &moving, t, &walks, &mut next_walk);
            let mut pose = Pose::empty();
            for j in JointId::all() {
                let hidden = spec.hidden.contains(&j);
                let dropped = spec.dropout > 0.0 && drop_rng.random::<f64>() < spec.dropout;
                if !hidden && !dropped {
                    let p = pos[j.index()];
                    pose.set(j, Keypoint::visible(p[0], p[1]));
                }
            }
            Frame { t: t as u64, pose }
        })
        .collect();
    SkeletonSequence::new(spec.instance_id.clone(), spec.movie_id.clone(), spec.fps, frames)
        .map_err(|e| SimError::Spec(e.to_string()))
}

/// A varied random spec: jittered rest pose, a composite of translation,
/// limb rotation, hand oscillation and a random walk, sporadic dropout.
pub fn random_motion_spec(index: usize, frames: usize, seed: u64) -> MotionSpec {
    let mut rng = cell_rng(seed, 0x7370_6563, index as u64);
    let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let scale = r(20.0, 120.0);
    let kind = MotionKind::Composite {
        parts: vec![
            MotionKind::Rotation { omega: r(-0.05, 0.05), pivot: JointId::R_ELBOW },
            MotionKind::Oscillation { amplitude: [r(0.0, 0.3) * scale, r(0.0, 0.3) * scale], period: r(10.0, 90.0) },
            MotionKind::Quadratic {
                velocity: [r(-1.0, 1.0), r(-1.0, 1.0)],
                accel: [r(-0.01, 0.01), r(-0.01, 0.01)],
            },
            MotionKind::Random { step: r(0.0, 0.02) * scale },
        ],
    };
    let dropout = r(0.0, 0.05);
    let origin = [r(200.0, 1000.0), r(200.0, 600.0)];
    MotionSpec {
        instance_id: format!("sim{:03}/inst{index:05}", index % 50),
        movie_id: format!("sim{:03}", index % 50),
        kind,
        frames,
        fps: 30.0,
        joints: Vec::new(),
        hidden: Vec::new(),
        dropout,
        scale,
        origin,
        jitter: 0.05,
    }
}
