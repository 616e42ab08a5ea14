//! Effort component: lagged finite differences of joint positions and of
//! limb-pair angles.

use super::{summarize, NormalizedSequence, Series, Summary};
use crate::skeleton::{JointId, LimbGraph};

/// Joint groups of the kinematic rows. Paired joints are averaged per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointGroup {
    Shoulders,
    Elbows,
    Hands,
    Hip,
    Knees,
    Feet,
}

impl JointGroup {
    pub const ALL: [JointGroup; 6] = [
        JointGroup::Shoulders,
        JointGroup::Elbows,
        JointGroup::Hands,
        JointGroup::Hip,
        JointGroup::Knees,
        JointGroup::Feet,
    ];

    pub fn joints(self) -> [JointId; 2] {
        use JointId as J;
        match self {
            JointGroup::Shoulders => [J::R_SHOULDER, J::L_SHOULDER],
            JointGroup::Elbows => [J::R_ELBOW, J::L_ELBOW],
            JointGroup::Hands => [J::R_WRIST, J::L_WRIST],
            JointGroup::Hip => [J::R_HIP, J::L_HIP],
            JointGroup::Knees => [J::R_KNEE, J::L_KNEE],
            JointGroup::Feet => [J::R_ANKLE, J::L_ANKLE],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            JointGroup::Shoulders => "shoulders",
            JointGroup::Elbows => "elbows",
            JointGroup::Hands => "hands",
            JointGroup::Hip => "hip",
            JointGroup::Knees => "knees",
            JointGroup::Feet => "feet",
        }
    }

    /// Feature codes for (velocity, acceleration, jerk).
    pub fn codes(self) -> [u8; 3] {
        match self {
            JointGroup::Shoulders => [29, 30, 31],
            JointGroup::Elbows => [32, 33, 34],
            JointGroup::Hands => [13, 16, 40],
            JointGroup::Hip => [12, 15, 18],
            JointGroup::Knees => [35, 36, 37],
            JointGroup::Feet => [14, 17, 41],
        }
    }
}

/// Speed, acceleration and jerk magnitudes per joint group, indexed like
/// [`JointGroup::ALL`]. Series have one entry per frame; the last `τ`, `2τ`
/// and `3τ` frames respectively are undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct JointKinematics {
    pub speed: [Series; 6],
    pub accel: [Series; 6],
    pub jerk: [Series; 6],
}

impl JointKinematics {
    pub fn row_names() -> Vec<String> {
        let mut out = Vec::with_capacity(18);
        for (k, kind) in ["velocity", "accel", "jerk"].iter().enumerate() {
            for g in JointGroup::ALL {
                out.push(format!("f{}_{}_{}", g.codes()[k], g.label(), kind));
            }
        }
        out
    }

    pub fn rows(&self) -> impl Iterator<Item = &Series> {
        self.speed.iter().chain(&self.accel).chain(&self.jerk)
    }

    pub fn group(&self, g: JointGroup) -> (&Series, &Series, &Series) {
        let i = JointGroup::ALL.iter().position(|&x| x == g).unwrap();
        (&self.speed[i], &self.accel[i], &self.jerk[i])
    }
}

fn lag_diff_vec(p: &[Option<[f64; 2]>], tau: usize) -> Vec<Option<[f64; 2]>> {
    let t = p.len();
    let k = tau as f64;
    (0..t)
        .map(|i| match (p.get(i + tau).copied().flatten(), p[i]) {
            (Some(b), Some(a)) if i + tau < t => Some([(b[0] - a[0]) / k, (b[1] - a[1]) / k]),
            _ => None,
        })
        .collect()
}

fn lag_diff_scalar(s: &[Option<f64>], tau: usize, out: &mut Vec<Option<f64>>) {
    let k = tau as f64;
    out.clear();
    out.extend((0..s.len()).map(|i| match (s.get(i + tau).copied().flatten(), s[i]) {
        (Some(b), Some(a)) => Some((b - a) / k),
        _ => None,
    }));
}

fn norm(v: Option<[f64; 2]>) -> Option<f64> {
    v.map(|v| v[0].hypot(v[1]))
}

/// v = (p(t+τ) − p(t))/τ, a = (v(t+τ) − v(t))/τ, j = (a(t+τ) − a(t))/τ,
/// reported as Euclidean magnitudes and averaged over each group's pair.
pub fn joint_kinematics(nseq: &NormalizedSequence, params: &super::KinematicParams) -> JointKinematics {
    let tau = params.tau.max(1);
    let per_joint = |j: JointId| {
        let p: Vec<Option<[f64; 2]>> = nseq.frames.iter().map(|f| f[j.index()]).collect();
        let v = lag_diff_vec(&p, tau);
        let a = lag_diff_vec(&v, tau);
        let jk = lag_diff_vec(&a, tau);
        let mags = |xs: &[Option<[f64; 2]>]| -> Series { xs.iter().map(|&x| norm(x)).collect() };
        [mags(&v), mags(&a), mags(&jk)]
    };
    let mean2 = |a: &Series, b: &Series| -> Series {
        a.iter().zip(b).map(|(x, y)| Some(0.5 * (x.as_ref()? + y.as_ref()?))).collect()
    };
    let mut speed: [Series; 6] = Default::default();
    let mut accel: [Series; 6] = Default::default();
    let mut jerk: [Series; 6] = Default::default();
    for (i, g) in JointGroup::ALL.iter().enumerate() {
        let [r, l] = g.joints();
        let (rk, lk) = (per_joint(r), per_joint(l));
        speed[i] = mean2(&rk[0], &lk[0]);
        accel[i] = mean2(&rk[1], &lk[1]);
        jerk[i] = mean2(&rk[2], &lk[2]);
    }
    JointKinematics { speed, accel, jerk }
}

/// Angle, angular velocity and angular acceleration for every unordered limb
/// pair, in [`LimbGraph::pairs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularKinematics {
    pub pairs: Vec<(usize, usize)>,
    pub theta: Vec<Series>,
    pub omega: Vec<Series>,
    pub alpha: Vec<Series>,
}

/// Unit direction of every limb per frame; `None` when an endpoint is
/// missing or the limb has zero length.
fn limb_directions(nseq: &NormalizedSequence, limbs: &LimbGraph) -> Vec<Vec<Option<[f64; 2]>>> {
    limbs
        .edges()
        .iter()
        .map(|&(i, j)| {
            nseq.frames
                .iter()
                .map(|f| {
                    let (a, b) = (f[i.index()]?, f[j.index()]?);
                    let d = [a[0] - b[0], a[1] - b[1]];
                    let n = d[0].hypot(d[1]);
                    (n > 0.0).then(|| [d[0] / n, d[1] / n])
                })
                .collect()
        })
        .collect()
}

fn pair_angles(u: &[Option<[f64; 2]>], w: &[Option<[f64; 2]>], out: &mut Vec<Option<f64>>) {
    out.clear();
    out.extend(u.iter().zip(w).map(|(a, b)| {
        let (a, b) = ((*a)?, (*b)?);
        let c = (a[0] * b[0] + a[1] * b[1]).clamp(-1.0, 1.0);
        Some(c.acos())
    }));
}

/// θ = arccos of the normalized dot product of the two limb vectors (clamped
/// to [−1, 1]); ω and α are τ-lag differences of θ and ω.
pub fn angular_kinematics(
    nseq: &NormalizedSequence,
    limbs: &LimbGraph,
    params: &super::KinematicParams,
) -> AngularKinematics {
    let tau = params.tau.max(1);
    let dirs = limb_directions(nseq, limbs);
    let pairs: Vec<_> = limbs.pairs().collect();
    let mut out = AngularKinematics {
        pairs: pairs.clone(),
        theta: Vec::with_capacity(pairs.len()),
        omega: Vec::with_capacity(pairs.len()),
        alpha: Vec::with_capacity(pairs.len()),
    };
    for &(a, b) in &pairs {
        let (mut th, mut om, mut al) = (Vec::new(), Vec::new(), Vec::new());
        pair_angles(&dirs[a], &dirs[b], &mut th);
        lag_diff_scalar(&th, tau, &mut om);
        lag_diff_scalar(&om, tau, &mut al);
        out.theta.push(th);
        out.omega.push(om);
        out.alpha.push(al);
    }
    out
}

/// Summaries of ω and α per limb pair without materializing every series.
pub(crate) fn angular_summaries(
    nseq: &NormalizedSequence,
    limbs: &LimbGraph,
    params: &super::KinematicParams,
) -> (Vec<Option<Summary>>, Vec<Option<Summary>>) {
    let tau = params.tau.max(1);
    let dirs = limb_directions(nseq, limbs);
    let n = limbs.pair_count();
    let (mut omega, mut alpha) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let t = nseq.len();
    let (mut th, mut om, mut al) = (Vec::with_capacity(t), Vec::with_capacity(t), Vec::with_capacity(t));
    for (a, b) in limbs.pairs() {
        pair_angles(&dirs[a], &dirs[b], &mut th);
        lag_diff_scalar(&th, tau, &mut om);
        lag_diff_scalar(&om, tau, &mut al);
        omega.push(summarize(&om));
        alpha.push(summarize(&al));
    }
    (omega, alpha)
}

#[cfg(test)]
mod tests {
    use super::super::{KinematicParams, NormalizedFrame};
    use super::*;
    use crate::skeleton::{default_limb_graph, NUM_JOINTS};

    fn moving(f: impl Fn(f64) -> [f64; 2], frames: usize) -> NormalizedSequence {
        let frames = (0..frames)
            .map(|t| {
                let mut fr: NormalizedFrame = [None; NUM_JOINTS];
                let p = f(t as f64);
                for g in JointGroup::ALL {
                    for j in g.joints() {
                        fr[j.index()] = Some(p);
                    }
                }
                fr
            })
            .collect();
        NormalizedSequence { frames, scale: 1.0, visible_pairs: 1 }
    }

    #[test]
    fn stationary_pose_has_zero_kinematics() {
        let k = joint_kinematics(&moving(|_| [2.0, 3.0], 60), &KinematicParams::default());
        for s in k.rows() {
            assert!(s.iter().flatten().all(|&v| v == 0.0));
            assert_eq!(s.iter().flatten().count() > 0, true);
        }
    }

    #[test]
    fn uniform_motion_unit_speed() {
        let k = joint_kinematics(&moving(|t| [t, 0.0], 60), &KinematicParams::default());
        let (v, a, j) = k.group(JointGroup::Hands);
        assert_eq!(v.iter().flatten().count(), 45);
        assert!(v.iter().flatten().all(|&x| (x - 1.0).abs() < 1e-12));
        assert_eq!(a.iter().flatten().count(), 30);
        assert!(a.iter().flatten().all(|&x| x.abs() < 1e-12));
        assert_eq!(j.iter().flatten().count(), 15);
        assert!(v[45].is_none() && a[30].is_none() && j[15].is_none());
    }

    #[test]
    fn quadratic_motion_matches_difference_algebra() {
        let k = joint_kinematics(&moving(|t| [t * t, 0.0], 80), &KinematicParams { tau: 15 });
        let (v, a, j) = k.group(JointGroup::Feet);
        for (t, x) in v.iter().enumerate().filter_map(|(t, x)| x.map(|x| (t, x))) {
            // ((t+15)^2 - t^2) / 15 = 2t + 15
            assert!((x - (2.0 * t as f64 + 15.0)).abs() < 1e-9, "t={t}");
        }
        assert!(a.iter().flatten().all(|&x| (x - 2.0).abs() < 1e-9));
        assert!(j.iter().flatten().all(|&x| x.abs() < 1e-9));
    }

    #[test]
    fn missing_dependency_propagates() {
        let mut n = moving(|t| [t, 0.0], 40);
        n.frames[20][JointId::L_WRIST.index()] = None;
        let k = joint_kinematics(&n, &KinematicParams { tau: 5 });
        let (v, _, _) = k.group(JointGroup::Hands);
        assert!(v[20].is_none() && v[15].is_none());
        assert!(v[14].is_some() && v[21].is_some());
        let (vs, _, _) = k.group(JointGroup::Shoulders);
        assert!(vs[20].is_some());
    }

    fn two_limb_frame(u: [f64; 2], w: [f64; 2]) -> NormalizedFrame {
        // limb 0 of the default graph is neck-nose, limb 1 is neck-rsho
        let mut fr: NormalizedFrame = [None; NUM_JOINTS];
        fr[JointId::NOSE.index()] = Some([0.0, 0.0]);
        fr[JointId::NECK.index()] = Some(u);
        fr[JointId::R_SHOULDER.index()] = Some([u[0] - w[0], u[1] - w[1]]);
        fr
    }

    fn theta_of(u: [f64; 2], w: [f64; 2]) -> f64 {
        let nseq = NormalizedSequence { frames: vec![two_limb_frame(u, w); 2], scale: 1.0, visible_pairs: 1 };
        let ak = angular_kinematics(&nseq, &default_limb_graph(), &KinematicParams { tau: 1 });
        assert_eq!(ak.pairs[0], (0, 1));
        ak.theta[0][0].unwrap()
    }

    #[test]
    fn angle_cases() {
        use std::f64::consts::{FRAC_PI_2, PI};
        // neck-nose vector = neck - nose = u; neck-rsho vector = neck - rsho = w
        assert!((theta_of([1.0, 0.0], [0.0, 2.0]) - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(theta_of([1.0, 1.0], [3.0, 3.0]), 0.0);
        assert!((theta_of([1.0, 1.0], [-3.0, -3.0]) - PI).abs() < 1e-7);
    }

    #[test]
    fn zero_length_limb_is_missing() {
        let nseq = NormalizedSequence {
            frames: vec![two_limb_frame([0.0, 0.0], [1.0, 0.0]); 3],
            scale: 1.0,
            visible_pairs: 1,
        };
        let ak = angular_kinematics(&nseq, &default_limb_graph(), &KinematicParams { tau: 1 });
        assert!(ak.theta[0].iter().all(Option::is_none));
    }

    #[test]
    fn rotating_limb_angular_velocity() {
        let rate = 0.01;
        let frames = (0..120)
            .map(|t| {
                let phi = 0.3 + rate * t as f64;
                two_limb_frame([phi.cos(), phi.sin()], [1.0, 0.0])
            })
            .collect();
        let nseq = NormalizedSequence { frames, scale: 1.0, visible_pairs: 1 };
        let ak = angular_kinematics(&nseq, &default_limb_graph(), &KinematicParams { tau: 15 });
        let om: Vec<f64> = ak.omega[0].iter().flatten().copied().collect();
        assert_eq!(om.len(), 105);
        assert!(om.iter().all(|w| (w - rate).abs() < 1e-9));
        assert!(ak.alpha[0].iter().flatten().all(|a| a.abs() < 1e-9));
        let (os, als) = angular_summaries(&nseq, &default_limb_graph(), &KinematicParams { tau: 15 });
        assert_eq!(os[0], summarize(&ak.omega[0]));
        assert_eq!(als[0], summarize(&ak.alpha[0]));
    }
}
