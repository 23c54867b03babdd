//! Hand-to-gripper mapping: recovers a parallel-gripper contact orientation
//! from a 21-joint hand skeleton and object evidence.
//!
//! The gripper frame convention: the closing axis `x_g` runs between the two
//! force-applying fingertips, the approach axis `z_g` is the negated palm
//! normal orthogonalized against `x_g`, and `y_g = z_g x x_g` completes a
//! right-handed frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Quaternion};

/// Fixed joint ordering for the 21-keypoint skeleton.
///
/// 0 wrist; 1-4 thumb CMC, MCP, IP, TIP; then MCP, PIP, DIP, TIP for
/// index (5-8), middle (9-12), ring (13-16), pinky (17-20).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Joint {
    Wrist = 0,
    ThumbCmc = 1,
    ThumbMcp = 2,
    ThumbIp = 3,
    ThumbTip = 4,
    IndexMcp = 5,
    IndexPip = 6,
    IndexDip = 7,
    IndexTip = 8,
    MiddleMcp = 9,
    MiddlePip = 10,
    MiddleDip = 11,
    MiddleTip = 12,
    RingMcp = 13,
    RingPip = 14,
    RingDip = 15,
    RingTip = 16,
    PinkyMcp = 17,
    PinkyPip = 18,
    PinkyDip = 19,
    PinkyTip = 20,
}

pub const NUM_JOINTS: usize = 21;

/// Largest plausible distance between any two joints of one hand, meters.
pub const MAX_HAND_SPAN_M: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum GripError {
    #[error("hand keypoints implausible: {0}")]
    BadHand(&'static str),
    #[error("palm joints are within 1e-6 m of collinear")]
    DegeneratePalm,
    #[error("palm normal orientation ambiguous: object centroid lies in the palm plane")]
    AmbiguousOrientation,
    #[error("no object points supplied")]
    NoObjectPoints,
    #[error("fingertips coincide; inter-finger vector undefined")]
    DegenerateVfp,
    #[error("inter-finger vector within 5 degrees of the palm normal")]
    ParallelAxes,
}

/// 21 joints in the camera frame, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandKeypoints {
    joints: [Point3; NUM_JOINTS],
}

impl HandKeypoints {
    pub fn new(joints: [Point3; NUM_JOINTS]) -> Result<Self, GripError> {
        if joints.iter().any(|j| !j.is_finite()) {
            return Err(GripError::BadHand("non-finite joint"));
        }
        for i in 0..NUM_JOINTS {
            for j in (i + 1)..NUM_JOINTS {
                if joints[i].sub(&joints[j]).norm() >= MAX_HAND_SPAN_M {
                    return Err(GripError::BadHand("joint pair exceeds plausible hand span"));
                }
            }
        }
        Ok(Self { joints })
    }

    pub fn joint(&self, j: Joint) -> Point3 {
        self.joints[j as usize]
    }

    pub fn joints(&self) -> &[Point3; NUM_JOINTS] {
        &self.joints
    }

    /// Wrist plus the four finger MCPs: the skeleton's stand-in for the palm.
    pub fn palm_points(&self) -> [Point3; 5] {
        [
            self.joint(Joint::Wrist),
            self.joint(Joint::IndexMcp),
            self.joint(Joint::MiddleMcp),
            self.joint(Joint::RingMcp),
            self.joint(Joint::PinkyMcp),
        ]
    }
}

/// Which thumb-opposing pair applies the grasp force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FingerPairId {
    ThumbIndex,
    ThumbMiddle,
}

/// Selected force-applying pair; `tip_a` is always the thumb tip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerPair {
    pub pair_id: FingerPairId,
    pub tip_a: Point3,
    pub tip_b: Point3,
    pub score: f64,
}

impl FingerPair {
    /// Inter-finger vector, thumb tip to opposing tip.
    pub fn v_fp(&self) -> Point3 {
        self.tip_b.sub(&self.tip_a)
    }
}

/// Least-squares palm plane, normal oriented toward the object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PalmFrame {
    pub normal: Point3,
    pub centroid: Point3,
    pub rms_fit_error: f64,
}

/// Scoring constants for [`select_finger_pair`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripConfig {
    /// Length scale of the fingertip-distance term, meters.
    pub sigma_d: f64,
    /// Radius around the fingertip segment that counts as "near", meters.
    pub contact_radius: f64,
    /// Weight of the object-proximity term.
    pub lambda: f64,
}

impl Default for GripConfig {
    fn default() -> Self {
        Self { sigma_d: 0.05, contact_radius: 0.03, lambda: 1.0 }
    }
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues ascending, matching unit eigenvectors as columns).
fn symmetric_eigen_3x3(m: &[[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            rot[p][p] = c;
            rot[q][q] = c;
            rot[p][q] = s;
            rot[q][p] = -s;
            // a = rot^T a rot; v = v rot
            let mut tmp = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    tmp[i][j] = (0..3).map(|k| a[i][k] * rot[k][j]).sum();
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] = (0..3).map(|k| rot[k][i] * tmp[k][j]).sum();
                }
            }
            let mut vt = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    vt[i][j] = (0..3).map(|k| v[i][k] * rot[k][j]).sum();
                }
            }
            v = vt;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
    let evals = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut evecs = [[0.0; 3]; 3];
    for (col, &idx) in order.iter().enumerate() {
        for row in 0..3 {
            evecs[row][col] = v[row][idx];
        }
    }
    (evals, evecs)
}

/// Fits the palm plane through wrist + four MCPs and orients its normal
/// toward the object centroid.
pub fn fit_palm_plane(
    hand: &HandKeypoints,
    object_centroid: &Point3,
) -> Result<PalmFrame, GripError> {
    let pts = hand.palm_points();
    let n = pts.len() as f64;
    let centroid = pts
        .iter()
        .fold(Point3::ZERO, |acc, p| acc.add(p))
        .scale(1.0 / n);
    let mut scatter = [[0.0f64; 3]; 3];
    for p in &pts {
        let d = p.sub(&centroid);
        let dv = [d.x, d.y, d.z];
        for i in 0..3 {
            for j in 0..3 {
                scatter[i][j] += dv[i] * dv[j];
            }
        }
    }
    let (evals, evecs) = symmetric_eigen_3x3(&scatter);
    // Collinear points leave no spread along the second principal axis.
    let second_axis_rms = (evals[1].max(0.0) / n).sqrt();
    if second_axis_rms < 1e-6 {
        return Err(GripError::DegeneratePalm);
    }
    let mut normal = Point3::new(evecs[0][0], evecs[1][0], evecs[2][0]);
    normal = normal.normalized().ok_or(GripError::DegeneratePalm)?;
    let toward_object = object_centroid.sub(&centroid);
    let side = normal.dot(&toward_object);
    if side.abs() < 1e-9 {
        return Err(GripError::AmbiguousOrientation);
    }
    if side < 0.0 {
        normal = normal.scale(-1.0);
    }
    let rms_fit_error = (evals[0].max(0.0) / n).sqrt();
    Ok(PalmFrame { normal, centroid, rms_fit_error })
}

fn point_segment_dist(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(&ab);
    if len2 < 1e-18 {
        return p.sub(a).norm();
    }
    let t = (p.sub(a).dot(&ab) / len2).clamp(0.0, 1.0);
    p.sub(&a.add(&ab.scale(t))).norm()
}

fn pair_score(tip_a: &Point3, tip_b: &Point3, object_points: &[Point3], cfg: &GripConfig) -> f64 {
    let d_tip = tip_b.sub(tip_a).norm();
    let near = object_points
        .iter()
        .filter(|p| point_segment_dist(p, tip_a, tip_b) <= cfg.contact_radius)
        .count();
    let prox = near as f64 / object_points.len() as f64;
    (-d_tip / cfg.sigma_d).exp() + cfg.lambda * prox
}

/// Chooses the force-applying pair among thumb-index and thumb-middle by
/// fingertip distance and object proximity; ties break to thumb-index.
pub fn select_finger_pair(
    hand: &HandKeypoints,
    object_points: &[Point3],
    cfg: &GripConfig,
) -> Result<FingerPair, GripError> {
    if object_points.is_empty() {
        return Err(GripError::NoObjectPoints);
    }
    let thumb = hand.joint(Joint::ThumbTip);
    let index = hand.joint(Joint::IndexTip);
    let middle = hand.joint(Joint::MiddleTip);
    let s_index = pair_score(&thumb, &index, object_points, cfg);
    let s_middle = pair_score(&thumb, &middle, object_points, cfg);
    if s_middle - s_index > 1e-9 {
        Ok(FingerPair { pair_id: FingerPairId::ThumbMiddle, tip_a: thumb, tip_b: middle, score: s_middle })
    } else {
        Ok(FingerPair { pair_id: FingerPairId::ThumbIndex, tip_a: thumb, tip_b: index, score: s_index })
    }
}

const MIN_AXIS_ANGLE_RAD: f64 = 5.0 * std::f64::consts::PI / 180.0;

/// Builds the gripper orientation from the inter-finger vector and palm
/// normal: closing axis along the fingertip pair, approach axis from the
/// orthogonalized negated palm normal.
pub fn recover_contact_pose(pair: &FingerPair, palm: &PalmFrame) -> Result<Quaternion, GripError> {
    let v_fp = pair.v_fp();
    if v_fp.norm() <= 1e-6 {
        return Err(GripError::DegenerateVfp);
    }
    let x_g = v_fp.normalized().ok_or(GripError::DegenerateVfp)?;
    let n = palm.normal.normalized().ok_or(GripError::ParallelAxes)?;
    // Angle between the v_fp and n_palm lines, in [0, 90] degrees.
    let axis_angle = x_g.dot(&n).abs().clamp(0.0, 1.0).acos();
    if axis_angle <= MIN_AXIS_ANGLE_RAD {
        return Err(GripError::ParallelAxes);
    }
    let neg_n = n.scale(-1.0);
    let z_raw = neg_n.sub(&x_g.scale(neg_n.dot(&x_g)));
    let z_g = z_raw.normalized().ok_or(GripError::ParallelAxes)?;
    let y_g = z_g.cross(&x_g);
    Ok(Quaternion::from_matrix(&[
        [x_g.x, y_g.x, z_g.x],
        [x_g.y, y_g.y, z_g.y],
        [x_g.z, y_g.z, z_g.z],
    ]))
}
