//! 17-joint skeleton, poses, and forward kinematics.
//!
//! Joint order is a fixed toolkit convention with `Root` (pelvis) at index 0;
//! the 16 non-root joints follow the usual per-joint error table order
//! (RH, RK, RA, LH, LK, LA, Tho., Neck, Nose, Head, LS, LE, LW, RS, RE, RW).

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_JOINTS: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JointId {
    Root = 0,
    RHip,
    RKnee,
    RAnkle,
    LHip,
    LKnee,
    LAnkle,
    Thorax,
    Neck,
    Nose,
    Head,
    LShoulder,
    LElbow,
    LWrist,
    RShoulder,
    RElbow,
    RWrist,
}

impl JointId {
    pub const ALL: [JointId; N_JOINTS] = [
        JointId::Root,
        JointId::RHip,
        JointId::RKnee,
        JointId::RAnkle,
        JointId::LHip,
        JointId::LKnee,
        JointId::LAnkle,
        JointId::Thorax,
        JointId::Neck,
        JointId::Nose,
        JointId::Head,
        JointId::LShoulder,
        JointId::LElbow,
        JointId::LWrist,
        JointId::RShoulder,
        JointId::RElbow,
        JointId::RWrist,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<JointId> {
        Self::ALL.get(i).copied()
    }

    /// Every joint except the root, in table order.
    pub fn non_root() -> impl Iterator<Item = JointId> {
        Self::ALL[1..].iter().copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::Root => "Root",
            JointId::RHip => "RHip",
            JointId::RKnee => "RKnee",
            JointId::RAnkle => "RAnkle",
            JointId::LHip => "LHip",
            JointId::LKnee => "LKnee",
            JointId::LAnkle => "LAnkle",
            JointId::Thorax => "Thorax",
            JointId::Neck => "Neck",
            JointId::Nose => "Nose",
            JointId::Head => "Head",
            JointId::LShoulder => "LShoulder",
            JointId::LElbow => "LElbow",
            JointId::LWrist => "LWrist",
            JointId::RShoulder => "RShoulder",
            JointId::RElbow => "RElbow",
            JointId::RWrist => "RWrist",
        }
    }

    /// Abbreviation used in report headers.
    pub fn short_name(self) -> &'static str {
        match self {
            JointId::Root => "Root",
            JointId::RHip => "RH",
            JointId::RKnee => "RK",
            JointId::RAnkle => "RA",
            JointId::LHip => "LH",
            JointId::LKnee => "LK",
            JointId::LAnkle => "LA",
            JointId::Thorax => "Tho.",
            JointId::Neck => "Neck",
            JointId::Nose => "Nose",
            JointId::Head => "Head",
            JointId::LShoulder => "LS",
            JointId::LElbow => "LE",
            JointId::LWrist => "LW",
            JointId::RShoulder => "RS",
            JointId::RElbow => "RE",
            JointId::RWrist => "RW",
        }
    }

    pub fn from_name(name: &str) -> Option<JointId> {
        Self::ALL.iter().copied().find(|j| j.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    World,
    Camera,
}

/// Joint positions in millimetres, tagged with the frame they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub joints: [Vector3<f64>; N_JOINTS],
    pub frame: FrameKind,
}

impl Pose3D {
    pub fn new(joints: [Vector3<f64>; N_JOINTS], frame: FrameKind) -> Self {
        Self { joints, frame }
    }

    pub fn zeros(frame: FrameKind) -> Self {
        Self {
            joints: [Vector3::zeros(); N_JOINTS],
            frame,
        }
    }

    pub fn joint(&self, j: JointId) -> &Vector3<f64> {
        &self.joints[j.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    /// Translate so the root sits at the origin.
    pub fn root_centered(&self) -> Pose3D {
        let root = self.joints[0];
        let mut joints = self.joints;
        for p in joints.iter_mut() {
            *p -= root;
        }
        Pose3D::new(joints, self.frame)
    }

    pub fn map(&self, frame: FrameKind, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Pose3D {
        Pose3D::new(std::array::from_fn(|i| f(&self.joints[i])), frame)
    }

    pub fn bone_length(&self, parent: JointId, child: JointId) -> f64 {
        (self.joint(child) - self.joint(parent)).norm()
    }
}

/// One edge of the kinematic tree.
///
/// The child sits at `parent + R_child * rest_direction * length`, where
/// `R_child` is the parent's frame composed with the bone's local rotation
/// (XYZ Euler angles bounded by `angle_min`/`angle_max`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub parent: JointId,
    pub child: JointId,
    pub length: f64,
    pub rest_direction: [f64; 3],
    pub angle_min: [f64; 3],
    pub angle_max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonModel {
    pub bones: Vec<Bone>,
    /// Height of the pelvis above the floor for an unscaled subject (mm).
    pub root_height: f64,
}

/// Joint-angle state for a full skeleton: one XYZ Euler triple per bone plus
/// the global root orientation and position.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngles {
    pub bone_angles: Vec<[f64; 3]>,
    pub root_yaw: f64,
    pub root_position: Vector3<f64>,
}

pub const MIN_BONE_LENGTH: f64 = 50.0;
pub const MAX_BONE_LENGTH: f64 = 700.0;

fn bone(
    parent: JointId,
    child: JointId,
    length: f64,
    dir: [f64; 3],
    min: [f64; 3],
    max: [f64; 3],
) -> Bone {
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    Bone {
        parent,
        child,
        length,
        rest_direction: [dir[0] / n, dir[1] / n, dir[2] / n],
        angle_min: min,
        angle_max: max,
    }
}

impl SkeletonModel {
    /// Adult-proportioned default model. Body frame: x to the subject's left,
    /// y forward, z up.
    pub fn standard() -> Self {
        use JointId::*;
        const Z: [f64; 3] = [0.0, 0.0, 0.0];
        let bones = vec![
            bone(Root, RHip, 130.0, [-1.0, 0.0, 0.0], Z, Z),
            bone(
                RHip,
                RKnee,
                450.0,
                [0.0, 0.0, -1.0],
                [-0.5, -0.2, -0.3],
                [1.6, 0.5, 0.3],
            ),
            bone(
                RKnee,
                RAnkle,
                440.0,
                [0.0, 0.0, -1.0],
                [-2.2, -0.05, -0.05],
                [0.0, 0.05, 0.05],
            ),
            bone(Root, LHip, 130.0, [1.0, 0.0, 0.0], Z, Z),
            bone(
                LHip,
                LKnee,
                450.0,
                [0.0, 0.0, -1.0],
                [-0.5, -0.5, -0.3],
                [1.6, 0.2, 0.3],
            ),
            bone(
                LKnee,
                LAnkle,
                440.0,
                [0.0, 0.0, -1.0],
                [-2.2, -0.05, -0.05],
                [0.0, 0.05, 0.05],
            ),
            bone(
                Root,
                Thorax,
                480.0,
                [0.0, 0.0, 1.0],
                [-0.6, -0.4, -0.5],
                [0.4, 0.4, 0.5],
            ),
            bone(
                Thorax,
                Neck,
                110.0,
                [0.0, 0.0, 1.0],
                [-0.4, -0.3, -0.6],
                [0.4, 0.3, 0.6],
            ),
            bone(Neck, Nose, 110.0, [0.0, 0.6, 0.8], Z, Z),
            bone(Neck, Head, 200.0, [0.0, 0.1, 1.0], Z, Z),
            bone(
                Thorax,
                LShoulder,
                160.0,
                [1.0, 0.0, 0.2],
                [-0.1, -0.1, -0.1],
                [0.1, 0.1, 0.1],
            ),
            bone(
                LShoulder,
                LElbow,
                280.0,
                [0.0, 0.0, -1.0],
                [-1.0, -1.6, -0.5],
                [3.0, 0.3, 0.5],
            ),
            bone(
                LElbow,
                LWrist,
                250.0,
                [0.0, 0.0, -1.0],
                [0.0, -0.1, -0.1],
                [2.5, 0.1, 0.1],
            ),
            bone(
                Thorax,
                RShoulder,
                160.0,
                [-1.0, 0.0, 0.2],
                [-0.1, -0.1, -0.1],
                [0.1, 0.1, 0.1],
            ),
            bone(
                RShoulder,
                RElbow,
                280.0,
                [0.0, 0.0, -1.0],
                [-1.0, -0.3, -0.5],
                [3.0, 1.6, 0.5],
            ),
            bone(
                RElbow,
                RWrist,
                250.0,
                [0.0, 0.0, -1.0],
                [0.0, -0.1, -0.1],
                [2.5, 0.1, 0.1],
            ),
        ];
        SkeletonModel {
            bones,
            root_height: 900.0,
        }
    }

    /// Checks tree structure, bone lengths and angle ranges. Returns the bone
    /// indices in an order where every parent is placed before its children.
    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.bones.len() != N_JOINTS - 1 {
            return Err(Error::Structural(format!(
                "expected {} bones, found {}",
                N_JOINTS - 1,
                self.bones.len()
            )));
        }
        let mut parent_of: [Option<usize>; N_JOINTS] = [None; N_JOINTS];
        for (bi, b) in self.bones.iter().enumerate() {
            if b.child == JointId::Root {
                return Err(Error::Structural("root cannot be a child".into()));
            }
            if parent_of[b.child.index()].is_some() {
                return Err(Error::Structural(format!("{:?} has two parents", b.child)));
            }
            parent_of[b.child.index()] = Some(bi);
            if !(b.length.is_finite() && (MIN_BONE_LENGTH..=MAX_BONE_LENGTH).contains(&b.length)) {
                return Err(Error::Structural(format!(
                    "bone {:?}->{:?} length {} outside [{MIN_BONE_LENGTH}, {MAX_BONE_LENGTH}] mm",
                    b.parent, b.child, b.length
                )));
            }
            let dir_norm = b.rest_direction.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (dir_norm - 1.0).abs() > 1e-9 {
                return Err(Error::Structural(format!(
                    "bone {:?}->{:?} rest direction is not a unit vector",
                    b.parent, b.child
                )));
            }
            for k in 0..3 {
                let (lo, hi) = (b.angle_min[k], b.angle_max[k]);
                if !(lo <= hi && lo >= -std::f64::consts::PI && hi <= std::f64::consts::PI) {
                    return Err(Error::Structural(format!(
                        "bone {:?}->{:?} angle range [{lo}, {hi}] invalid",
                        b.parent, b.child
                    )));
                }
            }
        }

        // Breadth-first from the root; anything unreached is disconnected or
        // part of a cycle.
        let mut order = Vec::with_capacity(self.bones.len());
        let mut frontier = vec![JointId::Root];
        let mut seen = [false; N_JOINTS];
        seen[0] = true;
        while let Some(j) = frontier.pop() {
            for (bi, b) in self.bones.iter().enumerate() {
                if b.parent == j && !seen[b.child.index()] {
                    seen[b.child.index()] = true;
                    order.push(bi);
                    frontier.push(b.child);
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Structural(format!(
                "joint {:?} is not reachable from the root",
                JointId::ALL[missing]
            )));
        }
        Ok(order)
    }

    /// Midpoint of every bone's angle range: the neutral posture.
    pub fn neutral_angles(&self) -> JointAngles {
        JointAngles {
            bone_angles: self
                .bones
                .iter()
                .map(|b| std::array::from_fn(|k| 0.5 * (b.angle_min[k] + b.angle_max[k])))
                .collect(),
            root_yaw: 0.0,
            root_position: Vector3::new(0.0, 0.0, self.root_height),
        }
    }

    /// World-frame joint positions for the given angles, with every bone
    /// length multiplied by `scale`.
    ///
    /// `order` must come from [`SkeletonModel::validate`].
    pub fn forward_kinematics(&self, order: &[usize], angles: &JointAngles, scale: f64) -> Pose3D {
        let mut positions = [Vector3::zeros(); N_JOINTS];
        let mut frames = [Matrix3::identity(); N_JOINTS];
        positions[0] = angles.root_position;
        frames[0] = *Rotation3::from_axis_angle(&Vector3::z_axis(), angles.root_yaw).matrix();
        for &bi in order {
            let b = &self.bones[bi];
            let a = angles.bone_angles[bi];
            let local = Rotation3::from_axis_angle(&Vector3::x_axis(), a[0])
                * Rotation3::from_axis_angle(&Vector3::y_axis(), a[1])
                * Rotation3::from_axis_angle(&Vector3::z_axis(), a[2]);
            let frame = frames[b.parent.index()] * local.matrix();
            let dir = Vector3::from(b.rest_direction);
            positions[b.child.index()] =
                positions[b.parent.index()] + frame * dir * (b.length * scale);
            frames[b.child.index()] = frame;
        }
        Pose3D::new(positions, FrameKind::World)
    }
}
