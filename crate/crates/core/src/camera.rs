//! Pinhole camera geometry: world → camera → pixel, and the depth-conditioned
//! inverse from (pixel, z) back to the camera frame.
//!
//! Camera frame convention: x right, y down, z along the optical axis.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{FrameKind, JointId, Pose3D, N_JOINTS};

/// A point in the camera frame, millimetres. `z` is depth along the optical axis.
pub type CameraPoint = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraExtrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraExtrinsics {
    /// Fails unless `rotation` is orthonormal with determinant +1 (to 1e-10).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        let det = rotation.determinant();
        if gram_err > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Domain(format!(
                "extrinsic rotation is not in SO(3): |RᵀR - I| = {gram_err:e}, det = {det}"
            )));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain("extrinsic translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera placed at `eye` looking at `target`, with world +z as up.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-9)
            .ok_or_else(|| Error::Domain("look_at: eye and target coincide".into()))?;
        let right = forward
            .cross(&Vector3::z())
            .try_normalize(1e-9)
            .ok_or_else(|| Error::Domain("look_at: view direction is vertical".into()))?;
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(rotation, translation)
    }
}

/// Physical sensor description; only used to derive `fx = f/sx`, `fy = f/sy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorMetadata {
    pub focal_mm: f64,
    pub sx_mm_per_px: f64,
    pub sy_mm_per_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub sensor: Option<SensorMetadata>,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            sensor: None,
        };
        k.check()?;
        Ok(k)
    }

    pub fn from_sensor(sensor: SensorMetadata, cx: f64, cy: f64) -> Result<Self> {
        let k = Self {
            fx: sensor.focal_mm / sensor.sx_mm_per_px,
            fy: sensor.focal_mm / sensor.sy_mm_per_px,
            cx,
            cy,
            sensor: Some(sensor),
        };
        k.check()?;
        Ok(k)
    }

    fn check(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Domain(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::Domain("principal point is not finite".into()));
        }
        if let Some(s) = self.sensor {
            if (self.fx * s.sx_mm_per_px - s.focal_mm).abs() > 1e-9
                || (self.fy * s.sy_mm_per_px - s.focal_mm).abs() > 1e-9
            {
                return Err(Error::Domain(
                    "focal lengths disagree with sensor metadata".into(),
                ));
            }
        }
        Ok(())
    }

    /// The 3×3 perspective matrix.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Sub-pixel image coordinates (column `r`, row `s`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub r: f64,
    pub s: f64,
}

pub fn world_to_camera(p: &Vector3<f64>, e: &CameraExtrinsics) -> CameraPoint {
    e.rotation * p + e.translation
}

pub fn project(p: &CameraPoint, k: &CameraIntrinsics) -> Result<PixelCoord> {
    if !(p.z > 0.0) {
        return Err(Error::NonProjectable { z: p.z });
    }
    Ok(PixelCoord {
        r: k.fx * p.x / p.z + k.cx,
        s: k.fy * p.y / p.z + k.cy,
    })
}

/// Inverse of [`project`] given the depth `z` of the point.
pub fn back_project(px: &PixelCoord, z: f64, k: &CameraIntrinsics) -> Result<CameraPoint> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!(
            "back-projection needs z > 0, got {z}"
        )));
    }
    Ok(Vector3::new(
        z * (px.r - k.cx) / k.fx,
        z * (px.s - k.cy) / k.fy,
        z,
    ))
}

pub fn pose_to_camera(pose: &Pose3D, e: &CameraExtrinsics) -> Result<Pose3D> {
    if pose.frame != FrameKind::World {
        return Err(Error::Contract(
            "pose_to_camera expects a world-frame pose".into(),
        ));
    }
    Ok(pose.map(FrameKind::Camera, |p| world_to_camera(p, e)))
}

pub fn project_pose(pose: &Pose3D, k: &CameraIntrinsics) -> Result<[PixelCoord; N_JOINTS]> {
    if pose.frame != FrameKind::Camera {
        return Err(Error::Contract(
            "project_pose expects a camera-frame pose".into(),
        ));
    }
    let mut out = [PixelCoord { r: 0.0, s: 0.0 }; N_JOINTS];
    for (j, p) in pose.joints.iter().enumerate() {
        out[j] = project(p, k).map_err(|e| Error::at_joint(JointId::ALL[j], e))?;
    }
    Ok(out)
}

pub fn back_project_pose(
    pixels: &[PixelCoord; N_JOINTS],
    depths: &[f64; N_JOINTS],
    k: &CameraIntrinsics,
) -> Result<Pose3D> {
    let mut joints = [Vector3::zeros(); N_JOINTS];
    for j in 0..N_JOINTS {
        joints[j] = back_project(&pixels[j], depths[j], k)
            .map_err(|e| Error::at_joint(JointId::ALL[j], e))?;
    }
    Ok(Pose3D::new(joints, FrameKind::Camera))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: u8,
    pub extrinsics: CameraExtrinsics,
    pub intrinsics: CameraIntrinsics,
}

impl Camera {
    pub fn to_camera(&self, pose_world: &Pose3D) -> Result<Pose3D> {
        pose_to_camera(pose_world, &self.extrinsics)
    }
}

/// Cameras keyed by id.
pub type CameraSet = BTreeMap<u8, Camera>;

/// Nominal image size for synthetic rigs; the principal point sits at its centre.
pub const NOMINAL_IMAGE_SIZE: f64 = 1000.0;

/// `n` cameras spaced around a circle of radius 4–6 m at heights 1–1.8 m,
/// all looking at a point 0.9 m above the origin, with `fx = fy ∈ [1000, 1500]`.
pub fn synthetic_rig(n: u8, seed: u64) -> Result<CameraSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xCA11);
    let target = Vector3::new(0.0, 0.0, 900.0);
    let mut set = CameraSet::new();
    for id in 1..=n {
        let base =
            std::f64::consts::FRAC_PI_4 + std::f64::consts::TAU * f64::from(id - 1) / f64::from(n);
        let azimuth = base + rng.random_range(-0.17..0.17);
        let radius = rng.random_range(4000.0..=6000.0);
        let height = rng.random_range(1000.0..=1800.0);
        let f = rng.random_range(1000.0..=1500.0);
        let eye = Vector3::new(radius * azimuth.cos(), radius * azimuth.sin(), height);
        set.insert(
            id,
            Camera {
                id,
                extrinsics: CameraExtrinsics::look_at(&eye, &target)?,
                intrinsics: CameraIntrinsics::new(
                    f,
                    f,
                    NOMINAL_IMAGE_SIZE / 2.0,
                    NOMINAL_IMAGE_SIZE / 2.0,
                )?,
            },
        );
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Camera files

#[derive(Serialize, Deserialize)]
struct CameraFile {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

pub fn camera_file_name(id: u8) -> String {
    format!("camera_{id}.json")
}

pub fn save_camera(cam: &Camera, path: &Path) -> Result<()> {
    let r = cam.extrinsics.rotation;
    let file = CameraFile {
        r: std::array::from_fn(|i| r[(i / 3, i % 3)]),
        t: cam.extrinsics.translation.into(),
        fx: cam.intrinsics.fx,
        fy: cam.intrinsics.fy,
        cx: cam.intrinsics.cx,
        cy: cam.intrinsics.cy,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_camera(id: u8, path: &Path) -> Result<Camera> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CameraFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(Camera {
        id,
        extrinsics: CameraExtrinsics::new(Matrix3::from_row_slice(&file.r), Vector3::from(file.t))?,
        intrinsics: CameraIntrinsics::new(file.fx, file.fy, file.cx, file.cy)?,
    })
}

pub fn save_cameras(set: &CameraSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for cam in set.values() {
        save_camera(cam, &dir.join(camera_file_name(cam.id)))?;
    }
    Ok(())
}

/// Load every `camera_<id>.json` in `dir`.
pub fn load_cameras(dir: &Path) -> Result<CameraSet> {
    let mut set = CameraSet::new();
    for id in 1..=u8::MAX {
        let path = dir.join(camera_file_name(id));
        if !path.exists() {
            continue;
        }
        set.insert(id, load_camera(id, &path)?);
    }
    if set.is_empty() {
        return Err(Error::Data(format!(
            "no camera files found in {}",
            dir.display()
        )));
    }
    Ok(set)
}
