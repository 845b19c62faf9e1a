//! Network inputs and targets, and their standardization.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::camera::{project_pose, CameraSet};
use crate::dataset::{Dataset, FrameRecord};
use crate::error::{Error, Result};
use crate::skeleton::{FrameKind, Pose3D, N_JOINTS};

/// Standard deviations below this are replaced by it.
pub const STD_FLOOR: f64 = 1e-8;

/// What the network sees for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameInput {
    pub pixels: [[f64; 2]; N_JOINTS],
    pub depth: Option<[f64; N_JOINTS]>,
}

impl FrameInput {
    /// Interleaved `(u, v, d)` per joint, or `(u, v)` without depth.
    pub fn to_row(&self, use_depth: bool) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(3 * N_JOINTS);
        let depth = match (use_depth, self.depth) {
            (true, None) => return Err(Error::Data("frame has no depth values".into())),
            (true, Some(d)) => Some(d),
            (false, _) => None,
        };
        for j in 0..N_JOINTS {
            row.extend(self.pixels[j]);
            if let Some(d) = depth {
                row.push(d[j]);
            }
        }
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        Ok(row)
    }
}

/// Root-centred coordinates of the 16 non-root joints, flattened.
pub fn target_row(pose_cam: &Pose3D) -> Vec<f64> {
    let c = pose_cam.root_centered();
    c.joints[1..].iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Inverse of [`target_row`], with the root at the origin.
pub fn pose_from_row(row: &[f64]) -> Pose3D {
    let mut pose = Pose3D::zeros(FrameKind::Camera);
    for (j, p) in pose.joints.iter_mut().enumerate().skip(1) {
        let k = 3 * (j - 1);
        *p = nalgebra::Vector3::new(row[k], row[k + 1], row[k + 2]);
    }
    pose
}

/// Network input and camera-frame pose of one stored frame. Pixels are
/// projected from the pose when the record does not carry them.
pub fn frame_observation(f: &FrameRecord, cameras: &CameraSet) -> Result<(FrameInput, Pose3D)> {
    let cam = cameras
        .get(&f.camera_id)
        .ok_or_else(|| Error::Data(format!("no calibration for camera {}", f.camera_id)))?;
    let pose = cam.to_camera(&f.pose_world)?;
    let pixels = match f.pixels {
        Some(px) => px,
        None => {
            let px = project_pose(&pose, &cam.intrinsics)?;
            std::array::from_fn(|j| [px[j].r, px[j].s])
        }
    };
    Ok((
        FrameInput {
            pixels,
            depth: f.depth,
        },
        pose,
    ))
}

/// Raw (unstandardized) input and target matrices, one row per frame.
pub fn prepare(
    dataset: &Dataset,
    cameras: &CameraSet,
    use_depth: bool,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = dataset.frames.len();
    let in_dim = if use_depth { 3 } else { 2 } * N_JOINTS;
    let mut x = Array2::zeros((n, in_dim));
    let mut y = Array2::zeros((n, 3 * (N_JOINTS - 1)));
    for (i, f) in dataset.frames.iter().enumerate() {
        let (input, pose) = frame_observation(f, cameras)?;
        let row = input.to_row(use_depth).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("frame {:?}: {m}", f.key())),
            other => other,
        })?;
        x.row_mut(i).assign(&Array1::from(row));
        y.row_mut(i).assign(&Array1::from(target_row(&pose)));
    }
    Ok((x, y))
}

/// Per-coordinate mean and standard deviation of the training inputs and
/// targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

fn column_stats(a: &Array2<f64>, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.nrows() == 0 {
        return Err(Error::Data(
            "cannot compute statistics of an empty set".into(),
        ));
    }
    let mean = a.mean_axis(Axis(0)).expect("non-empty");
    let std = a.std_axis(Axis(0), 0.0);
    let std = std
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if s < STD_FLOOR {
                log::warn!("{what} coordinate {i} is constant; std floored to {STD_FLOOR}");
                STD_FLOOR
            } else {
                s
            }
        })
        .collect();
    Ok((mean.to_vec(), std))
}

fn apply(a: &Array2<f64>, mean: &[f64], std: &[f64], forward: bool) -> Result<Array2<f64>> {
    if a.ncols() != mean.len() {
        return Err(Error::dimension(mean.len(), a.ncols()));
    }
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
            *v = if forward { (*v - m) / s } else { *v * s + m };
        }
    }
    Ok(out)
}

impl NormStats {
    pub fn compute(inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<Self> {
        let (input_mean, input_std) = column_stats(inputs, "input")?;
        let (output_mean, output_std) = column_stats(targets, "output")?;
        Ok(Self {
            input_mean,
            input_std,
            output_mean,
            output_std,
        })
    }

    pub fn standardize_inputs(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        apply(x, &self.input_mean, &self.input_std, true)
    }

    pub fn destandardize_inputs(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        apply(x, &self.input_mean, &self.input_std, false)
    }

    pub fn standardize_outputs(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        apply(y, &self.output_mean, &self.output_std, true)
    }

    pub fn destandardize_outputs(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        apply(y, &self.output_mean, &self.output_std, false)
    }
}
