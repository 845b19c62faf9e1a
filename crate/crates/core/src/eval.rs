//! MPJPE, rigid alignment and protocol reports.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraSet;
use crate::dataset::{Dataset, Protocol, ACTION_NAMES, N_ACTIONS};
use crate::error::{Error, Result};
use crate::net::{frame_observation, LiftingModel};
use crate::skeleton::{JointId, Pose3D, N_JOINTS};

/// The 16 joints errors are reported over.
pub fn non_root_joints() -> Vec<JointId> {
    JointId::non_root().collect()
}

fn check_frames(pred: &Pose3D, gt: &Pose3D) -> Result<()> {
    if pred.frame != gt.frame {
        return Err(Error::Contract(format!(
            "poses are in different frames ({:?} vs {:?})",
            pred.frame, gt.frame
        )));
    }
    Ok(())
}

/// Mean Euclidean distance over `joints`.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D, joints: &[JointId]) -> Result<f64> {
    check_frames(pred, gt)?;
    if joints.is_empty() {
        return Err(Error::Selection("empty joint set".into()));
    }
    let total: f64 = joints
        .iter()
        .map(|&j| (pred.joint(j) - gt.joint(j)).norm())
        .sum();
    Ok(total / joints.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// `rotation · pred + translation`.
    pub aligned: Pose3D,
}

/// Relative size of the second singular value below which a configuration
/// counts as collinear.
const RANK_TOLERANCE: f64 = 1e-9;

/// Least-squares rigid transform taking `pred` onto `gt` (Kabsch, with the
/// determinant forced to +1 and no scaling).
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D) -> Result<AlignmentResult> {
    check_frames(pred, gt)?;
    let n = N_JOINTS as f64;
    let pc = pred.joints.iter().sum::<Vector3<f64>>() / n;
    let gc = gt.joints.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (p, g) in pred.joints.iter().zip(&gt.joints) {
        h += (p - pc) * (g - gc).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite pose in alignment".into()));
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("U requested"), svd.v_t.expect("V requested"));
    let s = svd.singular_values;
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= RANK_TOLERANCE * sorted[0] {
        return Err(Error::RankDeficient(
            "joints are coincident or collinear".into(),
        ));
    }
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        let weakest = (0..3)
            .min_by(|&a, &b| s[a].total_cmp(&s[b]))
            .expect("three values");
        d[(weakest, weakest)] = -1.0;
    }
    let rotation = v * d * u.transpose();
    let translation = gc - rotation * pc;
    let aligned = pred.map(pred.frame, |p| rotation * p + translation);
    Ok(AlignmentResult {
        rotation,
        translation,
        aligned,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionError {
    pub action_id: u8,
    pub name: String,
    pub n_frames: usize,
    /// `None` when the action has no test frames.
    pub mpjpe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointError {
    pub joint: String,
    pub mpjpe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub aligned: bool,
    pub n_frames: usize,
    pub avg_mpjpe: f64,
    pub per_action: Vec<ActionError>,
    pub per_joint: Vec<JointError>,
}

/// Predict every test frame, compare with the root-centred ground truth
/// (optionally after rigid alignment) and aggregate by action and joint.
/// Results do not depend on frame order.
pub fn evaluate_protocol(
    model: &LiftingModel,
    test: &Dataset,
    cameras: &CameraSet,
    protocol: Protocol,
    aligned: bool,
) -> Result<EvalReport> {
    if test.frames.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let mut frames: Vec<_> = test.frames.iter().collect();
    frames.sort_by_key(|f| f.key());

    let mut inputs = Vec::with_capacity(frames.len());
    let mut truth = Vec::with_capacity(frames.len());
    for f in &frames {
        let (input, pose) = frame_observation(f, cameras)?;
        inputs.push(input);
        truth.push(pose.root_centered());
    }
    let mut preds = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(4096) {
        preds.extend(model.predict_batch(chunk)?);
    }

    let joints = non_root_joints();
    let mut joint_sum = vec![0.0; joints.len()];
    let mut action_sum = [0.0; N_ACTIONS];
    let mut action_n = [0usize; N_ACTIONS];
    let mut total = 0.0;
    for ((f, pred), gt) in frames.iter().zip(&preds).zip(&truth) {
        let pred = if aligned {
            procrustes_align(pred, gt)?.aligned
        } else {
            pred.clone()
        };
        let errs: Vec<f64> = joints
            .iter()
            .map(|&j| (pred.joint(j) - gt.joint(j)).norm())
            .collect();
        let frame_err = errs.iter().sum::<f64>() / errs.len() as f64;
        for (acc, e) in joint_sum.iter_mut().zip(&errs) {
            *acc += e;
        }
        let a = usize::from(f.action_id) - 1;
        action_sum[a] += frame_err;
        action_n[a] += 1;
        total += frame_err;
    }
    let n = frames.len();
    Ok(EvalReport {
        protocol,
        aligned,
        n_frames: n,
        avg_mpjpe: total / n as f64,
        per_action: (0..N_ACTIONS)
            .map(|a| ActionError {
                action_id: a as u8 + 1,
                name: ACTION_NAMES[a].to_string(),
                n_frames: action_n[a],
                mpjpe: (action_n[a] > 0).then(|| action_sum[a] / action_n[a] as f64),
            })
            .collect(),
        per_joint: joints
            .iter()
            .zip(joint_sum)
            .map(|(j, s)| JointError {
                joint: j.short_name().to_string(),
                mpjpe: s / n as f64,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// CSV layout: action-name header plus `Avg`, one row of values; then the
/// joint-name header and one row of values. Missing actions are left blank.
pub fn render_csv(r: &EvalReport) -> String {
    let mut s = String::new();
    let names: Vec<&str> = r.per_action.iter().map(|a| a.name.as_str()).collect();
    s += &names.join(",");
    s += ",Avg\n";
    let vals: Vec<String> = r
        .per_action
        .iter()
        .map(|a| a.mpjpe.map(|v| format!("{v:.4}")).unwrap_or_default())
        .collect();
    s += &vals.join(",");
    s += &format!(",{:.4}\n", r.avg_mpjpe);
    let joints: Vec<&str> = r.per_joint.iter().map(|j| j.joint.as_str()).collect();
    s += &joints.join(",");
    s.push('\n');
    let vals: Vec<String> = r
        .per_joint
        .iter()
        .map(|j| format!("{:.4}", j.mpjpe))
        .collect();
    s += &vals.join(",");
    s.push('\n');
    s
}

pub fn emit_report(r: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => render_csv(r),
        ReportFormat::Json => {
            serde_json::to_string_pretty(r).map_err(|e| Error::Data(e.to_string()))? + "\n"
        }
    };
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
