//! Depth-versus-z analysis over (camera, action, joint) cells.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normality::{normality_report, NormalityReport};
use super::rank::{kendall_tau, pearson, spearman};
use super::TestResult;
use crate::camera::CameraSet;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::skeleton::{JointId, N_JOINTS};

/// Correlations above this magnitude count as "moderate".
pub const MODERATE_CORRELATION: f64 = 0.3;

/// Significance levels reported by [`significance_summary`].
pub const SIGNIFICANCE_LEVELS: [f64; 3] = [0.001, 0.01, 0.05];

/// Depth readings and true camera-frame z for one frame seen by one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthObservation {
    pub camera: u8,
    pub action: u8,
    pub depth: [f64; N_JOINTS],
    pub z: [f64; N_JOINTS],
}

/// Pair every depth-carrying frame with the z of its joints in that frame's
/// camera.
pub fn depth_observations(dataset: &Dataset, cameras: &CameraSet) -> Result<Vec<DepthObservation>> {
    let mut out = Vec::with_capacity(dataset.frames.len());
    for f in &dataset.frames {
        let Some(depth) = f.depth else {
            return Err(Error::Data(format!(
                "frame {:?} has no depth values",
                f.key()
            )));
        };
        let cam = cameras
            .get(&f.camera_id)
            .ok_or_else(|| Error::Data(format!("no calibration for camera {}", f.camera_id)))?;
        let pose = cam.to_camera(&f.pose_world)?;
        out.push(DepthObservation {
            camera: f.camera_id,
            action: f.action_id,
            depth,
            z: std::array::from_fn(|j| pose.joints[j].z),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub camera: u8,
    pub action: u8,
    pub joint: JointId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairedSample {
    pub depth: Vec<f64>,
    pub z: Vec<f64>,
}

/// All (depth, z) pairs of one joint over the frames of one (camera, action).
pub fn subsample(obs: &[DepthObservation], key: CellKey) -> Result<PairedSample> {
    let j = key.joint.index();
    let mut s = PairedSample::default();
    for o in obs
        .iter()
        .filter(|o| o.camera == key.camera && o.action == key.action)
    {
        s.depth.push(o.depth[j]);
        s.z.push(o.z[j]);
    }
    if s.depth.is_empty() {
        return Err(Error::Selection(format!(
            "no frames for camera {} action {}",
            key.camera, key.action
        )));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub spearman: TestResult,
    pub kendall: TestResult,
}

pub fn correlation_report(xs: &[f64], ys: &[f64]) -> Result<CorrelationReport> {
    Ok(CorrelationReport {
        n: xs.len(),
        spearman: spearman(xs, ys)?,
        kendall: kendall_tau(xs, ys)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceSummary {
    pub n_cells: usize,
    /// (α, fraction of cells with Spearman p < α), ascending α.
    pub significant: Vec<(f64, f64)>,
    pub fraction_negative: f64,
    /// Fraction with |ρ| > [`MODERATE_CORRELATION`].
    pub fraction_moderate: f64,
}

/// Share of cells whose Spearman correlation is significant at each level.
pub fn significance_summary(reports: &[CorrelationReport]) -> SignificanceSummary {
    let n = reports.len().max(1) as f64;
    let frac = |pred: &dyn Fn(&CorrelationReport) -> bool| {
        reports.iter().filter(|r| pred(r)).count() as f64 / n
    };
    SignificanceSummary {
        n_cells: reports.len(),
        significant: SIGNIFICANCE_LEVELS
            .iter()
            .map(|&a| (a, frac(&|r| r.spearman.p_value < a)))
            .collect(),
        fraction_negative: frac(&|r| r.spearman.statistic < 0.0),
        fraction_moderate: frac(&|r| r.spearman.statistic.abs() > MODERATE_CORRELATION),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation of the points.
    pub r: f64,
}

/// Ordinary least-squares line through `(x, y)` points.
pub fn trend_fit(points: &[(f64, f64)]) -> Result<TrendFit> {
    if points.len() < 3 {
        return Err(Error::SampleSize {
            got: points.len(),
            needed: "n >= 3".into(),
        });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("trend fit needs non-constant x".into()));
    }
    let slope = sxy / sxx;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    // a flat y leaves r undefined; report it as 0
    let r = pearson(&xs, &ys).unwrap_or(0.0);
    Ok(TrendFit {
        slope,
        intercept: my - slope * mx,
        r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub key: CellKey,
    pub correlation: CorrelationReport,
    /// Normality of the depth values in the cell.
    pub normality: NormalityReport,
}

/// A cell with frames whose statistics are undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub key: CellKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellTable {
    pub cells: Vec<CellStats>,
    pub skipped: Vec<SkippedCell>,
}

/// Correlation and normality statistics for every non-empty
/// (camera, action, joint) cell, in key order. Cells whose statistics are
/// undefined (for example constant depth) are listed in `skipped`.
pub fn cell_table(obs: &[DepthObservation], seed: u64) -> Result<CellTable> {
    let mut groups: BTreeMap<(u8, u8), Vec<&DepthObservation>> = BTreeMap::new();
    for o in obs {
        groups.entry((o.camera, o.action)).or_default().push(o);
    }
    let mut out = CellTable::default();
    for ((camera, action), frames) in groups {
        for joint in JointId::ALL {
            let j = joint.index();
            let d: Vec<f64> = frames.iter().map(|o| o.depth[j]).collect();
            let z: Vec<f64> = frames.iter().map(|o| o.z[j]).collect();
            let key = CellKey {
                camera,
                action,
                joint,
            };
            let cell = correlation_report(&d, &z).and_then(|correlation| {
                Ok(CellStats {
                    key,
                    correlation,
                    normality: normality_report(&d, seed)?,
                })
            });
            match cell {
                Ok(c) => out.cells.push(c),
                Err(e @ (Error::Degenerate(_) | Error::SampleSize { .. })) => {
                    log::warn!("skipping cell {key:?}: {e}");
                    out.skipped.push(SkippedCell {
                        key,
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

/// Write the cell table as CSV, one row per cell.
pub fn write_cell_table(cells: &[CellStats], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(
        w,
        "camera,action,joint,n,spearman,spearman_p,kendall,kendall_p,sw_W,sw_p,ad_A2,dagostino_K2,dagostino_p"
    )
    .map_err(io)?;
    for c in cells {
        let r = &c.correlation;
        let nr = &c.normality;
        writeln!(
            w,
            "{},{},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{},{},{},{},{}",
            c.key.camera,
            c.key.action,
            c.key.joint.name(),
            r.n,
            r.spearman.statistic,
            r.spearman.p_value,
            r.kendall.statistic,
            r.kendall.p_value,
            opt(nr.shapiro.map(|t| t.statistic)),
            opt(nr.shapiro.map(|t| t.p_value)),
            opt(nr.anderson.map(|t| t.statistic)),
            opt(nr.dagostino.map(|t| t.statistic)),
            opt(nr.dagostino.map(|t| t.p_value)),
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
