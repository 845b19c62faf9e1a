//! Simulated per-joint depth readings with a controllable rank correlation
//! to the true camera-frame z, plus the depth-image losses.
//!
//! A reading is a mix of a monotone signal and uniform noise,
//!
//! ```text
//! d = z_min + span · ((1 − w) · s + w · u),   s = ẑ^γ  (or 1 − ẑ^γ when ρ* < 0)
//! ```
//!
//! where ẑ is z min-max normalized over the batch, `u ~ U(0, 1)` and the mixing
//! weight `w ∈ [0, 1]` is solved by bisection so the Spearman correlation hits
//! the target. With `w = 0` and `γ = 1` the reading equals z exactly. Occluded
//! joints are then scaled down by `occlusion_depth_factor`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{project_pose, CameraSet};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::skeleton::{Pose3D, N_JOINTS};
use crate::stats::spearman;

/// Number of samples in the calibration batch.
pub const CALIBRATION_SAMPLES: usize = 10_000;
/// Calibration stops once the measured correlation is this close to target.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

pub type JointDepths = [f64; N_JOINTS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthModelConfig {
    pub target_spearman: f64,
    /// Fixed noise mixing weight in [0, 1]; `None` calibrates it from
    /// `target_spearman`.
    #[serde(default)]
    pub noise_scale: Option<f64>,
    /// Exponent γ applied to normalized z.
    #[serde(default = "one")]
    pub monotone_distortion: f64,
    #[serde(default)]
    pub occlusion_prob: f64,
    #[serde(default = "default_occlusion_factor")]
    pub occlusion_depth_factor: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_occlusion_factor() -> f64 {
    0.8
}

impl Default for DepthModelConfig {
    fn default() -> Self {
        Self {
            target_spearman: 0.6,
            noise_scale: None,
            monotone_distortion: 1.0,
            occlusion_prob: 0.0,
            occlusion_depth_factor: default_occlusion_factor(),
            seed: 0,
        }
    }
}

impl DepthModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(-1.0..=1.0).contains(&self.target_spearman) {
            return bad(format!(
                "target_spearman {} outside [-1, 1]",
                self.target_spearman
            ));
        }
        if let Some(w) = self.noise_scale {
            if !(0.0..=1.0).contains(&w) {
                return bad(format!("noise_scale {w} outside [0, 1]"));
            }
        }
        if !(self.monotone_distortion > 0.0 && self.monotone_distortion.is_finite()) {
            return bad(format!(
                "monotone_distortion {} must be > 0",
                self.monotone_distortion
            ));
        }
        if !(0.0..1.0).contains(&self.occlusion_prob) {
            return bad(format!(
                "occlusion_prob {} outside [0, 1)",
                self.occlusion_prob
            ));
        }
        if !(self.occlusion_depth_factor > 0.0 && self.occlusion_depth_factor < 1.0) {
            return bad(format!(
                "occlusion_depth_factor {} outside (0, 1)",
                self.occlusion_depth_factor
            ));
        }
        Ok(())
    }
}

/// Range of z used to normalize a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZRange {
    pub min: f64,
    pub max: f64,
}

impl ZRange {
    pub fn of(zs: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut r = ZRange {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for z in zs {
            if !(z > 0.0) {
                return Err(Error::Domain(format!(
                    "depth simulation needs z > 0, got {z}"
                )));
            }
            r.min = r.min.min(z);
            r.max = r.max.max(z);
        }
        if !r.min.is_finite() {
            return Err(Error::Selection("no z values".into()));
        }
        Ok(r)
    }

    fn span(&self) -> f64 {
        self.max - self.min
    }

    fn normalize(&self, z: f64) -> f64 {
        if self.span() > 0.0 {
            ((z - self.min) / self.span()).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }
}

/// A configured simulator with its noise weight resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSimulator {
    pub cfg: DepthModelConfig,
    /// Resolved mixing weight `w`.
    pub noise_weight: f64,
}

fn signal(zhat: f64, gamma: f64, negative: bool) -> f64 {
    let s = zhat.powf(gamma);
    if negative {
        1.0 - s
    } else {
        s
    }
}

fn mix(s: f64, u: f64, w: f64) -> f64 {
    (1.0 - w) * s + w * u
}

impl DepthSimulator {
    /// Validate `cfg` and resolve the noise weight. Calibration draws ẑ
    /// from `calibration_z` (normalized by its own range) when given,
    /// otherwise uniformly.
    pub fn new(cfg: DepthModelConfig, calibration_z: Option<&[f64]>) -> Result<Self> {
        cfg.validate()?;
        let noise_weight = match cfg.noise_scale {
            Some(w) => w,
            None => calibrate(&cfg, calibration_z)?,
        };
        Ok(Self { cfg, noise_weight })
    }

    /// Depth readings for one camera-frame pose, normalized against `range`.
    pub fn simulate(
        &self,
        pose_cam: &Pose3D,
        range: ZRange,
        rng: &mut impl Rng,
    ) -> Result<JointDepths> {
        let mut out = [0.0; N_JOINTS];
        for (j, p) in pose_cam.joints.iter().enumerate() {
            if !(p.z > 0.0) {
                return Err(Error::Domain(format!(
                    "depth simulation needs z > 0, got {}",
                    p.z
                )));
            }
            out[j] = self.reading(p.z, range, rng);
        }
        Ok(out)
    }

    /// Depth readings for a flat batch of z values normalized over the batch.
    pub fn simulate_values(&self, zs: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let range = ZRange::of(zs.iter().copied())?;
        Ok(zs.iter().map(|&z| self.reading(z, range, rng)).collect())
    }

    fn reading(&self, z: f64, range: ZRange, rng: &mut impl Rng) -> f64 {
        let c = &self.cfg;
        let s = signal(
            range.normalize(z),
            c.monotone_distortion,
            c.target_spearman < 0.0,
        );
        // noise and occlusion draws are made unconditionally so the stream
        // layout does not depend on the configuration
        let u: f64 = rng.random();
        let occ: f64 = rng.random();
        let mut d = range.min + range.span() * mix(s, u, self.noise_weight);
        if occ < c.occlusion_prob {
            d *= c.occlusion_depth_factor;
        }
        d
    }
}

/// Bisection on the mixing weight with common random numbers.
fn calibrate(cfg: &DepthModelConfig, calibration_z: Option<&[f64]>) -> Result<f64> {
    let target = cfg.target_spearman;
    if target.abs() >= 1.0 {
        return Ok(0.0);
    }
    if target == 0.0 {
        return Ok(1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xCA1B);
    let zhat: Vec<f64> = match calibration_z {
        Some(zs) if zs.len() >= 3 => {
            let range = ZRange::of(zs.iter().copied())?;
            (0..CALIBRATION_SAMPLES)
                .map(|_| range.normalize(zs[rng.random_range(0..zs.len())]))
                .collect()
        }
        _ => (0..CALIBRATION_SAMPLES).map(|_| rng.random()).collect(),
    };
    let noise: Vec<f64> = (0..CALIBRATION_SAMPLES).map(|_| rng.random()).collect();
    let negative = target < 0.0;
    let s: Vec<f64> = zhat
        .iter()
        .map(|&z| signal(z, cfg.monotone_distortion, negative))
        .collect();
    let measure = |w: f64| -> Result<f64> {
        let d: Vec<f64> = s.iter().zip(&noise).map(|(&s, &u)| mix(s, u, w)).collect();
        Ok(spearman(&d, &zhat)?.statistic)
    };

    // |ρ| falls from 1 at w = 0 to about 0 at w = 1
    let goal = target.abs();
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut w = 0.5;
    for _ in 0..60 {
        w = 0.5 * (lo + hi);
        let rho = measure(w)?.abs();
        if (rho - goal).abs() <= CALIBRATION_TOLERANCE / 8.0 {
            break;
        }
        if rho > goal {
            lo = w;
        } else {
            hi = w;
        }
    }
    let achieved = measure(w)?.abs();
    if (achieved - goal).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::Numeric(format!(
            "depth noise calibration reached {achieved:.4}, target {goal:.4}"
        )));
    }
    log::debug!("calibrated noise weight {w:.6} for target {target}");
    Ok(w)
}

/// Spearman correlation between depth readings and z.
pub fn measure_correlation(depths: &[f64], zs: &[f64]) -> Result<f64> {
    Ok(spearman(depths, zs)?.statistic)
}

/// Project every frame into its camera and attach pixel coordinates and
/// simulated depth. z is normalized over the whole dataset, and frames are
/// processed in stored order from a single seeded stream.
pub fn observe_dataset(
    dataset: &Dataset,
    cameras: &CameraSet,
    cfg: &DepthModelConfig,
) -> Result<Dataset> {
    let mut poses = Vec::with_capacity(dataset.frames.len());
    for f in &dataset.frames {
        let cam = cameras
            .get(&f.camera_id)
            .ok_or_else(|| Error::Data(format!("no calibration for camera {}", f.camera_id)))?;
        poses.push(cam.to_camera(&f.pose_world)?);
    }
    let zs: Vec<f64> = poses
        .iter()
        .flat_map(|p| p.joints.iter().map(|v| v.z))
        .collect();
    let range = ZRange::of(zs.iter().copied())?;
    let sim = DepthSimulator::new(cfg.clone(), Some(&zs))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = dataset.clone();
    for (f, pose) in out.frames.iter_mut().zip(&poses) {
        let k = &cameras[&f.camera_id].intrinsics;
        let px = project_pose(pose, k)?;
        f.pixels = Some(std::array::from_fn(|j| [px[j].r, px[j].s]));
        f.depth = Some(sim.simulate(pose, range, &mut rng)?);
    }
    Ok(out)
}

/// Dense depth map, row-major. Gradient losses need at least 2×2.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dimension(
                "non-empty image",
                format!("{height}x{width}"),
            ));
        }
        if data.len() != height * width {
            return Err(Error::dimension(height * width, data.len()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite depth pixel".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    fn residual(&self, other: &DepthImage) -> Result<Vec<f64>> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect())
    }
}

/// Mean squared per-pixel difference.
pub fn loss_mse(y: &DepthImage, y_hat: &DepthImage) -> Result<f64> {
    let r = y.residual(y_hat)?;
    Ok(r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64)
}

/// Mean absolute forward-difference gradient of the residual in x and y;
/// the difference past the last column/row is taken as zero.
pub fn loss_grad(y: &DepthImage, y_hat: &DepthImage) -> Result<f64> {
    let r = y.residual(y_hat)?;
    let (h, w) = y.shape();
    if h < 2 || w < 2 {
        return Err(Error::dimension("at least 2x2", format!("{h}x{w}")));
    }
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = r[i * w + j];
            if j + 1 < w {
                total += (r[i * w + j + 1] - v).abs();
            }
            if i + 1 < h {
                total += (r[(i + 1) * w + j] - v).abs();
            }
        }
    }
    Ok(total / (h * w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::FrameKind;
    use nalgebra::Vector3;

    fn uniform_z(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(3000.0..7000.0)).collect()
    }

    fn cfg(target: f64) -> DepthModelConfig {
        DepthModelConfig {
            target_spearman: target,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn perfect_depth_is_exact() {
        let sim = DepthSimulator::new(cfg(1.0), None).unwrap();
        assert_eq!(sim.noise_weight, 0.0);
        let zs = uniform_z(500, 1);
        let d = sim
            .simulate_values(&zs, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        for (a, b) in d.iter().zip(&zs) {
            assert!((a - b).abs() <= 1e-9 * b);
        }
        assert_eq!(measure_correlation(&d, &zs).unwrap(), 1.0);
    }

    #[test]
    fn calibration_hits_targets() {
        for target in [0.0, 0.3, 0.6, 0.9, -0.3] {
            let zs = uniform_z(5000, 2);
            let sim = DepthSimulator::new(cfg(target), Some(&zs)).unwrap();
            let d = sim
                .simulate_values(&zs, &mut ChaCha8Rng::seed_from_u64(9))
                .unwrap();
            let rho = measure_correlation(&d, &zs).unwrap();
            assert!((rho - target).abs() <= 0.05, "target {target} got {rho}");
            assert!(d.iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn occlusion_lowers_correlation() {
        let zs = uniform_z(5000, 3);
        let base = DepthSimulator::new(cfg(0.6), Some(&zs)).unwrap();
        let occluded = DepthSimulator {
            cfg: DepthModelConfig {
                occlusion_prob: 0.3,
                occlusion_depth_factor: 0.5,
                ..base.cfg.clone()
            },
            ..base.clone()
        };
        let mut a = 0.0;
        let mut b = 0.0;
        for seed in 0..5 {
            let da = base
                .simulate_values(&zs, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            let db = occluded
                .simulate_values(&zs, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            a += measure_correlation(&da, &zs).unwrap();
            b += measure_correlation(&db, &zs).unwrap();
        }
        assert!(b < a, "{b} !< {a}");
    }

    #[test]
    fn rejects_non_positive_z() {
        let sim = DepthSimulator::new(cfg(1.0), None).unwrap();
        let mut pose = Pose3D::zeros(FrameKind::Camera);
        for p in pose.joints.iter_mut() {
            *p = Vector3::new(0.0, 0.0, 1000.0);
        }
        pose.joints[3].z = -5.0;
        let range = ZRange {
            min: 500.0,
            max: 1500.0,
        };
        assert!(matches!(
            sim.simulate(&pose, range, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(DepthModelConfig {
            target_spearman: 1.5,
            ..cfg(0.0)
        }
        .validate()
        .is_err());
        assert!(DepthModelConfig {
            occlusion_prob: 1.0,
            ..cfg(0.0)
        }
        .validate()
        .is_err());
        assert!(DepthModelConfig {
            noise_scale: Some(2.0),
            ..cfg(0.0)
        }
        .validate()
        .is_err());
        assert!(DepthModelConfig {
            monotone_distortion: 0.0,
            ..cfg(0.0)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn correlation_examples() {
        let z = [1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        assert_eq!(measure_correlation(&z, &z).unwrap(), 1.0);
        assert_eq!(measure_correlation(&neg, &z).unwrap(), -1.0);
        assert!((measure_correlation(&[1.0, 3.0, 2.0, 4.0], &z).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(
            measure_correlation(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::SampleSize { .. })
        ));
    }

    #[test]
    fn loss_examples() {
        let two = DepthImage::filled(3, 5, 2.0).unwrap();
        let zero = DepthImage::filled(3, 5, 0.0).unwrap();
        assert_eq!(loss_mse(&two, &two).unwrap(), 0.0);
        assert_eq!(loss_mse(&two, &zero).unwrap(), 4.0);
        assert_eq!(loss_grad(&two, &zero).unwrap(), 0.0);

        let y = DepthImage::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let z2 = DepthImage::filled(2, 2, 0.0).unwrap();
        assert_eq!(loss_grad(&y, &z2).unwrap(), 0.5);
        assert_eq!(loss_grad(&y, &y).unwrap(), 0.0);

        let a = DepthImage::new(1, 2, vec![0.0, 0.0]).unwrap();
        let b = DepthImage::new(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(loss_mse(&a, &b).unwrap(), 12.5);
        assert!(matches!(loss_grad(&a, &b), Err(Error::Dimension { .. })));

        let small = DepthImage::filled(2, 3, 0.0).unwrap();
        assert!(matches!(
            loss_mse(&two, &small),
            Err(Error::Dimension { .. })
        ));
        assert!(DepthImage::new(0, 4, vec![]).is_err());
    }
}
