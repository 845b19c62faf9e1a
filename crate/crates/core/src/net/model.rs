//! Training loop, the trained model and its file format.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::layers::{
    backward, forward_infer, forward_train, loss_reconstruction, xavier_init, NetConfig, NetParams,
    Real,
};
use super::preprocess::{pose_from_row, prepare, FrameInput, NormStats};
use crate::camera::CameraSet;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::skeleton::Pose3D;

pub const MODEL_VERSION: &str = "depthlift-net-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 70,
            batch_size: 1024,
            learning_rate: 0.01,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Train on already standardized inputs and targets. Returns the final
/// parameters and the per-epoch mean loss. Mini-batches with fewer than
/// two samples are skipped since batch normalization needs two.
pub fn fit_standardized<F: Real>(
    x: &Array2<F>,
    y: &Array2<F>,
    cfg: &NetConfig,
    tcfg: &TrainConfig,
) -> Result<(NetParams<F>, Vec<f64>)> {
    cfg.validate()?;
    tcfg.validate()?;
    if x.nrows() != y.nrows() {
        return Err(Error::dimension(x.nrows(), y.nrows()));
    }
    if x.nrows() < 2 {
        return Err(Error::Data("training needs at least two frames".into()));
    }
    let mut params: NetParams<F> = xavier_init(cfg, tcfg.seed)?;
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    dropout_rng.set_stream(2);

    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);
    for epoch in 0..tcfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let cache = forward_train(&params, &xb, &mut dropout_rng)?;
            let loss = loss_reconstruction(cache.output(), &yb, cfg.n_joints)?
                .to_f64()
                .unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged in epoch {}",
                    epoch + 1
                )));
            }
            let grads = backward(&params, &cache, &yb)?;
            params.absorb_batch_stats(&cache)?;
            adam_step(
                &mut params,
                &grads,
                &mut adam,
                tcfg.learning_rate,
                &tcfg.adam,
            )?;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let mean = total / seen.max(1) as f64;
        log::info!("epoch {}/{}: loss {mean:.6}", epoch + 1, tcfg.epochs);
        history.push(mean);
    }
    if !params.is_finite() {
        return Err(Error::Numeric(
            "training produced non-finite parameters".into(),
        ));
    }
    Ok((params, history))
}

/// Trained network plus the normalization it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingModel {
    pub params: NetParams<f32>,
    pub stats: NormStats,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LiftingModel,
    pub loss_history: Vec<f64>,
}

fn to_f32(a: &Array2<f64>) -> Array2<f32> {
    a.mapv(|v| v as f32)
}

/// Fit a lifting network on a dataset. Inputs are per-joint `(u, v, d)`
/// (or `(u, v)` when `cfg.use_depth` is false); targets are root-centred
/// camera-frame poses. Normalization statistics come from `train` only.
pub fn fit(
    train: &Dataset,
    cameras: &CameraSet,
    cfg: &NetConfig,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.n_joints != crate::skeleton::N_JOINTS {
        return Err(Error::Config(format!(
            "pose lifting needs n_joints = {}",
            crate::skeleton::N_JOINTS
        )));
    }
    let (x, y) = prepare(train, cameras, cfg.use_depth)?;
    let stats = NormStats::compute(&x, &y)?;
    let xs = to_f32(&stats.standardize_inputs(&x)?);
    let ys = to_f32(&stats.standardize_outputs(&y)?);
    let (params, loss_history) = fit_standardized(&xs, &ys, cfg, tcfg)?;
    Ok(TrainOutcome {
        model: LiftingModel { params, stats },
        loss_history,
    })
}

impl LiftingModel {
    pub fn config(&self) -> &NetConfig {
        &self.params.cfg
    }

    /// Root-centred camera-frame poses for a batch of frames.
    pub fn predict_batch(&self, inputs: &[FrameInput]) -> Result<Vec<Pose3D>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let cfg = self.config();
        let mut x = Array2::zeros((inputs.len(), cfg.input_dim()));
        for (i, input) in inputs.iter().enumerate() {
            x.row_mut(i)
                .assign(&Array1::from(input.to_row(cfg.use_depth)?));
        }
        let xs = to_f32(&self.stats.standardize_inputs(&x)?);
        let ys = forward_infer(&self.params, &xs)?.mapv(f64::from);
        let y = self.stats.destandardize_outputs(&ys)?;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite prediction".into()));
        }
        Ok(y.rows()
            .into_iter()
            .map(|r| pose_from_row(r.as_slice().expect("row")))
            .collect())
    }

    pub fn predict(&self, input: &FrameInput) -> Result<Pose3D> {
        Ok(self.predict_batch(std::slice::from_ref(input))?.remove(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile::from_model(self);
        let text = serde_json::to_string(&file).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        file.into_model()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    config: NetConfig,
    norm: NormStats,
    tensors: Vec<TensorRecord>,
}

fn buffer_names(n_blocks: usize) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..n_blocks {
        for bn in ["bn1", "bn2"] {
            names.push(format!("block{i}.{bn}.running_mean"));
            names.push(format!("block{i}.{bn}.running_var"));
        }
    }
    names
}

impl ModelFile {
    fn from_model(m: &LiftingModel) -> Self {
        let p = &m.params;
        let mut tensors: Vec<TensorRecord> = p
            .tensor_names()
            .into_iter()
            .zip(p.tensor_shapes())
            .zip(p.tensors())
            .map(|((name, shape), data)| TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        let buffers = p
            .batch_norms()
            .flat_map(|bn| [&bn.running_mean, &bn.running_var]);
        for (name, b) in buffer_names(p.blocks.len()).into_iter().zip(buffers) {
            tensors.push(TensorRecord {
                name,
                shape: vec![b.len()],
                data: b.to_vec(),
            });
        }
        Self {
            version: MODEL_VERSION.into(),
            config: p.cfg.clone(),
            norm: m.stats.clone(),
            tensors,
        }
    }

    fn into_model(self) -> Result<LiftingModel> {
        if self.version != MODEL_VERSION {
            return Err(Error::Schema(format!(
                "model version {:?}, expected {MODEL_VERSION:?}",
                self.version
            )));
        }
        self.config.validate()?;
        let mut params: NetParams<f32> = NetParams::zeros(&self.config);
        let mut by_name: std::collections::HashMap<String, TensorRecord> = self
            .tensors
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();
        let mut take = |name: &str, shape: &[usize], dst: &mut [f32]| -> Result<()> {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Schema(format!("model file lacks tensor {name}")))?;
            if t.shape != shape || t.data.len() != dst.len() {
                return Err(Error::Schema(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            dst.copy_from_slice(&t.data);
            Ok(())
        };
        let names = params.tensor_names();
        let shapes = params.tensor_shapes();
        for ((name, shape), dst) in names.iter().zip(&shapes).zip(params.tensors_mut()) {
            take(name, shape, dst)?;
        }
        let n_blocks = params.blocks.len();
        let bufs = params
            .batch_norms_mut()
            .flat_map(|bn| [&mut bn.running_mean, &mut bn.running_var]);
        for (name, b) in buffer_names(n_blocks).iter().zip(bufs) {
            let len = b.len();
            take(name, &[len], b.as_slice_mut().expect("standard layout"))?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Schema(format!("unexpected tensor {extra}")));
        }
        let dims = [
            (self.norm.input_mean.len(), self.config.input_dim()),
            (self.norm.input_std.len(), self.config.input_dim()),
            (self.norm.output_mean.len(), self.config.output_dim()),
            (self.norm.output_std.len(), self.config.output_dim()),
        ];
        if dims.iter().any(|(a, b)| a != b) {
            return Err(Error::Schema(
                "normalization statistics do not match the network".into(),
            ));
        }
        if !params.is_finite() {
            return Err(Error::Schema("model contains non-finite values".into()));
        }
        Ok(LiftingModel {
            params,
            stats: self.norm,
        })
    }
}
