//! Per-command configuration files (TOML). Every field has a default, and
//! `--dump-config` prints the effective configuration.

use std::path::Path;

use depthlift_core::dataset::Protocol;
use depthlift_core::depth::DepthModelConfig;
use depthlift_core::net::{AdamConfig, NetConfig, TrainConfig};
use depthlift_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Fixed mixing weight or `"auto"` to calibrate it from the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseWeight {
    Fixed(f64),
    Auto(Auto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

impl Default for NoiseWeight {
    fn default() -> Self {
        NoiseWeight::Auto(Auto::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    pub target_spearman: f64,
    pub noise_weight: NoiseWeight,
    pub monotone_distortion: f64,
    pub occlusion_prob: f64,
    pub occlusion_depth_factor: f64,
}

impl Default for DepthSection {
    fn default() -> Self {
        let d = DepthModelConfig::default();
        Self {
            target_spearman: d.target_spearman,
            noise_weight: NoiseWeight::default(),
            monotone_distortion: d.monotone_distortion,
            occlusion_prob: d.occlusion_prob,
            occlusion_depth_factor: d.occlusion_depth_factor,
        }
    }
}

impl DepthSection {
    pub fn model_config(&self, seed: u64) -> DepthModelConfig {
        DepthModelConfig {
            target_spearman: self.target_spearman,
            noise_scale: match self.noise_weight {
                NoiseWeight::Fixed(w) => Some(w),
                NoiseWeight::Auto(_) => None,
            },
            monotone_distortion: self.monotone_distortion,
            occlusion_prob: self.occlusion_prob,
            occlusion_depth_factor: self.occlusion_depth_factor,
            seed: derive_seed(seed, SEED_TAG_DEPTH),
        }
    }
}

/// Nuisance parameters of the depth simulator for sweeps, where the target
/// correlation comes from the sweep level and the noise weight is calibrated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepDepthSection {
    pub monotone_distortion: f64,
    pub occlusion_prob: f64,
    pub occlusion_depth_factor: f64,
}

impl Default for SweepDepthSection {
    fn default() -> Self {
        let d = DepthSection::default();
        Self {
            monotone_distortion: d.monotone_distortion,
            occlusion_prob: d.occlusion_prob,
            occlusion_depth_factor: d.occlusion_depth_factor,
        }
    }
}

impl SweepDepthSection {
    pub fn at_level(&self, target_spearman: f64) -> DepthSection {
        DepthSection {
            target_spearman,
            noise_weight: NoiseWeight::default(),
            monotone_distortion: self.monotone_distortion,
            occlusion_prob: self.occlusion_prob,
            occlusion_depth_factor: self.occlusion_depth_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam: t.adam,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            adam: self.adam,
            seed: derive_seed(seed, SEED_TAG_TRAIN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// 7 subjects are needed for the protocol splits.
    pub subjects: u32,
    pub frames_per_sequence: u32,
    pub cameras: u8,
    pub depth: DepthSection,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            subjects: 7,
            frames_per_sequence: 100,
            cameras: 4,
            depth: DepthSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub seed: u64,
    pub protocol: Protocol,
    pub net: NetConfig,
    pub train: TrainSection,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            protocol: Protocol::P1,
            net: NetConfig::desk(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    Both,
    Aligned,
    Unaligned,
}

impl AlignMode {
    pub fn flags(self) -> &'static [bool] {
        match self {
            AlignMode::Both => &[false, true],
            AlignMode::Aligned => &[true],
            AlignMode::Unaligned => &[false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub protocol: Protocol,
    pub alignment: AlignMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            protocol: Protocol::P1,
            alignment: AlignMode::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Seeds the Shapiro-Wilk subsampling of cells above its size limit.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub seed: u64,
    pub protocol: Protocol,
    /// Target Spearman correlations, one trained model each.
    pub levels: Vec<f64>,
    /// Also train the 2D-only network on the same split and seed.
    pub baseline_2d: bool,
    pub depth: SweepDepthSection,
    pub net: NetConfig,
    pub train: TrainSection,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            protocol: Protocol::P1,
            levels: vec![0.0, 0.3, 0.6, 0.9, 1.0],
            baseline_2d: true,
            depth: SweepDepthSection::default(),
            net: NetConfig::desk(),
            train: TrainSection::default(),
        }
    }
}

impl AblateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("ablation needs at least one level".into()));
        }
        for &l in &self.levels {
            self.depth.at_level(l).model_config(0).validate()?;
        }
        Ok(())
    }
}

/// Configs carrying the run seed, which `--seed` overrides.
pub trait Seeded {
    fn seed_mut(&mut self) -> &mut u64;
}

macro_rules! seeded {
    ($($t:ty),*) => {
        $(impl Seeded for $t {
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.seed
            }
        })*
    };
}

seeded!(
    SynthConfig,
    TrainCmdConfig,
    EvalConfig,
    StatsConfig,
    AblateConfig
);

const SEED_TAG_DEPTH: u64 = 0x6465_7074_6800_0001;
const SEED_TAG_TRAIN: u64 = 0x7472_6169_6e00_0002;

/// Independent sub-seed for one consumer of the run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Read a TOML config, or the defaults when `path` is `None`.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

pub fn to_toml<T: Serialize>(cfg: &T) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config(format!("cannot render config: {e}")))
}
