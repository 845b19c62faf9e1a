//! Residual lifting network with manual backpropagation.
//!
//! Layout: input Dense → `n_residual_blocks` × ([Dense, BN, ReLU, Dropout] × 2
//! plus additive skip) → output Dense. Activations are rows: `X (batch × in)
//! · W (in × out) + b`.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type of the network.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub n_joints: usize,
    /// Feed a depth reading per joint alongside (u, v).
    pub use_depth: bool,
    pub hidden_width: usize,
    pub n_residual_blocks: usize,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub activation: Activation,
}

impl NetConfig {
    /// Width 256, two blocks.
    pub fn desk() -> Self {
        Self {
            n_joints: crate::skeleton::N_JOINTS,
            use_depth: true,
            hidden_width: 256,
            n_residual_blocks: 2,
            dropout_rate: 0.5,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            activation: Activation::Relu,
        }
    }

    /// Width 1024, three blocks (about 7M parameters).
    pub fn full() -> Self {
        Self {
            hidden_width: 1024,
            n_residual_blocks: 3,
            ..Self::desk()
        }
    }

    pub fn coords_per_joint(&self) -> usize {
        if self.use_depth {
            3
        } else {
            2
        }
    }

    pub fn input_dim(&self) -> usize {
        self.coords_per_joint() * self.n_joints
    }

    /// Root-relative 3D coordinates of the non-root joints.
    pub fn output_dim(&self) -> usize {
        3 * (self.n_joints - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_joints < 2 {
            return bad(format!("n_joints {} must be >= 2", self.n_joints));
        }
        if self.hidden_width < 8 {
            return bad(format!("hidden_width {} must be >= 8", self.hidden_width));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.bn_epsilon > 0.0) {
            return bad(format!("bn_epsilon {} must be > 0", self.bn_epsilon));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return bad(format!("bn_momentum {} outside (0, 1)", self.bn_momentum));
        }
        Ok(())
    }

    pub fn n_parameters(&self) -> usize {
        let h = self.hidden_width;
        let dense = |i: usize, o: usize| i * o + o;
        dense(self.input_dim(), h)
            + self.n_residual_blocks * 2 * (dense(h, h) + 2 * h)
            + dense(h, self.output_dim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Dense<F> {
    fn zeros(i: usize, o: usize) -> Self {
        Self {
            w: Array2::zeros((i, o)),
            b: Array1::zeros(o),
        }
    }

    fn apply(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

impl<F: Real> BatchNorm<F> {
    fn identity(n: usize) -> Self {
        Self {
            gamma: Array1::ones(n),
            beta: Array1::zeros(n),
            running_mean: Array1::zeros(n),
            running_var: Array1::ones(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub dense1: Dense<F>,
    pub bn1: BatchNorm<F>,
    pub dense2: Dense<F>,
    pub bn2: BatchNorm<F>,
}

/// Weights, BN parameters and BN running statistics. The same shape is
/// used for gradients, where the running statistics stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<F> {
    pub cfg: NetConfig,
    pub input: Dense<F>,
    pub blocks: Vec<Block<F>>,
    pub output: Dense<F>,
    /// Bumped on every parameter update so stale caches can be detected.
    pub generation: u64,
}

impl<F: Real> NetParams<F> {
    /// All-zero parameters (BN γ = 1, running variance 1).
    pub fn zeros(cfg: &NetConfig) -> Self {
        let h = cfg.hidden_width;
        Self {
            cfg: cfg.clone(),
            input: Dense::zeros(cfg.input_dim(), h),
            blocks: (0..cfg.n_residual_blocks)
                .map(|_| Block {
                    dense1: Dense::zeros(h, h),
                    bn1: BatchNorm::identity(h),
                    dense2: Dense::zeros(h, h),
                    bn2: BatchNorm::identity(h),
                })
                .collect(),
            output: Dense::zeros(h, cfg.output_dim()),
            generation: 0,
        }
    }

    fn zeros_like(&self) -> Self {
        let mut g = Self::zeros(&self.cfg);
        for b in &mut g.blocks {
            for bn in [&mut b.bn1, &mut b.bn2] {
                bn.gamma.fill(F::zero());
                bn.running_var.fill(F::zero());
            }
        }
        g
    }

    /// Trainable tensors in a fixed order (see [`NetParams::tensor_names`]).
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = vec![
            self.input.w.as_slice().expect("standard layout"),
            self.input.b.as_slice().expect("standard layout"),
        ];
        for b in &self.blocks {
            out.extend([
                b.dense1.w.as_slice().expect("standard layout"),
                b.dense1.b.as_slice().expect("standard layout"),
                b.bn1.gamma.as_slice().expect("standard layout"),
                b.bn1.beta.as_slice().expect("standard layout"),
                b.dense2.w.as_slice().expect("standard layout"),
                b.dense2.b.as_slice().expect("standard layout"),
                b.bn2.gamma.as_slice().expect("standard layout"),
                b.bn2.beta.as_slice().expect("standard layout"),
            ]);
        }
        out.push(self.output.w.as_slice().expect("standard layout"));
        out.push(self.output.b.as_slice().expect("standard layout"));
        out
    }

    /// Mutable trainable tensors, same order as [`NetParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        out.push(self.input.w.as_slice_mut().expect("standard layout"));
        out.push(self.input.b.as_slice_mut().expect("standard layout"));
        for b in &mut self.blocks {
            out.push(b.dense1.w.as_slice_mut().expect("standard layout"));
            out.push(b.dense1.b.as_slice_mut().expect("standard layout"));
            out.push(b.bn1.gamma.as_slice_mut().expect("standard layout"));
            out.push(b.bn1.beta.as_slice_mut().expect("standard layout"));
            out.push(b.dense2.w.as_slice_mut().expect("standard layout"));
            out.push(b.dense2.b.as_slice_mut().expect("standard layout"));
            out.push(b.bn2.gamma.as_slice_mut().expect("standard layout"));
            out.push(b.bn2.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.w.as_slice_mut().expect("standard layout"));
        out.push(self.output.b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["input.w".to_string(), "input.b".to_string()];
        for i in 0..self.blocks.len() {
            for t in [
                "dense1.w",
                "dense1.b",
                "bn1.gamma",
                "bn1.beta",
                "dense2.w",
                "dense2.b",
                "bn2.gamma",
                "bn2.beta",
            ] {
                names.push(format!("block{i}.{t}"));
            }
        }
        names.extend(["output.w".to_string(), "output.b".to_string()]);
        names
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input.w.shape().to_vec(), self.input.b.shape().to_vec()];
        for b in &self.blocks {
            for s in [
                b.dense1.w.shape(),
                b.dense1.b.shape(),
                b.bn1.gamma.shape(),
                b.bn1.beta.shape(),
                b.dense2.w.shape(),
                b.dense2.b.shape(),
                b.bn2.gamma.shape(),
                b.bn2.beta.shape(),
            ] {
                shapes.push(s.to_vec());
            }
        }
        shapes.push(self.output.w.shape().to_vec());
        shapes.push(self.output.b.shape().to_vec());
        shapes
    }

    /// BN layers in forward order.
    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm<F>> {
        self.blocks.iter().flat_map(|b| [&b.bn1, &b.bn2])
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm<F>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.bn1, &mut b.bn2])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
            && self.batch_norms().all(|bn| {
                bn.running_mean
                    .iter()
                    .chain(&bn.running_var)
                    .all(|v| v.is_finite())
            })
    }

    /// Fold the batch statistics recorded in `cache` into the running
    /// statistics: `running = momentum · running + (1 − momentum) · batch`.
    pub fn absorb_batch_stats(&mut self, cache: &Cache<F>) -> Result<()> {
        if cache.generation != self.generation || cache.blocks.len() != self.blocks.len() {
            return Err(Error::Contract("cache does not match parameters".into()));
        }
        let m = F::of(self.cfg.bn_momentum);
        let one_m = F::one() - m;
        let stats = cache.blocks.iter().flat_map(|b| [&b.bn1, &b.bn2]);
        for (bn, c) in self.batch_norms_mut().zip(stats) {
            Zip::from(&mut bn.running_mean)
                .and(&c.mean)
                .for_each(|r, &b| *r = m * *r + one_m * b);
            Zip::from(&mut bn.running_var)
                .and(&c.var)
                .for_each(|r, &b| *r = m * *r + one_m * b);
        }
        Ok(())
    }
}

/// Glorot/Xavier uniform weights, zero biases, identity BN.
pub fn xavier_init<F: Real>(cfg: &NetConfig, seed: u64) -> Result<NetParams<F>> {
    cfg.validate()?;
    let mut p = NetParams::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |w: &mut Array2<F>| {
        let (i, o) = w.dim();
        let limit = (6.0 / (i + o) as f64).sqrt();
        w.mapv_inplace(|_| F::of(rng.random_range(-limit..=limit)));
    };
    fill(&mut p.input.w);
    for b in &mut p.blocks {
        fill(&mut b.dense1.w);
        fill(&mut b.dense2.w);
    }
    fill(&mut p.output.w);
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct BnCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
    /// BN output, i.e. the ReLU input.
    pre: Array2<F>,
    mean: Array1<F>,
    var: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    h_in: Array2<F>,
    bn1: BnCache<F>,
    mask1: Option<Array2<F>>,
    /// Input to the second dense layer.
    d1: Array2<F>,
    bn2: BnCache<F>,
    mask2: Option<Array2<F>>,
}

/// Train-mode intermediates needed by [`backward`].
#[derive(Debug, Clone)]
pub struct Cache<F> {
    generation: u64,
    x: Array2<F>,
    blocks: Vec<BlockCache<F>>,
    h_last: Array2<F>,
    output: Array2<F>,
}

impl<F: Real> Cache<F> {
    pub fn output(&self) -> &Array2<F> {
        &self.output
    }

    /// Signs of every ReLU input; used to detect kink crossings.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.blocks
            .iter()
            .flat_map(|b| b.bn1.pre.iter().chain(b.bn2.pre.iter()))
            .map(|&v| v > F::zero())
            .collect()
    }

    /// Batch variance seen by BN layer `layer` ∈ {0, 1} of block `block`.
    pub fn bn_batch_var(&self, block: usize, layer: usize) -> &Array1<F> {
        let b = &self.blocks[block];
        if layer == 0 {
            &b.bn1.var
        } else {
            &b.bn2.var
        }
    }

    /// BN output (pre-ReLU) of block `block`, layer `layer` ∈ {0, 1}.
    pub fn bn_output(&self, block: usize, layer: usize) -> &Array2<F> {
        let b = &self.blocks[block];
        if layer == 0 {
            &b.bn1.pre
        } else {
            &b.bn2.pre
        }
    }
}

fn bn_train<F: Real>(a: &Array2<F>, bn: &BatchNorm<F>, eps: F) -> BnCache<F> {
    let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = a - &mean;
    let var = centered
        .mapv(|v| v * v)
        .mean_axis(Axis(0))
        .expect("non-empty batch");
    let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
    let xhat = centered * &inv_std;
    let pre = &xhat * &bn.gamma + &bn.beta;
    BnCache {
        xhat,
        inv_std,
        pre,
        mean,
        var,
    }
}

fn bn_infer<F: Real>(a: &Array2<F>, bn: &BatchNorm<F>, eps: F) -> Array2<F> {
    let scale = Zip::from(&bn.gamma)
        .and(&bn.running_var)
        .map_collect(|&g, &v| g / (v + eps).sqrt());
    let shift = Zip::from(&bn.beta)
        .and(&bn.running_mean)
        .and(&scale)
        .map_collect(|&b, &m, &s| b - m * s);
    a * &scale + &shift
}

fn relu<F: Real>(a: &Array2<F>) -> Array2<F> {
    a.mapv(|v| v.max(F::zero()))
}

fn dropout_mask<F: Real>(shape: (usize, usize), p: f64, rng: &mut impl Rng) -> Option<Array2<F>> {
    if p == 0.0 {
        return None;
    }
    let keep = F::of(1.0 / (1.0 - p));
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() >= p {
            keep
        } else {
            F::zero()
        }
    }))
}

fn check_input<F: Real>(params: &NetParams<F>, x: &Array2<F>) -> Result<()> {
    if x.ncols() != params.cfg.input_dim() {
        return Err(Error::dimension(
            format!("{} input columns", params.cfg.input_dim()),
            x.ncols(),
        ));
    }
    if x.nrows() == 0 {
        return Err(Error::SampleSize {
            got: 0,
            needed: "batch >= 1".into(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite network input".into()));
    }
    Ok(())
}

/// Run the network. Train mode uses batch statistics and dropout and
/// returns the cache for [`backward`]; infer mode uses running statistics,
/// never touches `rng`, and returns no cache.
pub fn forward<F: Real>(
    params: &NetParams<F>,
    x: &Array2<F>,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(Array2<F>, Option<Cache<F>>)> {
    match mode {
        Mode::Infer => Ok((forward_infer(params, x)?, None)),
        Mode::Train => {
            let cache = forward_train(params, x, rng)?;
            Ok((cache.output.clone(), Some(cache)))
        }
    }
}

pub fn forward_infer<F: Real>(params: &NetParams<F>, x: &Array2<F>) -> Result<Array2<F>> {
    check_input(params, x)?;
    let eps = F::of(params.cfg.bn_epsilon);
    let mut h = params.input.apply(x);
    for b in &params.blocks {
        let r1 = relu(&bn_infer(&b.dense1.apply(&h), &b.bn1, eps));
        let r2 = relu(&bn_infer(&b.dense2.apply(&r1), &b.bn2, eps));
        h = h + r2;
    }
    Ok(params.output.apply(&h))
}

pub fn forward_train<F: Real>(
    params: &NetParams<F>,
    x: &Array2<F>,
    rng: &mut impl Rng,
) -> Result<Cache<F>> {
    check_input(params, x)?;
    if x.nrows() < 2 {
        return Err(Error::SampleSize {
            got: x.nrows(),
            needed: "train-mode batch statistics need batch >= 2".into(),
        });
    }
    let eps = F::of(params.cfg.bn_epsilon);
    let p = params.cfg.dropout_rate;
    let mut h = params.input.apply(x);
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for b in &params.blocks {
        let bn1 = bn_train(&b.dense1.apply(&h), &b.bn1, eps);
        let mask1 = dropout_mask(bn1.pre.dim(), p, rng);
        let mut d1 = relu(&bn1.pre);
        if let Some(m) = &mask1 {
            d1 *= m;
        }
        let bn2 = bn_train(&b.dense2.apply(&d1), &b.bn2, eps);
        let mask2 = dropout_mask(bn2.pre.dim(), p, rng);
        let mut d2 = relu(&bn2.pre);
        if let Some(m) = &mask2 {
            d2 *= m;
        }
        let h_next = &h + &d2;
        blocks.push(BlockCache {
            h_in: h,
            bn1,
            mask1,
            d1,
            bn2,
            mask2,
        });
        h = h_next;
    }
    let output = params.output.apply(&h);
    Ok(Cache {
        generation: params.generation,
        x: x.clone(),
        blocks,
        h_last: h,
        output,
    })
}

fn check_targets<F: Real>(y_hat: &Array2<F>, y: &Array2<F>, n_joints: usize) -> Result<()> {
    if y_hat.dim() != y.dim() {
        return Err(Error::dimension(
            format!("{:?}", y_hat.dim()),
            format!("{:?}", y.dim()),
        ));
    }
    if n_joints == 0 || y.nrows() == 0 {
        return Err(Error::SampleSize {
            got: y.nrows(),
            needed: "non-empty batch".into(),
        });
    }
    Ok(())
}

/// Batch mean of `(1/J) Σ_j ‖ŷ_j − y_j‖²`, where `J` counts every joint of
/// the skeleton (the root contributes zero).
pub fn loss_reconstruction<F: Real>(
    y_hat: &Array2<F>,
    y: &Array2<F>,
    n_joints: usize,
) -> Result<F> {
    check_targets(y_hat, y, n_joints)?;
    let sq = Zip::from(y_hat)
        .and(y)
        .fold(F::zero(), |acc, &a, &b| acc + (a - b) * (a - b));
    Ok(sq / F::of((y.nrows() * n_joints) as f64))
}

/// Gradient of [`loss_reconstruction`] with respect to `y_hat`.
pub fn loss_gradient<F: Real>(
    y_hat: &Array2<F>,
    y: &Array2<F>,
    n_joints: usize,
) -> Result<Array2<F>> {
    check_targets(y_hat, y, n_joints)?;
    let scale = F::of(2.0 / (y.nrows() * n_joints) as f64);
    Ok((y_hat - y) * scale)
}

fn bn_backward<F: Real>(
    dy: &Array2<F>,
    c: &BnCache<F>,
    bn: &BatchNorm<F>,
    g: &mut BatchNorm<F>,
) -> Array2<F> {
    let batch = F::of(dy.nrows() as f64);
    let dy_xhat = dy * &c.xhat;
    let sum_dy = dy.sum_axis(Axis(0));
    let sum_dy_xhat = dy_xhat.sum_axis(Axis(0));
    g.gamma = sum_dy_xhat.clone();
    g.beta = sum_dy.clone();
    let k = Zip::from(&bn.gamma)
        .and(&c.inv_std)
        .map_collect(|&gm, &is| gm * is / batch);
    let mut dx = dy * batch;
    dx -= &sum_dy;
    dx -= &(&c.xhat * &sum_dy_xhat);
    dx * &k
}

fn relu_backward<F: Real>(
    mut d: Array2<F>,
    pre: &Array2<F>,
    mask: &Option<Array2<F>>,
) -> Array2<F> {
    if let Some(m) = mask {
        d *= m;
    }
    Zip::from(&mut d).and(pre).for_each(|g, &p| {
        if p <= F::zero() {
            *g = F::zero();
        }
    });
    d
}

/// Gradients of [`loss_reconstruction`] (with `n_joints` from the config)
/// for every trainable tensor.
pub fn backward<F: Real>(
    params: &NetParams<F>,
    cache: &Cache<F>,
    y: &Array2<F>,
) -> Result<NetParams<F>> {
    if cache.generation != params.generation || cache.blocks.len() != params.blocks.len() {
        return Err(Error::Contract(
            "cache was produced by different parameters".into(),
        ));
    }
    if cache.output.dim() != y.dim() {
        return Err(Error::Contract(format!(
            "cache batch {:?} does not match targets {:?}",
            cache.output.dim(),
            y.dim()
        )));
    }
    let mut g = params.zeros_like();
    let dy = loss_gradient(&cache.output, y, params.cfg.n_joints)?;

    g.output.w = cache.h_last.t().dot(&dy);
    g.output.b = dy.sum_axis(Axis(0));
    let mut dh = dy.dot(&params.output.w.t());

    for (i, (b, c)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let gb = &mut g.blocks[i];
        let dpre2 = relu_backward(dh.clone(), &c.bn2.pre, &c.mask2);
        let da2 = bn_backward(&dpre2, &c.bn2, &b.bn2, &mut gb.bn2);
        gb.dense2.w = c.d1.t().dot(&da2);
        gb.dense2.b = da2.sum_axis(Axis(0));
        let dd1 = da2.dot(&b.dense2.w.t());
        let dpre1 = relu_backward(dd1, &c.bn1.pre, &c.mask1);
        let da1 = bn_backward(&dpre1, &c.bn1, &b.bn1, &mut gb.bn1);
        gb.dense1.w = c.h_in.t().dot(&da1);
        gb.dense1.b = da1.sum_axis(Axis(0));
        dh = dh + da1.dot(&b.dense1.w.t());
    }

    g.input.w = cache.x.t().dot(&dh);
    g.input.b = dh.sum_axis(Axis(0));
    Ok(g)
}
