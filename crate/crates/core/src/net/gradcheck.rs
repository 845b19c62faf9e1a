//! Central finite-difference check of [`backward`].

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{backward, forward_train, loss_reconstruction, NetParams};
use crate::error::{Error, Result};

/// Denominator floor of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|a − n| / max(|a|, |n|, 1e-6)` over the checked entries.
    pub max_rel_error: f64,
    pub n_checked: usize,
    /// Tensor name, flat index, analytic and numeric value of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    /// Biases of dense layers feeding a batch norm. The normalization removes
    /// them, so their gradient is identically zero and only the absolute
    /// difference `|a − n|` is meaningful.
    pub max_cancelled_abs_error: f64,
    pub n_cancelled: usize,
    /// Entries whose ±h perturbation flipped a ReLU, where the loss is not
    /// differentiable and the difference quotient is meaningless.
    pub n_kink_skipped: usize,
}

fn is_cancelled_by_bn(name: &str) -> bool {
    name.starts_with("block") && name.ends_with(".b")
}

/// Compare analytic gradients with `(L(θ + h) − L(θ − h)) / 2h` for every
/// trainable scalar. Dropout must be disabled so the loss is a function of
/// the parameters alone.
pub fn gradient_check(
    params: &NetParams<f64>,
    x: &Array2<f64>,
    y: &Array2<f64>,
    h: f64,
) -> Result<GradCheck> {
    if params.cfg.dropout_rate != 0.0 {
        return Err(Error::Config(
            "gradient check needs dropout_rate = 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let j = params.cfg.n_joints;
    let cache = forward_train(params, x, &mut rng)?;
    let grads = backward(params, &cache, y)?;
    let pattern = cache.relu_pattern();

    let mut p = params.clone();
    let mut eval = |p: &NetParams<f64>| -> Result<(f64, bool)> {
        let c = forward_train(p, x, &mut rng)?;
        Ok((
            loss_reconstruction(c.output(), y, j)?,
            c.relu_pattern() == pattern,
        ))
    };
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let names = params.tensor_names();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        n_checked: 0,
        worst: None,
        max_cancelled_abs_error: 0.0,
        n_cancelled: 0,
        n_kink_skipped: 0,
    };
    for (t, ga) in analytic.iter().enumerate() {
        let cancelled = is_cancelled_by_bn(&names[t]);
        for (i, &a) in ga.iter().enumerate() {
            let orig = p.tensors()[t][i];
            p.tensors_mut()[t][i] = orig + h;
            let (lp, same_p) = eval(&p)?;
            p.tensors_mut()[t][i] = orig - h;
            let (lm, same_m) = eval(&p)?;
            p.tensors_mut()[t][i] = orig;
            if !(same_p && same_m) {
                out.n_kink_skipped += 1;
                continue;
            }
            let n = (lp - lm) / (2.0 * h);
            if cancelled {
                out.max_cancelled_abs_error = out.max_cancelled_abs_error.max((a - n).abs());
                out.n_cancelled += 1;
                continue;
            }
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR);
            if out.worst.is_none() || rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = Some((names[t].clone(), i, a, n));
            }
            out.n_checked += 1;
        }
    }
    Ok(out)
}
