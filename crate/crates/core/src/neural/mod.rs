//! Hand-rolled neural-network building blocks with explicit reverse-mode
//! gradients.
//!
//! Every layer follows the same discipline: `forward(&self, x, &mut cache)`
//! stores whatever the backward pass needs in a caller-owned cache object,
//! and `backward(&mut self, &cache, upstream)` accumulates parameter
//! gradients in place and returns the gradient with respect to the input.
//! Keeping forward `&self` makes evaluation-time purity structural, and
//! caller-owned caches let the diffusion sampler hold one cache per
//! denoising step.

mod adam;
mod attention;
mod dense;
mod gradcheck;
mod mlp;
mod ops;
mod snapshot;

pub use adam::AdamState;
pub use attention::{AttentionBlock, AttentionCache, LayerNorm, LayerNormCache};
pub use dense::{DenseCache, DenseLayer};
pub use gradcheck::{grad_check, grads_close, rel_err, GradCheckReport};
pub use mlp::{Mlp, MlpCache};
pub use ops::{mean_pool, mean_pool_backward, sinusoidal_embed, softmax_rows};
pub use snapshot::{assign_params, read_params, write_params, write_tensor};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;
use rand::Rng;

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl Param {
    pub fn new(value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Activation functions supported by [`DenseLayer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// x * tanh(softplus(x)); smooth, used in the diffusion and critic trunks.
    Mish,
}

fn softplus(x: f64) -> f64 {
    // max(x, 0) + ln(1 + e^{-|x|}) — never overflows.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Mish => x * softplus(x).tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Mish => {
                let t = softplus(x).tanh();
                t + x * (1.0 - t * t) * sigmoid(x)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Mish => "mish",
        }
    }
}

/// Glorot-uniform weight init: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
/// Weight matrices here are (in_dim, out_dim), so fan_in = rows.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor2 {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| limit * (2.0 * rng.gen::<f64>() - 1.0))
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("glorot buffer sized correctly")
}

/// Anything holding named trainable parameters. Visit order is fixed by the
/// implementation and identical between the `&self` / `&mut self` variants,
/// which optimizers and snapshots rely on.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    /// Total number of scalar parameters.
    fn param_elements(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name.to_string()));
        names
    }

    /// All parameter values flattened in visit order.
    fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, p| out.extend_from_slice(p.value.as_slice()));
        out
    }

    /// All gradients flattened in visit order.
    fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, p| out.extend_from_slice(p.grad.as_slice()));
        out
    }
}

/// Bitwise equality of two parameter sets (values only, not gradients).
pub fn params_bitwise_eq(a: &impl Parameterized, b: &impl Parameterized) -> bool {
    let mut va = Vec::new();
    a.visit_params(&mut |name, p| va.push((name.to_string(), p.value.clone())));
    let mut i = 0;
    let mut ok = true;
    b.visit_params(&mut |name, p| {
        if i >= va.len() || va[i].0 != name || !va[i].1.bitwise_eq(&p.value) {
            ok = false;
        }
        i += 1;
    });
    ok && i == va.len()
}

/// Add `delta` to the `flat`-th scalar parameter (visit order). Used by the
/// finite-difference checker.
pub fn perturb_param(net: &mut impl Parameterized, flat: usize, delta: f64) {
    let mut seen = 0usize;
    net.visit_params_mut(&mut |_, p| {
        let n = p.value.len();
        if flat >= seen && flat < seen + n {
            p.value.as_mut_slice()[flat - seen] += delta;
        }
        seen += n;
    });
}

/// In-place Polyak average of two parameter sets: `target <- tau*online +
/// (1-tau)*target`. The two nets must have identical parameter layouts.
pub fn polyak_blend(target: &mut impl Parameterized, online: &impl Parameterized, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(format!("polyak tau {tau} outside [0, 1]")));
    }
    let mut online_vals = Vec::new();
    online.visit_params(&mut |name, p| online_vals.push((name.to_string(), p.value.clone())));
    let mut i = 0;
    let mut err: Option<Error> = None;
    target.visit_params_mut(&mut |name, p| {
        if err.is_some() {
            return;
        }
        match online_vals.get(i) {
            Some((oname, oval)) if oname == name && oval.shape() == p.value.shape() => {
                p.value.scale(1.0 - tau);
                p.value.scaled_add(tau, oval);
            }
            _ => {
                err = Some(Error::shape(format!(
                    "polyak: parameter {i} ({name}) does not match online layout"
                )));
            }
        }
        i += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if i != online_vals.len() {
        return Err(Error::shape(
            "polyak: parameter counts differ between target and online",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mish_reference_values() {
        // mish(0) = 0, mish(large) ~ x, mish(-large) ~ 0.
        assert_eq!(Activation::Mish.apply(0.0), 0.0);
        assert!((Activation::Mish.apply(20.0) - 20.0).abs() < 1e-7);
        assert!(Activation::Mish.apply(-40.0).abs() < 1e-12);
        // Spot value: mish(1) = tanh(ln(1+e)) ≈ 0.8650983882673103.
        assert!((Activation::Mish.apply(1.0) - 0.865_098_388_267_310_3).abs() < 1e-12);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in [Activation::Identity, Activation::Relu, Activation::Mish] {
            for &x in &[-3.0, -0.9, -0.3, 0.4, 1.1, 2.7] {
                let num = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                let ana = act.derivative(x);
                assert!(
                    (num - ana).abs() < 1e-6,
                    "{} at {x}: {num} vs {ana}",
                    act.name()
                );
            }
        }
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!(softplus(800.0).is_finite());
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn glorot_respects_limit() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let w = glorot_uniform(30, 50, &mut rng);
        let limit = (6.0 / 80.0f64).sqrt();
        assert!(w.as_slice().iter().all(|v| v.abs() <= limit));
        // Not degenerate: should fill a good part of the range.
        let max = w.as_slice().iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.5 * limit);
    }
}
