use super::{glorot_uniform, Activation, Param, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;
use rand::Rng;

/// Fully connected layer: `act(x @ w + b)` with `w` of shape
/// (in_dim, out_dim) and a broadcast row bias.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: Param,
    pub b: Param,
    pub activation: Activation,
}

/// Forward-pass intermediates owned by the caller. A fresh (default) cache
/// is empty; backward against an empty cache is a state error.
#[derive(Debug, Clone, Default)]
pub struct DenseCache {
    saved: Option<Saved>,
}

#[derive(Debug, Clone)]
struct Saved {
    x: Tensor2,
    pre: Tensor2,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        DenseLayer {
            w: Param::new(glorot_uniform(in_dim, out_dim, rng)),
            b: Param::new(Tensor2::zeros(1, out_dim)),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.cols()
    }

    pub fn forward(&self, x: &Tensor2, cache: &mut DenseCache) -> Result<Tensor2> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "dense forward: input has {} columns, layer expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let mut pre = x.matmul(&self.w.value);
        let b = self.b.value.row(0);
        for i in 0..pre.rows() {
            let row = pre.row_mut(i);
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        let act = self.activation;
        let out = pre.map(|v| act.apply(v));
        cache.saved = Some(Saved { x: x.clone(), pre });
        Ok(out)
    }

    /// Accumulates dL/dw and dL/db into the layer's gradients and returns
    /// dL/dx.
    pub fn backward(&mut self, cache: &DenseCache, upstream: &Tensor2) -> Result<Tensor2> {
        let (dx, dw, db) = self.backward_parts(cache, upstream)?;
        self.w.grad.add_assign(&dw);
        self.b.grad.add_assign(&db);
        Ok(dx)
    }

    /// Input gradient only; parameter gradients are discarded. Used where a
    /// network contributes to a loss whose gradient must not touch it.
    pub fn backward_input(&self, cache: &DenseCache, upstream: &Tensor2) -> Result<Tensor2> {
        let (dx, _, _) = self.backward_parts(cache, upstream)?;
        Ok(dx)
    }

    fn backward_parts(
        &self,
        cache: &DenseCache,
        upstream: &Tensor2,
    ) -> Result<(Tensor2, Tensor2, Tensor2)> {
        let saved = cache.saved.as_ref().ok_or_else(|| {
            Error::state("dense backward called before forward populated the cache")
        })?;
        if upstream.shape() != saved.pre.shape() {
            return Err(Error::shape(format!(
                "dense backward: upstream is {:?}, expected {:?}",
                upstream.shape(),
                saved.pre.shape()
            )));
        }
        let act = self.activation;
        let mut dpre = saved.pre.map(|v| act.derivative(v));
        dpre = dpre.hadamard(upstream);
        let dw = saved.x.matmul_tn(&dpre);
        let db = dpre.col_sums();
        let dx = dpre.matmul_tb(&self.w.value);
        Ok((dx, dw, db))
    }
}

impl Parameterized for DenseLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w", &self.w);
        f("b", &self.b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn forward_shape_and_identity_math() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut layer = DenseLayer::new(3, 2, Activation::Identity, &mut rng);
        // Overwrite with a known matrix to check the affine map directly.
        layer.w.value =
            Tensor2::from_vec(3, 2, vec![1., 0., 0., 1., 1., 1.]).unwrap();
        layer.b.value = Tensor2::from_vec(1, 2, vec![0.5, -0.5]).unwrap();
        let x = Tensor2::from_vec(1, 3, vec![2., 3., 4.]).unwrap();
        let mut cache = DenseCache::default();
        let y = layer.forward(&x, &mut cache).unwrap();
        assert_eq!(y.as_slice(), &[2. + 4. + 0.5, 3. + 4. - 0.5]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let layer = DenseLayer::new(3, 2, Activation::Relu, &mut rng);
        let x = Tensor2::zeros(4, 5);
        let mut cache = DenseCache::default();
        assert!(matches!(
            layer.forward(&x, &mut cache),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut layer = DenseLayer::new(3, 2, Activation::Mish, &mut rng);
        let cache = DenseCache::default();
        let up = Tensor2::zeros(1, 2);
        assert!(matches!(
            layer.backward(&cache, &up),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn backward_rejects_wrong_upstream_shape() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut layer = DenseLayer::new(3, 2, Activation::Relu, &mut rng);
        let x = Tensor2::zeros(4, 3);
        let mut cache = DenseCache::default();
        layer.forward(&x, &mut cache).unwrap();
        let up = Tensor2::zeros(4, 3);
        assert!(matches!(
            layer.backward(&cache, &up),
            Err(Error::Shape(_))
        ));
    }
}
