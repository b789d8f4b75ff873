use super::{Activation, DenseCache, DenseLayer, Param, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;
use rand::Rng;

/// A stack of dense layers with chained dimensions.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    stages: Vec<DenseCache>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("mlp needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config(format!(
                    "mlp layer dims do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// Convenience constructor: `dims = [in, h1, ..., out]`, hidden layers
    /// use `hidden_act`, the last layer `final_act`.
    pub fn with_dims(
        dims: &[usize],
        hidden_act: Activation,
        final_act: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("mlp dims need at least [in, out]"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() { final_act } else { hidden_act };
            layers.push(DenseLayer::new(dims[i], dims[i + 1], act, rng));
        }
        Mlp::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut DenseLayer {
        &mut self.layers[i]
    }

    pub fn forward(&self, x: &Tensor2, cache: &mut MlpCache) -> Result<Tensor2> {
        cache
            .stages
            .resize_with(self.layers.len(), DenseCache::default);
        let mut h = self.layers[0].forward(x, &mut cache.stages[0])?;
        for (layer, stage) in self.layers.iter().zip(cache.stages.iter_mut()).skip(1) {
            h = layer.forward(&h, stage)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, cache: &MlpCache, upstream: &Tensor2) -> Result<Tensor2> {
        if cache.stages.len() != self.layers.len() {
            return Err(Error::state(
                "mlp backward called before forward populated the cache",
            ));
        }
        let mut g = upstream.clone();
        for (layer, stage) in self.layers.iter_mut().zip(&cache.stages).rev() {
            g = layer.backward(stage, &g)?;
        }
        Ok(g)
    }

    /// Input gradient only; the network's own parameters stay untouched.
    pub fn backward_input(&self, cache: &MlpCache, upstream: &Tensor2) -> Result<Tensor2> {
        if cache.stages.len() != self.layers.len() {
            return Err(Error::state(
                "mlp backward called before forward populated the cache",
            ));
        }
        let mut g = upstream.clone();
        for (layer, stage) in self.layers.iter().zip(&cache.stages).rev() {
            g = layer.backward_input(stage, &g)?;
        }
        Ok(g)
    }
}

impl Parameterized for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit_params(&mut |name, p| f(&format!("layer{i}.{name}"), p));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params_mut(&mut |name, p| f(&format!("layer{i}.{name}"), p));
        }
    }
}
