use super::Parameterized;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Adam with bias correction. First/second moment buffers are kept in the
/// network's parameter visit order; `step` consumes the gradients currently
/// accumulated in each [`super::Param`] (it does not zero them).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl AdamState {
    pub fn new(lr: f64, net: &impl Parameterized) -> Self {
        let mut m = Vec::new();
        net.visit_params(&mut |_, p| m.push(Tensor2::zeros(p.value.rows(), p.value.cols())));
        let v = m.clone();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients stored in `net`.
    pub fn step(&mut self, net: &mut impl Parameterized) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let mut idx = 0usize;
        let mut err: Option<Error> = None;
        let (ms, vs) = (&mut self.m, &mut self.v);
        net.visit_params_mut(&mut |name, p| {
            if err.is_some() {
                return;
            }
            let Some(m) = ms.get_mut(idx) else {
                err = Some(Error::state(format!(
                    "adam: more parameters than moment buffers at {name}"
                )));
                return;
            };
            if m.shape() != p.value.shape() {
                err = Some(Error::shape(format!(
                    "adam: buffer {idx} is {:?} but {name} is {:?}",
                    m.shape(),
                    p.value.shape()
                )));
                return;
            }
            let v = &mut vs[idx];
            let g = p.grad.as_slice();
            let mv = m.as_mut_slice();
            let vv = v.as_mut_slice();
            let pv = p.value.as_mut_slice();
            for i in 0..g.len() {
                let gi = g[i];
                mv[i] = b1 * mv[i] + (1.0 - b1) * gi;
                vv[i] = b2 * vv[i] + (1.0 - b2) * gi * gi;
                let mhat = mv[i] / bc1;
                let vhat = vv[i] / bc2;
                pv[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.m.len() {
            return Err(Error::state(
                "adam: fewer parameters than moment buffers",
            ));
        }
        Ok(())
    }

    /// Moment buffers in visit order, for checkpointing.
    pub fn buffers(&self) -> (&[Tensor2], &[Tensor2]) {
        (&self.m, &self.v)
    }

    /// Restore moment buffers and step counter; shapes must match the
    /// existing layout.
    pub fn restore(&mut self, m: Vec<Tensor2>, v: Vec<Tensor2>, step: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::shape("adam restore: buffer count mismatch"));
        }
        for (new, old) in m.iter().zip(&self.m).chain(v.iter().zip(&self.v)) {
            if new.shape() != old.shape() {
                return Err(Error::shape(format!(
                    "adam restore: buffer shape {:?} != {:?}",
                    new.shape(),
                    old.shape()
                )));
            }
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }
}
