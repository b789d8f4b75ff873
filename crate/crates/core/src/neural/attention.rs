use super::ops::{softmax_rows, softmax_rows_backward};
use super::{Activation, DenseCache, DenseLayer, Mlp, MlpCache, Param, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;
use rand::Rng;

/// Per-row layer normalization with learned scale and offset.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LayerNormCache {
    saved: Option<LnSaved>,
}

#[derive(Debug, Clone)]
struct LnSaved {
    xhat: Tensor2,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(Tensor2::filled(1, dim, 1.0)),
            beta: Param::new(Tensor2::zeros(1, dim)),
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.value.cols()
    }

    pub fn forward(&self, x: &Tensor2, cache: &mut LayerNormCache) -> Result<Tensor2> {
        if x.cols() != self.dim() {
            return Err(Error::shape(format!(
                "layer norm: input width {} != {}",
                x.cols(),
                self.dim()
            )));
        }
        let d = x.cols() as f64;
        let mut xhat = Tensor2::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        let mut out = Tensor2::zeros(x.rows(), x.cols());
        let gamma = self.gamma.value.row(0);
        let beta = self.beta.value.row(0);
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(i);
            let o = out.row_mut(i);
            for j in 0..row.len() {
                let h = (row[j] - mean) * is;
                xh[j] = h;
                o[j] = gamma[j] * h + beta[j];
            }
        }
        cache.saved = Some(LnSaved { xhat, inv_std });
        Ok(out)
    }

    pub fn backward(&mut self, cache: &LayerNormCache, upstream: &Tensor2) -> Result<Tensor2> {
        let saved = cache
            .saved
            .as_ref()
            .ok_or_else(|| Error::state("layer norm backward before forward"))?;
        if upstream.shape() != saved.xhat.shape() {
            return Err(Error::shape(format!(
                "layer norm backward: upstream {:?} vs cached {:?}",
                upstream.shape(),
                saved.xhat.shape()
            )));
        }
        let d = upstream.cols() as f64;
        let gamma = self.gamma.value.row(0).to_vec();
        let mut dx = Tensor2::zeros(upstream.rows(), upstream.cols());
        for i in 0..upstream.rows() {
            let dy = upstream.row(i);
            let xh = saved.xhat.row(i);
            let is = saved.inv_std[i];
            // Parameter grads.
            {
                let dg = self.gamma.grad.row_mut(0);
                let db = self.beta.grad.row_mut(0);
                for j in 0..dy.len() {
                    dg[j] += dy[j] * xh[j];
                    db[j] += dy[j];
                }
            }
            // Input grad: sigma^-1 * (dxhat - mean(dxhat) - xhat*mean(dxhat .* xhat)).
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for j in 0..dy.len() {
                let dxh = dy[j] * gamma[j];
                m1 += dxh;
                m2 += dxh * xh[j];
            }
            m1 /= d;
            m2 /= d;
            let out = dx.row_mut(i);
            for j in 0..dy.len() {
                let dxh = dy[j] * gamma[j];
                out[j] = is * (dxh - m1 - xh[j] * m2);
            }
        }
        Ok(dx)
    }
}

impl Parameterized for LayerNorm {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("gamma", &self.gamma);
        f("beta", &self.beta);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }
}

/// Pre-norm multi-head self-attention block:
///
/// ```text
/// y1 = x + Wo(multihead(LN1(x)))
/// y  = y1 + FF(LN2(y1))
/// ```
///
/// Scores are scaled by 1/sqrt(head_dim); the feed-forward is a two-layer
/// relu MLP back to the model width.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub num_heads: usize,
    pub d_model: usize,
    pub ln1: LayerNorm,
    pub wq: DenseLayer,
    pub wk: DenseLayer,
    pub wv: DenseLayer,
    pub wo: DenseLayer,
    pub ln2: LayerNorm,
    pub ff: Mlp,
}

#[derive(Debug, Clone, Default)]
pub struct AttentionCache {
    saved: Option<AttnSaved>,
}

#[derive(Debug, Clone)]
struct AttnSaved {
    ln1: LayerNormCache,
    q_cache: DenseCache,
    k_cache: DenseCache,
    v_cache: DenseCache,
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    attn: Vec<Tensor2>,
    wo_cache: DenseCache,
    ln2: LayerNormCache,
    ff_cache: MlpCache,
}

impl AttentionBlock {
    pub fn new(d_model: usize, num_heads: usize, ff_hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if num_heads == 0 || d_model % num_heads != 0 {
            return Err(Error::config(format!(
                "attention: d_model {d_model} not divisible by {num_heads} heads"
            )));
        }
        Ok(AttentionBlock {
            num_heads,
            d_model,
            ln1: LayerNorm::new(d_model),
            wq: DenseLayer::new(d_model, d_model, Activation::Identity, rng),
            wk: DenseLayer::new(d_model, d_model, Activation::Identity, rng),
            wv: DenseLayer::new(d_model, d_model, Activation::Identity, rng),
            wo: DenseLayer::new(d_model, d_model, Activation::Identity, rng),
            ln2: LayerNorm::new(d_model),
            ff: Mlp::with_dims(
                &[d_model, ff_hidden, d_model],
                Activation::Relu,
                Activation::Identity,
                rng,
            )?,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn forward(&self, x: &Tensor2, cache: &mut AttentionCache) -> Result<Tensor2> {
        if x.cols() != self.d_model {
            return Err(Error::shape(format!(
                "attention: input width {} != d_model {}",
                x.cols(),
                self.d_model
            )));
        }
        let n = x.rows();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut ln1_c = LayerNormCache::default();
        let h1 = self.ln1.forward(x, &mut ln1_c)?;
        let mut q_c = DenseCache::default();
        let mut k_c = DenseCache::default();
        let mut v_c = DenseCache::default();
        let q = self.wq.forward(&h1, &mut q_c)?;
        let k = self.wk.forward(&h1, &mut k_c)?;
        let v = self.wv.forward(&h1, &mut v_c)?;

        let mut ctx = Tensor2::zeros(n, self.d_model);
        let mut attn = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let lo = h * dh;
            let hi = lo + dh;
            let qh = q.slice_cols(lo, hi);
            let kh = k.slice_cols(lo, hi);
            let vh = v.slice_cols(lo, hi);
            let mut scores = qh.matmul_tb(&kh);
            scores.scale(scale);
            let a = softmax_rows(&scores);
            let ctx_h = a.matmul(&vh);
            for i in 0..n {
                ctx.row_mut(i)[lo..hi].copy_from_slice(ctx_h.row(i));
            }
            attn.push(a);
        }

        let mut wo_c = DenseCache::default();
        let o = self.wo.forward(&ctx, &mut wo_c)?;
        let mut y1 = x.clone();
        y1.add_assign(&o);

        let mut ln2_c = LayerNormCache::default();
        let h2 = self.ln2.forward(&y1, &mut ln2_c)?;
        let mut ff_c = MlpCache::default();
        let f = self.ff.forward(&h2, &mut ff_c)?;
        let mut y = y1;
        y.add_assign(&f);

        cache.saved = Some(AttnSaved {
            ln1: ln1_c,
            q_cache: q_c,
            k_cache: k_c,
            v_cache: v_c,
            q,
            k,
            v,
            attn,
            wo_cache: wo_c,
            ln2: ln2_c,
            ff_cache: ff_c,
        });
        Ok(y)
    }

    pub fn backward(&mut self, cache: &AttentionCache, upstream: &Tensor2) -> Result<Tensor2> {
        let saved = cache
            .saved
            .as_ref()
            .ok_or_else(|| Error::state("attention backward before forward"))?;
        let n = saved.q.rows();
        if upstream.shape() != (n, self.d_model) {
            return Err(Error::shape(format!(
                "attention backward: upstream {:?}, expected ({n}, {})",
                upstream.shape(),
                self.d_model
            )));
        }
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        // y = y1 + ff(ln2(y1)); dL/dy1 = up + ln2_bwd(ff_bwd(up)).
        let dh2 = self.ff.backward(&saved.ff_cache, upstream)?;
        let mut dy1 = self.ln2.backward(&saved.ln2, &dh2)?;
        dy1.add_assign(upstream);

        // y1 = x + wo(ctx).
        let dctx = self.wo.backward(&saved.wo_cache, &dy1)?;

        // Through each attention head.
        let mut dq = Tensor2::zeros(n, self.d_model);
        let mut dk = Tensor2::zeros(n, self.d_model);
        let mut dv = Tensor2::zeros(n, self.d_model);
        for h in 0..self.num_heads {
            let lo = h * dh;
            let hi = lo + dh;
            let dctx_h = dctx.slice_cols(lo, hi);
            let a = &saved.attn[h];
            let qh = saved.q.slice_cols(lo, hi);
            let kh = saved.k.slice_cols(lo, hi);
            let vh = saved.v.slice_cols(lo, hi);

            // ctx_h = a @ vh
            let da = dctx_h.matmul_tb(&vh);
            let dvh = a.matmul_tn(&dctx_h);
            // a = softmax(scores), scores = qh kh^T * scale
            let mut dscores = softmax_rows_backward(a, &da);
            dscores.scale(scale);
            let dqh = dscores.matmul(&kh);
            let dkh = dscores.matmul_tn(&qh);

            for i in 0..n {
                dq.row_mut(i)[lo..hi].copy_from_slice(dqh.row(i));
                dk.row_mut(i)[lo..hi].copy_from_slice(dkh.row(i));
                dv.row_mut(i)[lo..hi].copy_from_slice(dvh.row(i));
            }
        }

        // h1 feeds q, k and v projections.
        let mut dh1 = self.wq.backward(&saved.q_cache, &dq)?;
        dh1.add_assign(&self.wk.backward(&saved.k_cache, &dk)?);
        dh1.add_assign(&self.wv.backward(&saved.v_cache, &dv)?);

        // x enters through ln1 and the first residual.
        let mut dx = self.ln1.backward(&saved.ln1, &dh1)?;
        dx.add_assign(&dy1);
        Ok(dx)
    }
}

impl Parameterized for AttentionBlock {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.ln1.visit_params(&mut |n, p| f(&format!("ln1.{n}"), p));
        self.wq.visit_params(&mut |n, p| f(&format!("wq.{n}"), p));
        self.wk.visit_params(&mut |n, p| f(&format!("wk.{n}"), p));
        self.wv.visit_params(&mut |n, p| f(&format!("wv.{n}"), p));
        self.wo.visit_params(&mut |n, p| f(&format!("wo.{n}"), p));
        self.ln2.visit_params(&mut |n, p| f(&format!("ln2.{n}"), p));
        self.ff.visit_params(&mut |n, p| f(&format!("ff.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.ln1.visit_params_mut(&mut |n, p| f(&format!("ln1.{n}"), p));
        self.wq.visit_params_mut(&mut |n, p| f(&format!("wq.{n}"), p));
        self.wk.visit_params_mut(&mut |n, p| f(&format!("wk.{n}"), p));
        self.wv.visit_params_mut(&mut |n, p| f(&format!("wv.{n}"), p));
        self.wo.visit_params_mut(&mut |n, p| f(&format!("wo.{n}"), p));
        self.ln2.visit_params_mut(&mut |n, p| f(&format!("ln2.{n}"), p));
        self.ff.visit_params_mut(&mut |n, p| f(&format!("ff.{n}"), p));
    }
}
