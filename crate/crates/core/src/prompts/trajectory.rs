use crate::error::{Error, Result};
use crate::neural::{
    mean_pool, mean_pool_backward, sinusoidal_embed, Activation, AttentionBlock, AttentionCache,
    DenseCache, DenseLayer, Mlp, MlpCache, Param, Parameterized,
};
use crate::tensor::Tensor2;
use rand::Rng;

/// A short demonstration: `states.len() == actions.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPrompt {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl TrajectoryPrompt {
    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        if self.actions.is_empty() {
            return Err(Error::EmptyInput("trajectory prompt has no actions".into()));
        }
        if self.states.len() != self.actions.len() + 1 {
            return Err(Error::shape(format!(
                "trajectory prompt: {} states for {} actions (need one more state)",
                self.states.len(),
                self.actions.len()
            )));
        }
        for (i, s) in self.states.iter().enumerate() {
            if s.len() != state_dim {
                return Err(Error::shape(format!(
                    "trajectory prompt: state {i} has width {}, expected {state_dim}",
                    s.len()
                )));
            }
        }
        for (i, a) in self.actions.iter().enumerate() {
            if a.len() != action_dim {
                return Err(Error::shape(format!(
                    "trajectory prompt: action {i} has width {}, expected {action_dim}",
                    a.len()
                )));
            }
        }
        Ok(())
    }
}

/// Cap a prompt at `max_len` transitions, keeping the first
/// `ceil(max_len/2)` and last `floor(max_len/2)` so both the initial
/// approach and the final behaviour survive. The spliced middle introduces
/// one state discontinuity, which the encoder tolerates.
pub fn truncate_prompt(prompt: &TrajectoryPrompt, max_len: usize) -> Result<TrajectoryPrompt> {
    if max_len == 0 {
        return Err(Error::argument("truncate_prompt: max_len must be positive"));
    }
    let n = prompt.actions.len();
    if n <= max_len {
        return Ok(prompt.clone());
    }
    let head = max_len.div_ceil(2);
    let tail = max_len / 2;
    let mut states = Vec::with_capacity(max_len + 1);
    let mut actions = Vec::with_capacity(max_len);
    // Transitions 0..head keep (s_i, a_i).
    for i in 0..head {
        states.push(prompt.states[i].clone());
        actions.push(prompt.actions[i].clone());
    }
    // Transitions n-tail..n keep (s_i, a_i), plus the final next-state.
    for i in n - tail..n {
        states.push(prompt.states[i].clone());
        actions.push(prompt.actions[i].clone());
    }
    states.push(prompt.states[n].clone());
    Ok(TrajectoryPrompt { states, actions })
}

/// Self-attention encoder over interleaved state/action tokens.
///
/// Tokens are `s_0, a_0, s_1, a_1, ..., s_{T-1}, a_{T-1}, s_T` (2T+1 rows)
/// with linear embeddings into the model width plus sinusoidal positions.
/// After the attention blocks the sequence is mean-pooled and projected to
/// the shared embedding width.
#[derive(Debug, Clone)]
pub struct TrajectoryEncoder {
    pub state_embed: DenseLayer,
    pub action_embed: DenseLayer,
    pub blocks: Vec<AttentionBlock>,
    pub head: Mlp,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryEncoderCache {
    saved: Option<TrajSaved>,
}

#[derive(Debug, Clone)]
struct TrajSaved {
    s_cache: DenseCache,
    a_cache: DenseCache,
    block_caches: Vec<AttentionCache>,
    rows: usize,
    head_cache: MlpCache,
}

impl TrajectoryEncoder {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        d_model: usize,
        num_blocks: usize,
        num_heads: usize,
        ff_hidden: usize,
        head_hidden: usize,
        d_embed: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::config("trajectory encoder needs at least one block"));
        }
        let mut blocks = Vec::with_capacity(num_blocks);
        for _ in 0..num_blocks {
            blocks.push(AttentionBlock::new(d_model, num_heads, ff_hidden, rng)?);
        }
        Ok(TrajectoryEncoder {
            state_embed: DenseLayer::new(state_dim, d_model, Activation::Identity, rng),
            action_embed: DenseLayer::new(action_dim, d_model, Activation::Identity, rng),
            blocks,
            head: super::projection_head(d_model, head_hidden, d_embed, 1.0, rng)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_embed.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_embed.in_dim()
    }

    pub fn d_embed(&self) -> usize {
        self.head.out_dim()
    }

    /// Embed a demonstration into a (1, d_embed) vector.
    pub fn embed(
        &self,
        prompt: &TrajectoryPrompt,
        cache: &mut TrajectoryEncoderCache,
    ) -> Result<Tensor2> {
        prompt.validate(self.state_dim(), self.action_dim())?;
        let t = prompt.num_actions();
        let d = self.state_embed.out_dim();

        let s_mat = Tensor2::from_rows(&prompt.states)?;
        let a_mat = Tensor2::from_rows(&prompt.actions)?;
        let mut s_cache = DenseCache::default();
        let mut a_cache = DenseCache::default();
        let s_tok = self.state_embed.forward(&s_mat, &mut s_cache)?;
        let a_tok = self.action_embed.forward(&a_mat, &mut a_cache)?;

        // Interleave and add positional encodings.
        let rows = 2 * t + 1;
        let mut x = Tensor2::zeros(rows, d);
        for i in 0..=t {
            x.row_mut(2 * i).copy_from_slice(s_tok.row(i));
        }
        for i in 0..t {
            x.row_mut(2 * i + 1).copy_from_slice(a_tok.row(i));
        }
        for r in 0..rows {
            let pos = sinusoidal_embed(r, d)?;
            let row = x.row_mut(r);
            for (v, &p) in row.iter_mut().zip(pos.as_slice()) {
                *v += p;
            }
        }

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for block in &self.blocks {
            let mut c = AttentionCache::default();
            h = block.forward(&h, &mut c)?;
            block_caches.push(c);
        }

        let pooled = mean_pool(&h)?;
        let mut head_cache = MlpCache::default();
        let z = self.head.forward(&pooled, &mut head_cache)?;

        cache.saved = Some(TrajSaved {
            s_cache,
            a_cache,
            block_caches,
            rows,
            head_cache,
        });
        Ok(z)
    }

    /// Accumulate parameter gradients from dL/dz. Token inputs are data, so
    /// no input gradient is returned.
    pub fn backward(
        &mut self,
        cache: &TrajectoryEncoderCache,
        upstream: &Tensor2,
    ) -> Result<()> {
        let saved = cache
            .saved
            .as_ref()
            .ok_or_else(|| Error::state("trajectory encoder backward before embed"))?;
        let dpool = self.head.backward(&saved.head_cache, upstream)?;
        let mut dh = mean_pool_backward(&dpool, saved.rows)?;
        for (block, c) in self.blocks.iter_mut().zip(&saved.block_caches).rev() {
            dh = block.backward(c, &dh)?;
        }
        // De-interleave token gradients.
        let t = (saved.rows - 1) / 2;
        let d = dh.cols();
        let mut ds = Tensor2::zeros(t + 1, d);
        let mut da = Tensor2::zeros(t, d);
        for i in 0..=t {
            ds.row_mut(i).copy_from_slice(dh.row(2 * i));
        }
        for i in 0..t {
            da.row_mut(i).copy_from_slice(dh.row(2 * i + 1));
        }
        self.state_embed.backward(&saved.s_cache, &ds)?;
        self.action_embed.backward(&saved.a_cache, &da)?;
        Ok(())
    }
}

impl Parameterized for TrajectoryEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.state_embed
            .visit_params(&mut |n, p| f(&format!("state_embed.{n}"), p));
        self.action_embed
            .visit_params(&mut |n, p| f(&format!("action_embed.{n}"), p));
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&mut |n, p| f(&format!("block{i}.{n}"), p));
        }
        self.head.visit_params(&mut |n, p| f(&format!("head.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.state_embed
            .visit_params_mut(&mut |n, p| f(&format!("state_embed.{n}"), p));
        self.action_embed
            .visit_params_mut(&mut |n, p| f(&format!("action_embed.{n}"), p));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&mut |n, p| f(&format!("block{i}.{n}"), p));
        }
        self.head
            .visit_params_mut(&mut |n, p| f(&format!("head.{n}"), p));
    }
}
