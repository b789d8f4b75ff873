//! The prompt-conditioned diffusion policy.
//!
//! A single MLP trunk predicts the noise content of a partially denoised
//! action given the state, the two prompt embeddings, and a sinusoidal
//! encoding of the diffusion step. Actions are generated by iterating the
//! reverse kernel from pure noise, clipping each intermediate into the
//! action box; training uses either the DDPM residual (behaviour cloning)
//! or gradients flowing back through the whole K-step sampler.

use crate::diffusion::{ddpm_residual, reverse_step, standard_normal, NoiseSchedule};
use crate::error::{Error, Result};
use crate::neural::{Activation, Mlp, MlpCache, Param, Parameterized};
use crate::tensor::Tensor2;
use rand::Rng;

/// Noise-prediction network. Input rows are
/// `[a_k | state | z_text | z_traj | step_embed(k)]`.
#[derive(Debug, Clone)]
pub struct NoisePredictor {
    trunk: Mlp,
    action_dim: usize,
    state_dim: usize,
    d_embed: usize,
    d_time: usize,
}

/// Cache for one [`NoisePredictor::predict_rows`] call.
#[derive(Debug, Clone, Default)]
pub struct PredictCache {
    trunk: MlpCache,
    rows: usize,
}

/// Gradients with respect to the predictor's non-parameter inputs.
/// Embedding gradients are summed over the batch (the embeddings are
/// broadcast row vectors).
#[derive(Debug, Clone)]
pub struct CondGrads {
    pub a: Tensor2,
    pub state: Tensor2,
    pub z_text: Tensor2,
    pub z_traj: Tensor2,
}

impl CondGrads {
    fn zeros(batch: usize, action_dim: usize, state_dim: usize, d_embed: usize) -> Self {
        CondGrads {
            a: Tensor2::zeros(batch, action_dim),
            state: Tensor2::zeros(batch, state_dim),
            z_text: Tensor2::zeros(1, d_embed),
            z_traj: Tensor2::zeros(1, d_embed),
        }
    }

}

impl NoisePredictor {
    pub fn new(
        action_dim: usize,
        state_dim: usize,
        d_embed: usize,
        d_time: usize,
        hidden_width: usize,
        hidden_layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if action_dim == 0 || state_dim == 0 {
            return Err(Error::config("noise predictor needs positive action/state dims"));
        }
        if d_time == 0 || d_time % 2 != 0 {
            return Err(Error::config(format!("step embedding width must be even, got {d_time}")));
        }
        if hidden_layers == 0 {
            return Err(Error::config("noise predictor needs at least one hidden layer"));
        }
        let input = action_dim + state_dim + 2 * d_embed + d_time;
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        dims.push(action_dim);
        Ok(NoisePredictor {
            trunk: Mlp::with_dims(&dims, Activation::Mish, Activation::Identity, rng)?,
            action_dim,
            state_dim,
            d_embed,
            d_time,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn d_embed(&self) -> usize {
        self.d_embed
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    fn validate_ctx(
        &self,
        a_k: &Tensor2,
        state: &Tensor2,
        z_text: &Tensor2,
        z_traj: &Tensor2,
    ) -> Result<usize> {
        let b = a_k.rows();
        if a_k.cols() != self.action_dim {
            return Err(Error::shape(format!(
                "predict: action width {} != {}",
                a_k.cols(),
                self.action_dim
            )));
        }
        if state.shape() != (b, self.state_dim) {
            return Err(Error::shape(format!(
                "predict: state is {:?}, expected ({b}, {})",
                state.shape(),
                self.state_dim
            )));
        }
        for (name, z) in [("z_text", z_text), ("z_traj", z_traj)] {
            if z.shape() != (1, self.d_embed) {
                return Err(Error::shape(format!(
                    "predict: {name} is {:?}, expected (1, {})",
                    z.shape(),
                    self.d_embed
                )));
            }
        }
        Ok(b)
    }

    /// Predict noise for a batch where row i is at diffusion step `ks[i]`.
    pub fn predict_rows(
        &self,
        schedule: &NoiseSchedule,
        a_k: &Tensor2,
        state: &Tensor2,
        z_text: &Tensor2,
        z_traj: &Tensor2,
        ks: &[usize],
        cache: &mut PredictCache,
    ) -> Result<Tensor2> {
        let b = self.validate_ctx(a_k, state, z_text, z_traj)?;
        if ks.len() != b {
            return Err(Error::shape(format!(
                "predict: {} step indices for a batch of {b}",
                ks.len()
            )));
        }
        // Bounds check via the schedule, and per-step embeddings (computed
        // once per distinct k).
        let mut embeds: Vec<Option<Tensor2>> = vec![None; schedule.num_steps() + 1];
        for &k in ks {
            schedule.alpha(k)?;
            if embeds[k].is_none() {
                embeds[k] = Some(crate::neural::sinusoidal_embed(k, self.d_time)?);
            }
        }
        let width = self.action_dim + self.state_dim + 2 * self.d_embed + self.d_time;
        let mut input = Tensor2::zeros(b, width);
        let zt = z_text.row(0);
        let zj = z_traj.row(0);
        for i in 0..b {
            let row = input.row_mut(i);
            let mut off = 0;
            row[..self.action_dim].copy_from_slice(a_k.row(i));
            off += self.action_dim;
            row[off..off + self.state_dim].copy_from_slice(state.row(i));
            off += self.state_dim;
            row[off..off + self.d_embed].copy_from_slice(zt);
            off += self.d_embed;
            row[off..off + self.d_embed].copy_from_slice(zj);
            off += self.d_embed;
            row[off..].copy_from_slice(embeds[ks[i]].as_ref().expect("filled above").row(0));
        }
        let out = self.trunk.forward(&input, &mut cache.trunk)?;
        cache.rows = b;
        Ok(out)
    }

    /// Predict noise with a single shared step index.
    pub fn predict(
        &self,
        schedule: &NoiseSchedule,
        a_k: &Tensor2,
        state: &Tensor2,
        z_text: &Tensor2,
        z_traj: &Tensor2,
        k: usize,
        cache: &mut PredictCache,
    ) -> Result<Tensor2> {
        let ks = vec![k; a_k.rows()];
        self.predict_rows(schedule, a_k, state, z_text, z_traj, &ks, cache)
    }

    /// Accumulate trunk parameter gradients and split the input gradient
    /// back into its components.
    pub fn backward(&mut self, cache: &PredictCache, upstream: &Tensor2) -> Result<CondGrads> {
        let dinput = self.trunk.backward(&cache.trunk, upstream)?;
        Ok(self.split_input_grad(&dinput))
    }

    /// Input gradients only; trunk parameters stay untouched.
    pub fn backward_input(&self, cache: &PredictCache, upstream: &Tensor2) -> Result<CondGrads> {
        let dinput = self.trunk.backward_input(&cache.trunk, upstream)?;
        Ok(self.split_input_grad(&dinput))
    }

    fn split_input_grad(&self, dinput: &Tensor2) -> CondGrads {
        let a_end = self.action_dim;
        let s_end = a_end + self.state_dim;
        let zt_end = s_end + self.d_embed;
        let zj_end = zt_end + self.d_embed;
        CondGrads {
            a: dinput.slice_cols(0, a_end),
            state: dinput.slice_cols(a_end, s_end),
            z_text: dinput.slice_cols(s_end, zt_end).col_sums(),
            z_traj: dinput.slice_cols(zt_end, zj_end).col_sums(),
        }
    }
}

impl Parameterized for NoisePredictor {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.trunk.visit_params(&mut |n, p| f(&format!("trunk.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.trunk.visit_params_mut(&mut |n, p| f(&format!("trunk.{n}"), p));
    }
}

/// All randomness one sampling pass consumes, drawn up front so the same
/// noises can drive both the plain and the differentiable sampler.
#[derive(Debug, Clone)]
pub struct SampleNoises {
    /// Initial a_K ~ N(0, I), shape (batch, action_dim).
    pub init: Tensor2,
    /// Reverse-step noises in sampling order (index 0 is step K, last is
    /// step 1, whose sigma is zero).
    pub steps: Vec<Tensor2>,
}

impl SampleNoises {
    pub fn draw(rng: &mut impl Rng, batch: usize, action_dim: usize, num_steps: usize) -> Self {
        let init = standard_normal(rng, batch, action_dim);
        let steps = (0..num_steps)
            .map(|_| standard_normal(rng, batch, action_dim))
            .collect();
        SampleNoises { init, steps }
    }
}

/// Output of the differentiable sampler: the action batch plus the per-step
/// caches [`sample_backward`] needs.
#[derive(Debug, Clone)]
pub struct SampleRun {
    a0: Tensor2,
    steps: Vec<StepSaved>,
}

#[derive(Debug, Clone)]
struct StepSaved {
    k: usize,
    cache: PredictCache,
    /// Pre-clip value of a_{k-1}; the straight-through mask comes from it.
    pre: Tensor2,
}

impl SampleRun {
    /// Wrap raw action values with no sampler provenance. Usable for value
    /// queries, but any attempt to differentiate through it is rejected.
    pub fn from_actions(a0: Tensor2) -> Self {
        SampleRun { a0, steps: Vec::new() }
    }

    pub fn a0(&self) -> &Tensor2 {
        &self.a0
    }

    pub fn is_differentiable(&self) -> bool {
        !self.steps.is_empty()
    }
}

/// Gradients produced by [`sample_backward`] with respect to the sampler's
/// conditioning inputs.
#[derive(Debug, Clone)]
pub struct SampleGrads {
    pub state: Tensor2,
    pub z_text: Tensor2,
    pub z_traj: Tensor2,
}

fn validate_noises(
    policy: &NoisePredictor,
    schedule: &NoiseSchedule,
    batch: usize,
    noises: &SampleNoises,
) -> Result<()> {
    let want = (batch, policy.action_dim());
    if noises.init.shape() != want {
        return Err(Error::shape(format!(
            "sample: init noise {:?}, expected {:?}",
            noises.init.shape(),
            want
        )));
    }
    if noises.steps.len() != schedule.num_steps() {
        return Err(Error::shape(format!(
            "sample: {} step noises for {} steps",
            noises.steps.len(),
            schedule.num_steps()
        )));
    }
    for n in &noises.steps {
        if n.shape() != want {
            return Err(Error::shape(format!(
                "sample: step noise {:?}, expected {:?}",
                n.shape(),
                want
            )));
        }
    }
    Ok(())
}

fn rollout(
    policy: &NoisePredictor,
    schedule: &NoiseSchedule,
    state: &Tensor2,
    z_text: &Tensor2,
    z_traj: &Tensor2,
    noises: &SampleNoises,
    mut record: Option<&mut Vec<StepSaved>>,
) -> Result<Tensor2> {
    let batch = state.rows();
    validate_noises(policy, schedule, batch, noises)?;
    let mut a = noises.init.clone();
    for (idx, k) in (1..=schedule.num_steps()).rev().enumerate() {
        let mut cache = PredictCache::default();
        let eps_hat = policy.predict(schedule, &a, state, z_text, z_traj, k, &mut cache)?;
        let pre = reverse_step(schedule, &a, &eps_hat, &noises.steps[idx], k)?;
        let clipped = pre.map(|v| v.clamp(-1.0, 1.0));
        if let Some(rec) = record.as_deref_mut() {
            rec.push(StepSaved { k, cache, pre });
        }
        a = clipped;
    }
    Ok(a)
}

/// Sample actions by running the reverse diffusion chain from fresh noise.
/// Pure with respect to the policy; consumes `2 + K` tensors of randomness
/// from `rng` in a fixed order.
pub fn sample_action(
    policy: &NoisePredictor,
    schedule: &NoiseSchedule,
    state: &Tensor2,
    z_text: &Tensor2,
    z_traj: &Tensor2,
    rng: &mut impl Rng,
) -> Result<Tensor2> {
    let noises = SampleNoises::draw(rng, state.rows(), policy.action_dim(), schedule.num_steps());
    rollout(policy, schedule, state, z_text, z_traj, &noises, None)
}

/// [`sample_action`] against caller-supplied noises: same chain, no
/// gradient bookkeeping. Lets callers replay a recorded draw exactly.
pub fn sample_action_with(
    policy: &NoisePredictor,
    schedule: &NoiseSchedule,
    state: &Tensor2,
    z_text: &Tensor2,
    z_traj: &Tensor2,
    noises: &SampleNoises,
) -> Result<Tensor2> {
    rollout(policy, schedule, state, z_text, z_traj, noises, None)
}

/// Same chain as [`sample_action`] but against caller-supplied noises and
/// recording every step, so the result supports [`sample_backward`]. The
/// action values are bitwise identical to [`sample_action`] driven by the
/// same noises.
pub fn sample_action_differentiable(
    policy: &NoisePredictor,
    schedule: &NoiseSchedule,
    state: &Tensor2,
    z_text: &Tensor2,
    z_traj: &Tensor2,
    noises: &SampleNoises,
) -> Result<SampleRun> {
    let mut steps = Vec::with_capacity(schedule.num_steps());
    let a0 = rollout(policy, schedule, state, z_text, z_traj, noises, Some(&mut steps))?;
    Ok(SampleRun { a0, steps })
}

/// Reverse-mode pass through the whole sampling chain.
///
/// The injected noises are constants; the action clip uses a
/// straight-through mask (gradient passes where the pre-clip value is
/// strictly inside [-1, 1], zero outside). Trunk parameter gradients are
/// accumulated into `policy`, scaled by the caller's `upstream`.
pub fn sample_backward(
    policy: &mut NoisePredictor,
    schedule: &NoiseSchedule,
    run: &SampleRun,
    upstream: &Tensor2,
) -> Result<SampleGrads> {
    if !run.is_differentiable() {
        return Err(Error::Contract(
            "sample_backward on actions that did not come from the differentiable sampler".into(),
        ));
    }
    if upstream.shape() != run.a0.shape() {
        return Err(Error::shape(format!(
            "sample_backward: upstream {:?} vs actions {:?}",
            upstream.shape(),
            run.a0.shape()
        )));
    }
    let batch = run.a0.rows();
    let mut acc = CondGrads::zeros(batch, policy.action_dim(), policy.state_dim(), policy.d_embed());
    let mut g = upstream.clone();
    // Steps were recorded k = K..1; walk them k = 1..K so `g` is always the
    // gradient w.r.t. the (clipped) input of the step being processed.
    for step in run.steps.iter().rev() {
        // Straight-through clip.
        let mut g_pre = g.clone();
        for (gv, &pv) in g_pre.as_mut_slice().iter_mut().zip(step.pre.as_slice()) {
            if pv.abs() >= 1.0 {
                *gv = 0.0;
            }
        }
        let alpha = schedule.alpha(step.k)?;
        let ab = schedule.alpha_bar(step.k)?;
        let inv_sqrt_a = 1.0 / alpha.sqrt();
        // a_{k-1} = (a_k - c * eps_hat)/sqrt(alpha) + sigma * n.
        let c = (1.0 - alpha) / (1.0 - ab).sqrt();
        let up_eps = g_pre.scaled(-c * inv_sqrt_a);
        let grads = policy.backward(&step.cache, &up_eps)?;
        acc.state.add_assign(&grads.state);
        acc.z_text.add_assign(&grads.z_text);
        acc.z_traj.add_assign(&grads.z_traj);
        g = g_pre.scaled(inv_sqrt_a);
        g.add_assign(&grads.a);
    }
    Ok(SampleGrads {
        state: acc.state,
        z_text: acc.z_text,
        z_traj: acc.z_traj,
    })
}

/// Per-batch randomness of the DDPM residual objective: one step index and
/// one noise row per batch element.
#[derive(Debug, Clone)]
pub struct DiffusionBatchRand {
    pub ks: Vec<usize>,
    pub eps: Tensor2,
}

impl DiffusionBatchRand {
    pub fn draw(
        rng: &mut impl Rng,
        schedule: &NoiseSchedule,
        batch: usize,
        action_dim: usize,
    ) -> Self {
        let ks = (0..batch)
            .map(|_| rng.gen_range(1..=schedule.num_steps()))
            .collect();
        let eps = standard_normal(rng, batch, action_dim);
        DiffusionBatchRand { ks, eps }
    }
}

/// DDPM noise-prediction loss on clean actions (Eq. behaviour-cloning
/// term). Diffuses each row to its own step, predicts, and backpropagates
/// the mean squared residual. Returns the loss and the gradients with
/// respect to the conditioning inputs; trunk gradients are accumulated into
/// `policy` scaled by `weight`.
pub fn diffusion_loss(
    policy: &mut NoisePredictor,
    schedule: &NoiseSchedule,
    a0: &Tensor2,
    state: &Tensor2,
    z_text: &Tensor2,
    z_traj: &Tensor2,
    rand: &DiffusionBatchRand,
    weight: f64,
) -> Result<(f64, CondGrads)> {
    let b = a0.rows();
    if rand.ks.len() != b || rand.eps.shape() != a0.shape() {
        return Err(Error::shape(format!(
            "diffusion_loss: randomness sized for {} rows of {}, batch is {:?}",
            rand.ks.len(),
            rand.eps.cols(),
            a0.shape()
        )));
    }
    // Per-row forward diffusion a_k = sqrt(ab_k) a0 + sqrt(1-ab_k) eps.
    let mut a_k = Tensor2::zeros(b, a0.cols());
    for i in 0..b {
        let ab = schedule.alpha_bar(rand.ks[i])?;
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let out = a_k.row_mut(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = sa * a0.get(i, j) + sn * rand.eps.get(i, j);
        }
    }
    let mut cache = PredictCache::default();
    let eps_hat = policy.predict_rows(schedule, &a_k, state, z_text, z_traj, &rand.ks, &mut cache)?;
    let (loss, dpred) = ddpm_residual(&eps_hat, &rand.eps)?;
    let grads = policy.backward(&cache, &dpred.scaled(weight))?;
    Ok((loss, grads))
}
