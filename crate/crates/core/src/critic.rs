//! Twin Q-networks with target copies, the clipped-double-Q TD loss, and
//! the policy-improvement objective that differentiates a critic's value of
//! freshly sampled actions back through the diffusion sampler.

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::neural::{polyak_blend, Activation, Mlp, MlpCache, Param, Parameterized};
use crate::policy::{sample_backward, NoisePredictor, SampleRun};
use crate::tensor::Tensor2;
use rand::Rng;

/// Scalar action-value network over `[state | action]`, optionally extended
/// with the two prompt embeddings.
#[derive(Debug, Clone)]
pub struct QNetwork {
    trunk: Mlp,
    state_dim: usize,
    action_dim: usize,
    d_embed: usize,
    prompt_conditioned: bool,
}

#[derive(Debug, Clone, Default)]
pub struct QCache {
    trunk: MlpCache,
}

/// Input gradients from a Q-network backward pass. Embedding gradients are
/// summed over the batch; they are zero tensors when the network is not
/// prompt-conditioned.
#[derive(Debug, Clone)]
pub struct QInputGrads {
    pub state: Tensor2,
    pub action: Tensor2,
    pub z_text: Tensor2,
    pub z_traj: Tensor2,
}

impl QNetwork {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        d_embed: usize,
        prompt_conditioned: bool,
        hidden_width: usize,
        hidden_layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let cond = if prompt_conditioned { 2 * d_embed } else { 0 };
        let input = state_dim + action_dim + cond;
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        dims.push(1);
        Ok(QNetwork {
            trunk: Mlp::with_dims(&dims, Activation::Mish, Activation::Identity, rng)?,
            state_dim,
            action_dim,
            d_embed,
            prompt_conditioned,
        })
    }

    pub fn prompt_conditioned(&self) -> bool {
        self.prompt_conditioned
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    fn assemble(
        &self,
        state: &Tensor2,
        action: &Tensor2,
        z_text: &Tensor2,
        z_traj: &Tensor2,
    ) -> Result<Tensor2> {
        let b = state.rows();
        if state.cols() != self.state_dim || action.shape() != (b, self.action_dim) {
            return Err(Error::shape(format!(
                "q forward: state {:?}, action {:?}, expected ({b}, {}) and ({b}, {})",
                state.shape(),
                action.shape(),
                self.state_dim,
                self.action_dim
            )));
        }
        if !self.prompt_conditioned {
            return Tensor2::hstack(&[state, action]);
        }
        for (name, z) in [("z_text", z_text), ("z_traj", z_traj)] {
            if z.shape() != (1, self.d_embed) {
                return Err(Error::shape(format!(
                    "q forward: {name} is {:?}, expected (1, {})",
                    z.shape(),
                    self.d_embed
                )));
            }
        }
        let zt = z_text.tile_rows(b);
        let zj = z_traj.tile_rows(b);
        Tensor2::hstack(&[state, action, &zt, &zj])
    }

    /// Q-values as a (batch, 1) tensor.
    pub fn forward(
        &self,
        state: &Tensor2,
        action: &Tensor2,
        z_text: &Tensor2,
        z_traj: &Tensor2,
        cache: &mut QCache,
    ) -> Result<Tensor2> {
        let input = self.assemble(state, action, z_text, z_traj)?;
        self.trunk.forward(&input, &mut cache.trunk)
    }

    /// Accumulate parameter gradients (TD loss path).
    pub fn backward(&mut self, cache: &QCache, upstream: &Tensor2) -> Result<()> {
        self.trunk.backward(&cache.trunk, upstream)?;
        Ok(())
    }

    /// Input gradients only — the network's parameters are left untouched.
    /// This is the only backward the reward objective uses on a critic.
    pub fn backward_input(&self, cache: &QCache, upstream: &Tensor2) -> Result<QInputGrads> {
        let dinput = self.trunk.backward_input(&cache.trunk, upstream)?;
        let s_end = self.state_dim;
        let a_end = s_end + self.action_dim;
        let (z_text, z_traj) = if self.prompt_conditioned {
            let zt_end = a_end + self.d_embed;
            let zj_end = zt_end + self.d_embed;
            (
                dinput.slice_cols(a_end, zt_end).col_sums(),
                dinput.slice_cols(zt_end, zj_end).col_sums(),
            )
        } else {
            (Tensor2::zeros(1, self.d_embed), Tensor2::zeros(1, self.d_embed))
        };
        Ok(QInputGrads {
            state: dinput.slice_cols(0, s_end),
            action: dinput.slice_cols(s_end, a_end),
            z_text,
            z_traj,
        })
    }
}

impl Parameterized for QNetwork {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.trunk.visit_params(&mut |n, p| f(&format!("trunk.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.trunk.visit_params_mut(&mut |n, p| f(&format!("trunk.{n}"), p));
    }
}

/// Twin critics plus frozen target copies. Targets move only through
/// [`CriticPair::polyak_update`].
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub q1: QNetwork,
    pub q2: QNetwork,
    pub q1_target: QNetwork,
    pub q2_target: QNetwork,
    pub tau: f64,
}

impl CriticPair {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        d_embed: usize,
        prompt_conditioned: bool,
        hidden_width: usize,
        hidden_layers: usize,
        tau: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::config(format!("polyak tau {tau} outside [0, 1]")));
        }
        let q1 = QNetwork::new(
            state_dim,
            action_dim,
            d_embed,
            prompt_conditioned,
            hidden_width,
            hidden_layers,
            rng,
        )?;
        let q2 = QNetwork::new(
            state_dim,
            action_dim,
            d_embed,
            prompt_conditioned,
            hidden_width,
            hidden_layers,
            rng,
        )?;
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        Ok(CriticPair {
            q1,
            q2,
            q1_target,
            q2_target,
            tau,
        })
    }

    /// `target <- tau * online + (1 - tau) * target` for both critics.
    pub fn polyak_update(&mut self) -> Result<()> {
        polyak_blend(&mut self.q1_target, &self.q1, self.tau)?;
        polyak_blend(&mut self.q2_target, &self.q2, self.tau)
    }

    pub fn zero_grads(&mut self) {
        self.q1.zero_grads();
        self.q2.zero_grads();
    }
}

/// One TD-learning batch. `reward`, `terminal` and the row counts of the
/// tensors must agree.
pub struct TdBatch<'a> {
    pub state: &'a Tensor2,
    pub action: &'a Tensor2,
    pub reward: &'a [f64],
    pub next_state: &'a Tensor2,
    /// Actions for the bootstrap term, freshly sampled from the current
    /// policy at `next_state`.
    pub next_action: &'a Tensor2,
    pub terminal: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct QLossOut {
    pub l_q1: f64,
    pub l_q2: f64,
}

/// Clipped-double-Q TD loss for both critics.
///
/// Targets `y = r + gamma * (1 - terminal) * min(Q1bar, Q2bar)(s', a')` are
/// computed from the frozen target networks with no gradient flow; each
/// online critic regresses on the same `y`. Gradients accumulate into
/// `pair.q1` / `pair.q2` only.
pub fn q_loss(
    pair: &mut CriticPair,
    batch: &TdBatch,
    gamma: f64,
    z_text: &Tensor2,
    z_traj: &Tensor2,
) -> Result<QLossOut> {
    let b = batch.state.rows();
    if batch.reward.len() != b || batch.terminal.len() != b {
        return Err(Error::shape(format!(
            "q_loss: {} rewards / {} terminals for a batch of {b}",
            batch.reward.len(),
            batch.terminal.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config(format!("discount {gamma} outside [0, 1]")));
    }
    // Bootstrap targets from the frozen copies; caches are scratch.
    let mut scratch = QCache::default();
    let t1 = pair
        .q1_target
        .forward(batch.next_state, batch.next_action, z_text, z_traj, &mut scratch)?;
    let t2 = pair
        .q2_target
        .forward(batch.next_state, batch.next_action, z_text, z_traj, &mut scratch)?;
    let mut y = Tensor2::zeros(b, 1);
    for i in 0..b {
        let cont = if batch.terminal[i] { 0.0 } else { 1.0 };
        let boot = t1.get(i, 0).min(t2.get(i, 0));
        y.set(i, 0, batch.reward[i] + gamma * cont * boot);
    }

    let mut losses = [0.0; 2];
    for (slot, q) in [&mut pair.q1, &mut pair.q2].into_iter().enumerate() {
        let mut cache = QCache::default();
        let qv = q.forward(batch.state, batch.action, z_text, z_traj, &mut cache)?;
        let diff = qv.sub(&y);
        losses[slot] = diff.squared_sum() / b as f64;
        q.backward(&cache, &diff.scaled(2.0 / b as f64))?;
    }
    Ok(QLossOut {
        l_q1: losses[0],
        l_q2: losses[1],
    })
}

/// Forward half of the policy-improvement objective: `L_r = mean_i
/// Q_ell(s_i, a0_i)` where the `a0_i` came from the differentiable sampler.
/// Holds everything [`RewardObjective::backward`] needs.
pub struct RewardObjective {
    pub l_r: f64,
    /// Mean |Q| over the batch — the normalizer for the adaptive
    /// policy-improvement weight.
    pub mean_abs_q: f64,
    ell: usize,
    q_cache: QCache,
    run: SampleRun,
    batch: usize,
}

/// Embedding gradients flowing out of the reward objective (critic input
/// path plus the sampler's conditioning path).
#[derive(Debug, Clone)]
pub struct RewardGrads {
    pub z_text: Tensor2,
    pub z_traj: Tensor2,
}

/// Evaluate `Q_ell` (`ell` is 0 or 1) on sampled actions. The critic is
/// borrowed immutably throughout the objective: its parameters cannot
/// receive gradient from this path by construction.
pub fn reward_objective(
    pair: &CriticPair,
    ell: usize,
    state: &Tensor2,
    z_text: &Tensor2,
    z_traj: &Tensor2,
    run: SampleRun,
) -> Result<RewardObjective> {
    if ell > 1 {
        return Err(Error::argument(format!("critic index {ell} not in {{0, 1}}")));
    }
    let q = if ell == 0 { &pair.q1 } else { &pair.q2 };
    let b = state.rows();
    let mut q_cache = QCache::default();
    let qv = q.forward(state, run.a0(), z_text, z_traj, &mut q_cache)?;
    let l_r = qv.mean();
    let mean_abs_q = qv.as_slice().iter().map(|v| v.abs()).sum::<f64>() / b as f64;
    Ok(RewardObjective {
        l_r,
        mean_abs_q,
        ell,
        q_cache,
        run,
        batch: b,
    })
}

impl RewardObjective {
    /// Push `weight * dL_r` back through the critic input and the sampler.
    /// Trunk gradients accumulate into `policy`; the returned embedding
    /// gradients combine the critic-input and sampler paths. Errors with a
    /// contract violation if the actions did not come from the
    /// differentiable sampler.
    pub fn backward(
        &self,
        pair: &CriticPair,
        policy: &mut NoisePredictor,
        schedule: &NoiseSchedule,
        weight: f64,
    ) -> Result<RewardGrads> {
        if !self.run.is_differentiable() {
            return Err(Error::Contract(
                "reward objective needs actions from the differentiable sampler".into(),
            ));
        }
        let q = if self.ell == 0 { &pair.q1 } else { &pair.q2 };
        let upstream = Tensor2::filled(self.batch, 1, weight / self.batch as f64);
        let qgrads = q.backward_input(&self.q_cache, &upstream)?;
        let sgrads = sample_backward(policy, schedule, &self.run, &qgrads.action)?;
        let mut z_text = qgrads.z_text;
        z_text.add_assign(&sgrads.z_text);
        let mut z_traj = qgrads.z_traj;
        z_traj.add_assign(&sgrads.z_traj);
        Ok(RewardGrads { z_text, z_traj })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{build_schedule, standard_normal};
    use crate::policy::{sample_action_differentiable, SampleNoises};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const D_EMBED: usize = 3;

    fn pair(seed: u64, conditioned: bool) -> CriticPair {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        CriticPair::new(4, 2, D_EMBED, conditioned, 16, 2, 0.01, &mut rng).unwrap()
    }

    fn zs(seed: u64) -> (Tensor2, Tensor2) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (
            standard_normal(&mut rng, 1, D_EMBED),
            standard_normal(&mut rng, 1, D_EMBED),
        )
    }

    /// Pin a network's output to a constant by zeroing the last layer and
    /// setting its bias.
    fn pin_output(q: &mut QNetwork, value: f64) {
        let last = q.trunk.num_layers() - 1;
        let layer = q.trunk_mut().layer_mut(last);
        layer.w.value.fill(0.0);
        layer.b.value.fill(value);
    }

    #[test]
    fn distinct_random_critics_disagree() {
        let p = pair(1, true);
        let (zt, zj) = zs(2);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let s = standard_normal(&mut rng, 5, 4);
        let a = standard_normal(&mut rng, 5, 2);
        let mut c = QCache::default();
        let v1 = p.q1.forward(&s, &a, &zt, &zj, &mut c).unwrap();
        let v2 = p.q2.forward(&s, &a, &zt, &zj, &mut c).unwrap();
        assert_ne!(v1, v2);
    }

    #[test]
    fn unconditioned_critic_ignores_embeddings() {
        let p = pair(4, false);
        let (zt, zj) = zs(5);
        let (zt2, zj2) = zs(6);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let s = standard_normal(&mut rng, 3, 4);
        let a = standard_normal(&mut rng, 3, 2);
        let mut c = QCache::default();
        let v1 = p.q1.forward(&s, &a, &zt, &zj, &mut c).unwrap();
        let v2 = p.q1.forward(&s, &a, &zt2, &zj2, &mut c).unwrap();
        assert!(v1.bitwise_eq(&v2));
    }

    #[test]
    fn q_loss_uses_the_pointwise_minimum_target() {
        let mut p = pair(8, true);
        pin_output(&mut p.q1_target, 2.0);
        pin_output(&mut p.q2_target, 3.0);
        // Pin the online nets too so the expected loss is exact.
        pin_output(&mut p.q1, 0.0);
        pin_output(&mut p.q2, 0.0);
        let (zt, zj) = zs(9);
        let s = Tensor2::zeros(2, 4);
        let a = Tensor2::zeros(2, 2);
        let r = [1.0, -0.5];
        let terminal = [false, false];
        let batch = TdBatch {
            state: &s,
            action: &a,
            reward: &r,
            next_state: &s,
            next_action: &a,
            terminal: &terminal,
        };
        let out = q_loss(&mut p, &batch, 0.9, &zt, &zj).unwrap();
        // y = r + 0.9 * min(2, 3) = r + 1.8 -> y = [2.8, 1.3]; q = 0.
        let expected = (2.8f64.powi(2) + 1.3f64.powi(2)) / 2.0;
        assert!((out.l_q1 - expected).abs() < 1e-12, "{}", out.l_q1);
        assert!((out.l_q2 - expected).abs() < 1e-12);
    }

    #[test]
    fn terminal_rows_drop_the_bootstrap() {
        let mut p = pair(10, true);
        pin_output(&mut p.q1_target, 5.0);
        pin_output(&mut p.q2_target, 5.0);
        pin_output(&mut p.q1, 0.0);
        pin_output(&mut p.q2, 0.0);
        let (zt, zj) = zs(11);
        let s = Tensor2::zeros(1, 4);
        let a = Tensor2::zeros(1, 2);
        let batch = TdBatch {
            state: &s,
            action: &a,
            reward: &[2.0],
            next_state: &s,
            next_action: &a,
            terminal: &[true],
        };
        let out = q_loss(&mut p, &batch, 0.9, &zt, &zj).unwrap();
        // y = r alone = 2.0.
        assert!((out.l_q1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn q_loss_gradients_match_finite_differences() {
        use crate::neural::grad_check;
        let mut p = pair(12, true);
        let (zt, zj) = zs(13);
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let s = standard_normal(&mut rng, 6, 4);
        let a = standard_normal(&mut rng, 6, 2);
        let sn = standard_normal(&mut rng, 6, 4);
        let an = standard_normal(&mut rng, 6, 2);
        let r: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
        let terminal = [false, true, false, false, true, false];
        let batch = TdBatch {
            state: &s,
            action: &a,
            reward: &r,
            next_state: &sn,
            next_action: &an,
            terminal: &terminal,
        };
        p.zero_grads();
        q_loss(&mut p, &batch, 0.95, &zt, &zj).unwrap();
        // Check q1's gradient of l_q1 (q2's is symmetric).
        let targets = (p.q1_target.clone(), p.q2_target.clone());
        let report = grad_check(
            &mut p.q1,
            &mut |q: &QNetwork| {
                let mut scratch = QCache::default();
                let t1 = targets.0.forward(&sn, &an, &zt, &zj, &mut scratch).unwrap();
                let t2 = targets.1.forward(&sn, &an, &zt, &zj, &mut scratch).unwrap();
                let qv = q.forward(&s, &a, &zt, &zj, &mut scratch).unwrap();
                let mut loss = 0.0;
                for i in 0..6 {
                    let cont = if terminal[i] { 0.0 } else { 1.0 };
                    let y = r[i] + 0.95 * cont * t1.get(i, 0).min(t2.get(i, 0));
                    loss += (qv.get(i, 0) - y).powi(2);
                }
                loss / 6.0
            },
            1e-5,
        );
        assert!(report.worst_rel < 1e-5, "{report:?}");
    }

    #[test]
    fn q_loss_never_touches_targets_or_other_networks() {
        let mut p = pair(15, true);
        let (zt, zj) = zs(16);
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let s = standard_normal(&mut rng, 4, 4);
        let a = standard_normal(&mut rng, 4, 2);
        let t1_before = p.q1_target.flat_values();
        let t2_before = p.q2_target.flat_values();
        let batch = TdBatch {
            state: &s,
            action: &a,
            reward: &[0.1, 0.2, 0.3, 0.4],
            next_state: &s,
            next_action: &a,
            terminal: &[false; 4],
        };
        p.zero_grads();
        for _ in 0..3 {
            q_loss(&mut p, &batch, 0.99, &zt, &zj).unwrap();
        }
        assert_eq!(p.q1_target.flat_values(), t1_before);
        assert_eq!(p.q2_target.flat_values(), t2_before);
        // Targets also accumulated no gradient.
        assert!(p.q1_target.flat_grads().iter().all(|&g| g == 0.0));
        // Online critics did accumulate.
        assert!(p.q1.flat_grads().iter().any(|&g| g != 0.0));
        assert!(p.q2.flat_grads().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn polyak_update_contracts_distance_geometrically() {
        let mut p = pair(18, false);
        let tau = p.tau;
        let dist = |p: &CriticPair| {
            p.q1
                .flat_values()
                .iter()
                .zip(p.q1_target.flat_values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        // Separate target from online first.
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        p.q1_target
            .visit_params_mut(&mut |_, param| {
                let noise = standard_normal(&mut rng, param.value.rows(), param.value.cols());
                param.value.scaled_add(0.5, &noise);
            });
        let d0 = dist(&p);
        assert!(d0 > 0.0);
        p.polyak_update().unwrap();
        let d1 = dist(&p);
        p.polyak_update().unwrap();
        let d2 = dist(&p);
        assert!((d1 / d0 - (1.0 - tau)).abs() < 1e-9);
        assert!((d2 / d1 - (1.0 - tau)).abs() < 1e-9);
    }

    #[test]
    fn reward_objective_value_and_gradient_flow() {
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let mut policy = NoisePredictor::new(2, 4, D_EMBED, 8, 16, 2, &mut rng).unwrap();
        // Moderate weights so some sampled entries stay unclipped and carry
        // gradient through the chain.
        policy.visit_params_mut(&mut |_, p| p.value.scale(0.2));
        let schedule = build_schedule(3, 0.1, 10.0).unwrap();
        let p = pair(21, true);
        let (zt, zj) = zs(22);
        let s = standard_normal(&mut rng, 4, 4);
        let noises = SampleNoises::draw(&mut rng, 4, 2, 3);
        let run = sample_action_differentiable(&policy, &schedule, &s, &zt, &zj, &noises).unwrap();
        let obj = reward_objective(&p, 0, &s, &zt, &zj, run).unwrap();
        assert!(obj.mean_abs_q >= obj.l_r.abs() - 1e-12);

        let critic_params_before = (p.q1.flat_values(), p.q2.flat_values());
        policy.zero_grads();
        let grads = obj.backward(&p, &mut policy, &schedule, 1.0).unwrap();
        // Policy received gradient, critics bit-identical.
        assert!(policy.flat_grads().iter().any(|&g| g != 0.0));
        assert_eq!(p.q1.flat_values(), critic_params_before.0);
        assert_eq!(p.q2.flat_values(), critic_params_before.1);
        assert!(grads.z_text.all_finite() && grads.z_traj.all_finite());
    }

    #[test]
    fn reward_objective_policy_gradient_matches_finite_differences() {
        use crate::neural::grad_check;
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut policy = NoisePredictor::new(2, 4, D_EMBED, 8, 12, 2, &mut rng).unwrap();
        // Keep pre-clip values clear of the boundary.
        policy.visit_params_mut(&mut |_, p| p.value.scale(0.2));
        let schedule = build_schedule(3, 0.1, 10.0).unwrap();
        let p = pair(24, true);
        let (zt, zj) = zs(25);
        let s = standard_normal(&mut rng, 3, 4);
        let noises = SampleNoises::draw(&mut rng, 3, 2, 3);
        let run = sample_action_differentiable(&policy, &schedule, &s, &zt, &zj, &noises).unwrap();
        let obj = reward_objective(&p, 1, &s, &zt, &zj, run).unwrap();
        policy.zero_grads();
        obj.backward(&p, &mut policy, &schedule, 1.0).unwrap();
        let report = grad_check(
            &mut policy,
            &mut |pol: &NoisePredictor| {
                let run =
                    sample_action_differentiable(pol, &schedule, &s, &zt, &zj, &noises).unwrap();
                reward_objective(&p, 1, &s, &zt, &zj, run).unwrap().l_r
            },
            1e-5,
        );
        assert!(report.worst_rel < 1e-4, "{report:?}");
    }

    #[test]
    fn reward_objective_rejects_detached_actions() {
        let mut rng = ChaCha12Rng::seed_from_u64(26);
        let mut policy = NoisePredictor::new(2, 4, D_EMBED, 8, 12, 2, &mut rng).unwrap();
        let schedule = build_schedule(3, 0.1, 10.0).unwrap();
        let p = pair(27, true);
        let (zt, zj) = zs(28);
        let s = standard_normal(&mut rng, 2, 4);
        let run = SampleRun::from_actions(Tensor2::zeros(2, 2));
        let obj = reward_objective(&p, 0, &s, &zt, &zj, run).unwrap();
        assert!(matches!(
            obj.backward(&p, &mut policy, &schedule, 1.0),
            Err(Error::Contract(_))
        ));
    }
}
