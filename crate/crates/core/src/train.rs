//! Offline actor-critic training of the prompt-conditioned diffusion
//! policy.
//!
//! Each epoch picks one task, embeds its prompts once with the current
//! encoders, and runs a fixed number of gradient steps on batches drawn
//! from that task's transitions. A step updates the two critics by TD
//! regression against the frozen targets, then updates the policy and both
//! prompt encoders on the combined objective
//!
//! ```text
//! L = L_denoise - lambda_eff * mean Q(s, sampled action)
//! ```
//!
//! where `lambda_eff` rescales the configured `lambda` by the batch's mean
//! |Q| so the two terms stay comparable as critic magnitudes grow. Target
//! networks track the critics by Polyak averaging after every step.
//!
//! Every random decision a step makes can be captured in a [`StepTrace`]
//! for replay, which is how the routing of gradients between the branches
//! is audited end to end in the integration tests.

use crate::critic::{q_loss, reward_objective, CriticPair, TdBatch};
use crate::data::{TaskDataset, Transition};
use crate::diffusion::{build_schedule, NoiseSchedule};
use crate::env::{ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::neural::{AdamState, Mlp, MlpCache, Parameterized};
use crate::policy::{
    diffusion_loss, sample_action_differentiable, sample_action_with, DiffusionBatchRand,
    NoisePredictor, SampleNoises,
};
use crate::prompts::{
    encode_prompt_raw, truncate_prompt, ExternalEncoder, HashTextEncoder, TextEncoder,
    TrajectoryEncoder, TrajectoryEncoderCache, TrajectoryPrompt,
};
use crate::tensor::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which conditioning branches train and feed the networks. Disabled
/// branches are replaced by zero embeddings of the same width, so network
/// shapes never change across variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoPrompt,
    NoText,
    NoTraj,
    /// Recognised but unimplemented: generating trajectory prompts with a
    /// second diffusion model. Rejected at construction.
    TrajectoryDiffusionStub,
}

impl Ablation {
    pub fn text_live(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoTraj)
    }

    pub fn traj_live(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoText)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoPrompt => "no_prompt",
            Ablation::NoText => "no_text",
            Ablation::NoTraj => "no_traj",
            Ablation::TrajectoryDiffusionStub => "trajectory_diffusion_stub",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_prompt" => Ok(Ablation::NoPrompt),
            "no_text" => Ok(Ablation::NoText),
            "no_traj" => Ok(Ablation::NoTraj),
            "trajectory_diffusion_stub" => Ok(Ablation::TrajectoryDiffusionStub),
            other => Err(Error::config(format!(
                "unknown ablation {other:?} (expected full, no_prompt, no_text, no_traj, or trajectory_diffusion_stub)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderKind {
    /// Deterministic feature-hashing encoder, fully offline.
    Hash,
    /// HTTP embedding service; endpoint from `DIFFPOL_EMBED_ENDPOINT`.
    External,
}

/// All training hyper-parameters. Loads from TOML; unknown keys are
/// rejected and omitted keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    // Problem dimensions.
    pub state_dim: usize,
    pub action_dim: usize,
    /// Width of each prompt embedding fed to policy and critics.
    pub d_embed: usize,
    /// Width of the raw text-encoder output.
    pub d_raw: usize,
    /// Width of the sinusoidal diffusion-step features.
    pub d_time: usize,
    pub max_prompt_len: usize,
    // Network sizes.
    pub policy_width: usize,
    pub policy_depth: usize,
    pub critic_width: usize,
    pub critic_depth: usize,
    pub text_head_hidden: usize,
    pub traj_d_model: usize,
    pub traj_blocks: usize,
    pub traj_heads: usize,
    pub traj_ff_hidden: usize,
    pub traj_head_hidden: usize,
    // Diffusion schedule.
    pub num_diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    // Optimization.
    pub gamma: f64,
    pub lambda: f64,
    /// Divide lambda by the batch mean |Q| before weighting the
    /// policy-improvement gradient.
    pub lambda_normalize: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub polyak_tau: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_encoder: f64,
    pub seed: u64,
    /// Condition the critics on the prompt embeddings too.
    pub critic_prompt_conditioning: bool,
    pub ablation: Ablation,
    pub text_encoder: TextEncoderKind,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            state_dim: STATE_DIM,
            action_dim: ACTION_DIM,
            d_embed: 32,
            d_raw: 256,
            d_time: 16,
            max_prompt_len: 64,
            policy_width: 128,
            policy_depth: 3,
            critic_width: 128,
            critic_depth: 3,
            text_head_hidden: 128,
            traj_d_model: 32,
            traj_blocks: 2,
            traj_heads: 4,
            traj_ff_hidden: 64,
            traj_head_hidden: 64,
            num_diffusion_steps: 5,
            beta_min: 0.1,
            beta_max: 10.0,
            gamma: 0.99,
            lambda: 1.0,
            lambda_normalize: true,
            batch_size: 256,
            epochs: 150,
            steps_per_epoch: 100,
            polyak_tau: 0.005,
            lr_policy: 3e-4,
            lr_critic: 3e-4,
            lr_encoder: 1e-4,
            seed: 0,
            critic_prompt_conditioning: true,
            ablation: Ablation::Full,
            text_encoder: TextEncoderKind::Hash,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("state_dim", self.state_dim),
            ("action_dim", self.action_dim),
            ("d_embed", self.d_embed),
            ("d_raw", self.d_raw),
            ("max_prompt_len", self.max_prompt_len),
            ("policy_width", self.policy_width),
            ("policy_depth", self.policy_depth),
            ("critic_width", self.critic_width),
            ("critic_depth", self.critic_depth),
            ("text_head_hidden", self.text_head_hidden),
            ("traj_d_model", self.traj_d_model),
            ("traj_blocks", self.traj_blocks),
            ("traj_heads", self.traj_heads),
            ("traj_ff_hidden", self.traj_ff_hidden),
            ("traj_head_hidden", self.traj_head_hidden),
            ("batch_size", self.batch_size),
            ("steps_per_epoch", self.steps_per_epoch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.polyak_tau) {
            return Err(Error::config(format!(
                "polyak_tau {} outside [0, 1]",
                self.polyak_tau
            )));
        }
        for (name, lr) in [
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("lr_encoder", self.lr_encoder),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be a positive number")));
            }
        }
        // The schedule and network constructors re-check their own inputs;
        // building the schedule here surfaces bad betas early.
        build_schedule(self.num_diffusion_steps, self.beta_min, self.beta_max)?;
        if self.d_time == 0 || self.d_time % 2 != 0 {
            return Err(Error::config("d_time must be a positive even number"));
        }
        if self.traj_d_model % self.traj_heads != 0 {
            return Err(Error::config(format!(
                "traj_d_model {} must divide into {} heads",
                self.traj_d_model, self.traj_heads
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainerConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainerConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Build the configured text encoder. The external encoder reads its
/// endpoint from `DIFFPOL_EMBED_ENDPOINT`.
pub fn make_text_encoder(config: &TrainerConfig) -> Result<Box<dyn TextEncoder>> {
    match config.text_encoder {
        TextEncoderKind::Hash => Ok(Box::new(HashTextEncoder::new(config.d_raw)?)),
        TextEncoderKind::External => {
            let endpoint = std::env::var("DIFFPOL_EMBED_ENDPOINT").map_err(|_| {
                Error::config(
                    "text_encoder = \"external\" needs DIFFPOL_EMBED_ENDPOINT to be set",
                )
            })?;
            let client =
                ExternalEncoder::new(crate::prompts::EncoderClientConfig::new(endpoint, config.d_raw))?;
            Ok(Box::new(client))
        }
    }
}

/// One task ready for training: its transitions, the raw (pre-projection)
/// text encoding, and the truncated demonstration.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub task_id: String,
    pub transitions: Vec<Transition>,
    pub raw_text: Vec<f64>,
    pub trajectory_prompt: TrajectoryPrompt,
}

/// Validate datasets against the config and run the frozen text encoder
/// once per task. Branches disabled by the ablation skip the encoder and
/// store zeros.
pub fn prepare_tasks(
    datasets: &[TaskDataset],
    encoder: &dyn TextEncoder,
    config: &TrainerConfig,
) -> Result<Vec<PreparedTask>> {
    if datasets.is_empty() {
        return Err(Error::argument("no datasets to train on"));
    }
    if encoder.dim() != config.d_raw {
        return Err(Error::config(format!(
            "text encoder width {} but config d_raw = {}",
            encoder.dim(),
            config.d_raw
        )));
    }
    datasets
        .iter()
        .map(|d| {
            if d.state_dim != config.state_dim || d.action_dim != config.action_dim {
                return Err(Error::config(format!(
                    "dataset {} has dims ({}, {}), config wants ({}, {})",
                    d.task_id, d.state_dim, d.action_dim, config.state_dim, config.action_dim
                )));
            }
            if d.transitions.is_empty() {
                return Err(Error::argument(format!("dataset {} is empty", d.task_id)));
            }
            let raw_text = if config.ablation.text_live() {
                encode_prompt_raw(encoder, &d.text_prompt)?
            } else {
                vec![0.0; config.d_raw]
            };
            Ok(PreparedTask {
                task_id: d.task_id.clone(),
                transitions: d.transitions.clone(),
                raw_text,
                trajectory_prompt: truncate_prompt(&d.trajectory_prompt, config.max_prompt_len)?,
            })
        })
        .collect()
}

/// Full mutable training state: all networks, their optimizers, the
/// schedule, and the one RNG that drives every stochastic choice.
pub struct TrainState {
    pub config: TrainerConfig,
    pub schedule: NoiseSchedule,
    pub policy: NoisePredictor,
    pub critics: CriticPair,
    pub text_head: Mlp,
    pub traj_encoder: TrajectoryEncoder,
    pub opt_policy: AdamState,
    pub opt_q1: AdamState,
    pub opt_q2: AdamState,
    pub opt_text: AdamState,
    pub opt_traj: AdamState,
    pub rng: ChaCha12Rng,
    pub epoch: usize,
}

impl TrainState {
    /// Initialize every network from the config seed. Construction order
    /// is fixed: policy, critics, text head, trajectory encoder.
    pub fn new(config: TrainerConfig) -> Result<TrainState> {
        config.validate()?;
        if config.ablation == Ablation::TrajectoryDiffusionStub {
            return Err(Error::config(
                "ablation trajectory_diffusion_stub is a recognised placeholder for generating \
                 demonstrations with a second diffusion model; it is not implemented — choose \
                 full, no_prompt, no_text, or no_traj",
            ));
        }
        let schedule = build_schedule(config.num_diffusion_steps, config.beta_min, config.beta_max)?;
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let policy = NoisePredictor::new(
            config.action_dim,
            config.state_dim,
            config.d_embed,
            config.d_time,
            config.policy_width,
            config.policy_depth,
            &mut rng,
        )?;
        let critics = CriticPair::new(
            config.state_dim,
            config.action_dim,
            config.d_embed,
            config.critic_prompt_conditioning,
            config.critic_width,
            config.critic_depth,
            config.polyak_tau,
            &mut rng,
        )?;
        // Raw text encodings are L2-normalized; lift the head's first layer
        // so the text pathway starts at the same signal scale as the rest.
        let text_head = crate::prompts::projection_head(
            config.d_raw,
            config.text_head_hidden,
            config.d_embed,
            (config.d_raw as f64).sqrt() * 0.25,
            &mut rng,
        )?;
        let traj_encoder = TrajectoryEncoder::new(
            config.state_dim,
            config.action_dim,
            config.traj_d_model,
            config.traj_blocks,
            config.traj_heads,
            config.traj_ff_hidden,
            config.traj_head_hidden,
            config.d_embed,
            &mut rng,
        )?;
        let opt_policy = AdamState::new(config.lr_policy, &policy);
        let opt_q1 = AdamState::new(config.lr_critic, &critics.q1);
        let opt_q2 = AdamState::new(config.lr_critic, &critics.q2);
        let opt_text = AdamState::new(config.lr_encoder, &text_head);
        let opt_traj = AdamState::new(config.lr_encoder, &traj_encoder);
        Ok(TrainState {
            config,
            schedule,
            policy,
            critics,
            text_head,
            traj_encoder,
            opt_policy,
            opt_q1,
            opt_q2,
            opt_text,
            opt_traj,
            rng,
            epoch: 0,
        })
    }
}

/// Adaptive weight on the policy-improvement gradient.
pub fn effective_lambda(lambda: f64, normalize: bool, mean_abs_q: f64) -> f64 {
    if normalize {
        lambda / mean_abs_q.max(1e-8)
    } else {
        lambda
    }
}

/// Averages over one epoch's gradient steps, one JSON line per epoch in
/// the metrics log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task_id: String,
    pub l_denoise: f64,
    pub l_reward: f64,
    pub l_q1: f64,
    pub l_q2: f64,
    pub mean_abs_q: f64,
    pub lambda_eff: f64,
}

/// Every random draw and every gradient vector of one step, recorded right
/// before the optimizer consumed it. Lets a test replay the step on a
/// snapshot and check that each loss moved exactly the parameters it was
/// supposed to.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub task_index: usize,
    pub batch: Vec<usize>,
    pub next_noises: SampleNoises,
    pub ell: usize,
    pub diff_rand: DiffusionBatchRand,
    pub sample_noises: SampleNoises,
    pub lambda_eff: f64,
    pub q1_grads: Vec<f64>,
    pub q2_grads: Vec<f64>,
    pub policy_grads: Vec<f64>,
    pub text_grads: Vec<f64>,
    pub traj_grads: Vec<f64>,
}

/// Prompt embeddings for the epoch's task, computed once from the
/// encoder parameters at the start of the epoch.
pub struct EpochEmbeds {
    pub z_text: Tensor2,
    pub z_traj: Tensor2,
    text_cache: MlpCache,
    traj_cache: TrajectoryEncoderCache,
}

/// Run the encoders (or substitute zeros) for one task under the config's
/// ablation.
pub fn embed_task(
    state: &TrainState,
    task: &PreparedTask,
) -> Result<EpochEmbeds> {
    let cfg = &state.config;
    let mut text_cache = MlpCache::default();
    let mut traj_cache = TrajectoryEncoderCache::default();
    let z_text = if cfg.ablation.text_live() {
        let raw = Tensor2::from_vec(1, cfg.d_raw, task.raw_text.clone())?;
        state.text_head.forward(&raw, &mut text_cache)?
    } else {
        Tensor2::zeros(1, cfg.d_embed)
    };
    let z_traj = if cfg.ablation.traj_live() {
        state
            .traj_encoder
            .embed(&task.trajectory_prompt, &mut traj_cache)?
    } else {
        Tensor2::zeros(1, cfg.d_embed)
    };
    Ok(EpochEmbeds {
        z_text,
        z_traj,
        text_cache,
        traj_cache,
    })
}

fn build_batch(
    transitions: &[Transition],
    indices: &[usize],
    state_dim: usize,
    action_dim: usize,
) -> (Tensor2, Tensor2, Vec<f64>, Tensor2, Vec<bool>) {
    let b = indices.len();
    let mut state = Tensor2::zeros(b, state_dim);
    let mut action = Tensor2::zeros(b, action_dim);
    let mut next_state = Tensor2::zeros(b, state_dim);
    let mut reward = Vec::with_capacity(b);
    let mut terminal = Vec::with_capacity(b);
    for (row, &i) in indices.iter().enumerate() {
        let t = &transitions[i];
        state.row_mut(row).copy_from_slice(&t.state);
        action.row_mut(row).copy_from_slice(&t.action);
        next_state.row_mut(row).copy_from_slice(&t.next_state);
        reward.push(t.reward);
        terminal.push(t.terminal);
    }
    (state, action, reward, next_state, terminal)
}

/// One epoch: pick a task, embed its prompts, then `steps_per_epoch`
/// critic + actor updates. Increments `state.epoch`.
///
/// RNG consumption order per step is fixed and mirrored by [`StepTrace`]:
/// batch indices, bootstrap-action noises, critic pick, denoising-loss
/// randomness, sampler noises.
pub fn train_epoch(
    state: &mut TrainState,
    tasks: &[PreparedTask],
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<EpochMetrics> {
    if tasks.is_empty() {
        return Err(Error::argument("no tasks to train on"));
    }
    let cfg = state.config.clone();
    let task_index = state.rng.gen_range(0..tasks.len());
    let task = &tasks[task_index];
    let embeds = embed_task(state, task)?;
    let n = task.transitions.len();
    let b = cfg.batch_size;

    let mut sums = [0.0f64; 6]; // l_d, l_r, l_q1, l_q2, mean|Q|, lambda_eff
    for _ in 0..cfg.steps_per_epoch {
        let indices: Vec<usize> = (0..b).map(|_| state.rng.gen_range(0..n)).collect();
        let (s, a, r, s_next, terminal) =
            build_batch(&task.transitions, &indices, cfg.state_dim, cfg.action_dim);

        // --- Critic update -------------------------------------------
        let next_noises =
            SampleNoises::draw(&mut state.rng, b, cfg.action_dim, cfg.num_diffusion_steps);
        let a_next = sample_action_with(
            &state.policy,
            &state.schedule,
            &s_next,
            &embeds.z_text,
            &embeds.z_traj,
            &next_noises,
        )?;
        state.critics.zero_grads();
        let q_out = q_loss(
            &mut state.critics,
            &TdBatch {
                state: &s,
                action: &a,
                reward: &r,
                next_state: &s_next,
                next_action: &a_next,
                terminal: &terminal,
            },
            cfg.gamma,
            &embeds.z_text,
            &embeds.z_traj,
        )?;
        let (q1_grads, q2_grads) = if trace.is_some() {
            (state.critics.q1.flat_grads(), state.critics.q2.flat_grads())
        } else {
            (Vec::new(), Vec::new())
        };
        state.opt_q1.step(&mut state.critics.q1)?;
        state.opt_q2.step(&mut state.critics.q2)?;

        // --- Actor + encoder update -----------------------------------
        let ell = state.rng.gen_range(0..2usize);
        let diff_rand =
            DiffusionBatchRand::draw(&mut state.rng, &state.schedule, b, cfg.action_dim);
        let sample_noises =
            SampleNoises::draw(&mut state.rng, b, cfg.action_dim, cfg.num_diffusion_steps);

        state.policy.zero_grads();
        state.text_head.zero_grads();
        state.traj_encoder.zero_grads();

        let (l_d, cond_d) = diffusion_loss(
            &mut state.policy,
            &state.schedule,
            &a,
            &s,
            &embeds.z_text,
            &embeds.z_traj,
            &diff_rand,
            1.0,
        )?;
        let run = sample_action_differentiable(
            &state.policy,
            &state.schedule,
            &s,
            &embeds.z_text,
            &embeds.z_traj,
            &sample_noises,
        )?;
        let obj = reward_objective(
            &state.critics,
            ell,
            &s,
            &embeds.z_text,
            &embeds.z_traj,
            run,
        )?;
        let lambda_eff = effective_lambda(cfg.lambda, cfg.lambda_normalize, obj.mean_abs_q);
        let grads_r = obj.backward(
            &state.critics,
            &mut state.policy,
            &state.schedule,
            -lambda_eff,
        )?;

        if cfg.ablation.text_live() {
            let mut up = cond_d.z_text.clone();
            up.add_assign(&grads_r.z_text);
            state.text_head.backward(&embeds.text_cache, &up)?;
        }
        if cfg.ablation.traj_live() {
            let mut up = cond_d.z_traj.clone();
            up.add_assign(&grads_r.z_traj);
            state.traj_encoder.backward(&embeds.traj_cache, &up)?;
        }

        if let Some(out) = trace.as_deref_mut() {
            out.push(StepTrace {
                task_index,
                batch: indices,
                next_noises,
                ell,
                diff_rand,
                sample_noises,
                lambda_eff,
                q1_grads,
                q2_grads,
                policy_grads: state.policy.flat_grads(),
                text_grads: state.text_head.flat_grads(),
                traj_grads: state.traj_encoder.flat_grads(),
            });
        }

        state.opt_policy.step(&mut state.policy)?;
        if cfg.ablation.text_live() {
            state.opt_text.step(&mut state.text_head)?;
        }
        if cfg.ablation.traj_live() {
            state.opt_traj.step(&mut state.traj_encoder)?;
        }
        state.critics.polyak_update()?;

        sums[0] += l_d;
        sums[1] += obj.l_r;
        sums[2] += q_out.l_q1;
        sums[3] += q_out.l_q2;
        sums[4] += obj.mean_abs_q;
        sums[5] += lambda_eff;
    }

    state.epoch += 1;
    let k = cfg.steps_per_epoch as f64;
    Ok(EpochMetrics {
        epoch: state.epoch,
        task_id: task.task_id.clone(),
        l_denoise: sums[0] / k,
        l_reward: sums[1] / k,
        l_q1: sums[2] / k,
        l_q2: sums[3] / k,
        mean_abs_q: sums[4] / k,
        lambda_eff: sums[5] / k,
    })
}

/// Train for `config.epochs` epochs (or until `state.epoch` reaches it,
/// when resuming), reporting each epoch's metrics to the callback.
pub fn train(
    state: &mut TrainState,
    tasks: &[PreparedTask],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<()> {
    while state.epoch < state.config.epochs {
        let m = train_epoch(state, tasks, None)?;
        on_epoch(&m);
    }
    Ok(())
}
