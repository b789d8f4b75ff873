//! Policy evaluation on benchmark tasks, seen and held out.
//!
//! Each task gets its own RNG stream keyed by position, so adding episodes
//! or tasks never perturbs the others. The task prompt is built the same
//! way the training data was: the template text plus one scripted
//! demonstration, embedded once with the trained encoders (with the same
//! zeroing rules the training ablation used).

use crate::data::{prompt_for_task, Benchmark, TaskDataset, MAX_PROMPT_LEN, PROMPT_NOISE};
use crate::env::{behavior_policy, PointNavEnv, TaskSpec, STATE_DIM};
use crate::error::{Error, Result};
use crate::neural::MlpCache;
use crate::policy::sample_action;
use crate::prompts::{
    embed_text, truncate_prompt, TextEncoder, TrajectoryEncoderCache, TrajectoryPrompt,
};
use crate::tensor::Tensor2;
use crate::train::{prepare_tasks, train, Ablation, TrainState, TrainerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub task_id: String,
    pub seen: bool,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Success rates averaged over each split.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub seen_success: f64,
    pub unseen_success: f64,
    pub seen_return: f64,
    pub unseen_return: f64,
}

fn check_dims(state: &TrainState) -> Result<()> {
    if state.config.state_dim != STATE_DIM || state.config.action_dim != crate::env::ACTION_DIM {
        return Err(Error::config(format!(
            "checkpoint was trained for dims ({}, {}) but the environment provides ({STATE_DIM}, {})",
            state.config.state_dim,
            state.config.action_dim,
            crate::env::ACTION_DIM,
        )));
    }
    Ok(())
}

/// Roll `episodes` stochastic episodes of the trained policy on one task.
pub fn evaluate_task(
    state: &TrainState,
    encoder: &dyn TextEncoder,
    spec: &TaskSpec,
    seen: bool,
    episodes: usize,
    rng: &mut ChaCha12Rng,
) -> Result<EvalRow> {
    if episodes == 0 {
        return Err(Error::argument("need at least one evaluation episode"));
    }
    check_dims(state)?;
    let cfg = &state.config;
    let mut env = PointNavEnv::new(spec.clone())?;

    // Demonstration prompt, collected exactly like the training data's.
    let mut states = vec![env.reset_random(rng)];
    let mut actions = Vec::new();
    loop {
        let s = states.last().expect("at least the reset state");
        let a = behavior_policy(spec, s, PROMPT_NOISE, rng)?;
        let out = env.step(&a)?;
        actions.push(a.to_vec());
        states.push(out.state);
        if out.terminal {
            break;
        }
    }
    let demo = truncate_prompt(
        &TrajectoryPrompt { states, actions },
        cfg.max_prompt_len.min(MAX_PROMPT_LEN),
    )?;

    let z_text = if cfg.ablation.text_live() {
        let mut cache = MlpCache::default();
        embed_text(encoder, &state.text_head, &prompt_for_task(spec), &mut cache)?
    } else {
        Tensor2::zeros(1, cfg.d_embed)
    };
    let z_traj = if cfg.ablation.traj_live() {
        let mut cache = TrajectoryEncoderCache::default();
        state.traj_encoder.embed(&demo, &mut cache)?
    } else {
        Tensor2::zeros(1, cfg.d_embed)
    };

    let mut successes = 0usize;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset_random(rng);
        let mut ret = 0.0;
        loop {
            let st = Tensor2::from_vec(1, cfg.state_dim, s)?;
            let a = sample_action(&state.policy, &state.schedule, &st, &z_text, &z_traj, rng)?;
            let out = env.step(a.row(0))?;
            ret += out.reward;
            s = out.state;
            if out.terminal {
                if out.success {
                    successes += 1;
                }
                break;
            }
        }
        returns.push(ret);
    }
    let n = episodes as f64;
    let mean_return = returns.iter().sum::<f64>() / n;
    let var = returns
        .iter()
        .map(|r| (r - mean_return).powi(2))
        .sum::<f64>()
        / n;
    Ok(EvalRow {
        task_id: spec.task_id.clone(),
        seen,
        episodes,
        successes,
        success_rate: successes as f64 / n,
        mean_return,
        std_return: var.sqrt(),
    })
}

/// Evaluate every benchmark task, seen split first. Task `i` uses stream
/// `i` of `seed`.
pub fn evaluate(
    state: &TrainState,
    encoder: &dyn TextEncoder,
    benchmark: &Benchmark,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    benchmark.validate()?;
    let tasks = benchmark
        .seen
        .iter()
        .map(|s| (s, true))
        .chain(benchmark.unseen.iter().map(|s| (s, false)));
    tasks
        .enumerate()
        .map(|(i, (spec, seen))| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            evaluate_task(state, encoder, spec, seen, episodes, &mut rng)
        })
        .collect()
}

pub fn summarize(rows: &[EvalRow]) -> EvalSummary {
    let split = |seen: bool| {
        let picked: Vec<&EvalRow> = rows.iter().filter(|r| r.seen == seen).collect();
        if picked.is_empty() {
            return (0.0, 0.0);
        }
        let n = picked.len() as f64;
        (
            picked.iter().map(|r| r.success_rate).sum::<f64>() / n,
            picked.iter().map(|r| r.mean_return).sum::<f64>() / n,
        )
    };
    let (seen_success, seen_return) = split(true);
    let (unseen_success, unseen_return) = split(false);
    EvalSummary {
        seen_success,
        unseen_success,
        seen_return,
        unseen_return,
    }
}

/// Aligned text table of per-task results plus split averages.
pub fn format_table(rows: &[EvalRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>7} {:>10} {:>8} {:>12} {:>10}\n",
        "task", "split", "successes", "rate", "mean return", "std"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<28} {:>7} {:>6}/{:<3} {:>8.3} {:>12.3} {:>10.3}\n",
            r.task_id,
            if r.seen { "seen" } else { "unseen" },
            r.successes,
            r.episodes,
            r.success_rate,
            r.mean_return,
            r.std_return
        ));
    }
    let s = summarize(rows);
    out.push_str(&format!(
        "{:<28} {:>7} {:>10} {:>8.3} {:>12.3}\n",
        "average", "seen", "", s.seen_success, s.seen_return
    ));
    out.push_str(&format!(
        "{:<28} {:>7} {:>10} {:>8.3} {:>12.3}\n",
        "average", "unseen", "", s.unseen_success, s.unseen_return
    ));
    out
}

/// One JSON object per row.
pub fn write_report(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Mean and spread of split success rates over several seeds of one
/// training variant.
#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub ablation: String,
    pub seeds: usize,
    pub seen_mean: f64,
    pub seen_std: f64,
    pub unseen_mean: f64,
    pub unseen_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Train one run per (variant, seed) from scratch and evaluate it. This is
/// the expensive full-matrix experiment behind the comparison table.
#[allow(clippy::too_many_arguments)]
pub fn ablation_matrix(
    base: &TrainerConfig,
    datasets: &[TaskDataset],
    encoder: &dyn TextEncoder,
    benchmark: &Benchmark,
    variants: &[Ablation],
    seeds: &[u64],
    episodes: usize,
    eval_seed: u64,
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationCell>> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::argument("ablation matrix needs variants and seeds"));
    }
    let mut cells = Vec::with_capacity(variants.len());
    for &ablation in variants {
        let mut seen_rates = Vec::with_capacity(seeds.len());
        let mut unseen_rates = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainerConfig {
                ablation,
                seed,
                ..base.clone()
            };
            progress(&format!("training {} seed {seed}", ablation.name()));
            let tasks = prepare_tasks(datasets, encoder, &cfg)?;
            let mut state = TrainState::new(cfg)?;
            train(&mut state, &tasks, |_| {})?;
            let rows = evaluate(&state, encoder, benchmark, episodes, eval_seed)?;
            let s = summarize(&rows);
            seen_rates.push(s.seen_success);
            unseen_rates.push(s.unseen_success);
        }
        let (seen_mean, seen_std) = mean_std(&seen_rates);
        let (unseen_mean, unseen_std) = mean_std(&unseen_rates);
        cells.push(AblationCell {
            ablation: ablation.name().to_string(),
            seeds: seeds.len(),
            seen_mean,
            seen_std,
            unseen_mean,
            unseen_std,
        });
    }
    Ok(cells)
}

pub fn format_ablation_table(cells: &[AblationCell]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>6} {:>20} {:>20}\n",
        "variant", "seeds", "seen success", "unseen success"
    ));
    for c in cells {
        out.push_str(&format!(
            "{:<12} {:>6} {:>12.3} ± {:>5.3} {:>12.3} ± {:>5.3}\n",
            c.ablation, c.seeds, c.seen_mean, c.seen_std, c.unseen_mean, c.unseen_std
        ));
    }
    out
}
