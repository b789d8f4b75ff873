//! Whole-training-state checkpoints in a plain-text format.
//!
//! A checkpoint carries everything a resumed run needs to continue bit for
//! bit: the config, the epoch counter, the RNG position, every network's
//! parameters (online and target), and every optimizer's moment buffers
//! and step counts. Loading parses and validates the complete file before
//! touching anything, and saving the same state twice produces identical
//! bytes.

use crate::error::{Error, Result};
use crate::neural::{assign_params, read_params, write_tensor, AdamState, Parameterized};
use crate::tensor::Tensor2;
use crate::train::{TrainState, TrainerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;
use std::path::Path;

const MAGIC: &str = "diffpol-checkpoint v1";

/// The five optimizer slots, in file order.
const OPT_NAMES: [&str; 5] = ["policy", "q1", "q2", "text", "traj"];

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::argument(format!("bad hex string {s:?}")));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|e| Error::argument(format!("bad hex byte: {e}")))
        })
        .collect()
}

fn visit_names<N: Parameterized + ?Sized>(net: &N) -> Vec<String> {
    let mut names = Vec::new();
    net.visit_params(&mut |name, _| names.push(name.to_string()));
    names
}

fn write_prefixed(
    out: &mut Vec<u8>,
    prefix: &str,
    net: &impl Parameterized,
) -> std::io::Result<()> {
    let mut result = Ok(());
    net.visit_params(&mut |name, p| {
        if result.is_ok() {
            result = write_tensor(out, &format!("{prefix}.{name}"), &p.value);
        }
    });
    result
}

fn write_opt(
    out: &mut Vec<u8>,
    slot: &str,
    opt: &AdamState,
    net: &impl Parameterized,
) -> std::io::Result<()> {
    let names = visit_names(net);
    let (m, v) = opt.buffers();
    for (name, t) in names.iter().zip(m) {
        write_tensor(out, &format!("opt.{slot}.m.{name}"), t)?;
    }
    for (name, t) in names.iter().zip(v) {
        write_tensor(out, &format!("opt.{slot}.v.{name}"), t)?;
    }
    Ok(())
}

fn render(state: &TrainState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let config_json =
        serde_json::to_string(&state.config).expect("config serializes to JSON");
    let io = |e: std::io::Error| Error::Io(e);
    (|| -> std::io::Result<()> {
        use std::io::Write as _;
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "config {config_json}")?;
        writeln!(out, "epoch {}", state.epoch)?;
        writeln!(
            out,
            "rng {} {} {}",
            hex_encode(&state.rng.get_seed()),
            state.rng.get_stream(),
            state.rng.get_word_pos()
        )?;
        for (slot, opt) in [
            ("policy", &state.opt_policy),
            ("q1", &state.opt_q1),
            ("q2", &state.opt_q2),
            ("text", &state.opt_text),
            ("traj", &state.opt_traj),
        ] {
            writeln!(out, "opt {slot} {}", opt.step_count())?;
        }
        write_prefixed(&mut out, "policy", &state.policy)?;
        write_prefixed(&mut out, "q1", &state.critics.q1)?;
        write_prefixed(&mut out, "q2", &state.critics.q2)?;
        write_prefixed(&mut out, "q1_target", &state.critics.q1_target)?;
        write_prefixed(&mut out, "q2_target", &state.critics.q2_target)?;
        write_prefixed(&mut out, "text_head", &state.text_head)?;
        write_prefixed(&mut out, "traj_encoder", &state.traj_encoder)?;
        write_opt(&mut out, "policy", &state.opt_policy, &state.policy)?;
        write_opt(&mut out, "q1", &state.opt_q1, &state.critics.q1)?;
        write_opt(&mut out, "q2", &state.opt_q2, &state.critics.q2)?;
        write_opt(&mut out, "text", &state.opt_text, &state.text_head)?;
        write_opt(&mut out, "traj", &state.opt_traj, &state.traj_encoder)?;
        Ok(())
    })()
    .map_err(io)?;
    Ok(out)
}

/// Serialize the full training state to `path`. The write goes through a
/// sibling temp file and a rename, so an interrupted save never leaves a
/// half-written checkpoint behind.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = render(state)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct ParsedHeader {
    config: TrainerConfig,
    epoch: usize,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: u128,
    opt_steps: HashMap<String, u64>,
}

fn parse_header(lines: &mut std::iter::Peekable<std::str::Lines>) -> Result<ParsedHeader> {
    let bad = |msg: String| Error::state(format!("checkpoint header: {msg}"));
    let first = lines.next().ok_or_else(|| bad("empty file".into()))?;
    if first != MAGIC {
        return Err(bad(format!("expected {MAGIC:?}, found {first:?}")));
    }
    let config_line = lines.next().ok_or_else(|| bad("missing config".into()))?;
    let config_json = config_line
        .strip_prefix("config ")
        .ok_or_else(|| bad(format!("expected config line, found {config_line:?}")))?;
    let config: TrainerConfig = serde_json::from_str(config_json)
        .map_err(|e| bad(format!("bad config JSON: {e}")))?;
    config.validate()?;

    let epoch_line = lines.next().ok_or_else(|| bad("missing epoch".into()))?;
    let epoch: usize = epoch_line
        .strip_prefix("epoch ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad epoch line {epoch_line:?}")))?;

    let rng_line = lines.next().ok_or_else(|| bad("missing rng".into()))?;
    let parts: Vec<&str> = rng_line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "rng" {
        return Err(bad(format!("bad rng line {rng_line:?}")));
    }
    let seed_vec = hex_decode(parts[1])?;
    let rng_seed: [u8; 32] = seed_vec
        .try_into()
        .map_err(|_| bad("rng seed must be 32 bytes".into()))?;
    let rng_stream: u64 = parts[2]
        .parse()
        .map_err(|e| bad(format!("bad rng stream: {e}")))?;
    let rng_word_pos: u128 = parts[3]
        .parse()
        .map_err(|e| bad(format!("bad rng word position: {e}")))?;

    let mut opt_steps = HashMap::new();
    for expected in OPT_NAMES {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing opt {expected} line")))?;
        let rest = line
            .strip_prefix("opt ")
            .ok_or_else(|| bad(format!("expected opt line, found {line:?}")))?;
        let (slot, step) = rest
            .split_once(' ')
            .ok_or_else(|| bad(format!("bad opt line {line:?}")))?;
        if slot != expected {
            return Err(bad(format!("expected opt {expected}, found {slot}")));
        }
        let step: u64 = step.parse().map_err(|e| bad(format!("bad opt step: {e}")))?;
        opt_steps.insert(slot.to_string(), step);
    }
    Ok(ParsedHeader {
        config,
        epoch,
        rng_seed,
        rng_stream,
        rng_word_pos,
        opt_steps,
    })
}

/// Pull out the entries for `net`, in its visit order, with the prefix
/// stripped. Errors name the first missing parameter.
fn take_section<N: Parameterized + ?Sized>(
    entries: &mut HashMap<String, Tensor2>,
    prefix: &str,
    net: &N,
) -> Result<Vec<(String, Tensor2)>> {
    visit_names(net)
        .into_iter()
        .map(|name| {
            let key = format!("{prefix}.{name}");
            entries
                .remove(&key)
                .map(|t| (name, t))
                .ok_or_else(|| Error::state(format!("checkpoint missing parameter {key}")))
        })
        .collect()
}

fn restore_opt(
    entries: &mut HashMap<String, Tensor2>,
    slot: &str,
    opt: &mut AdamState,
    net: &impl Parameterized,
    step: u64,
) -> Result<()> {
    let names = visit_names(net);
    let mut collect = |kind: &str| -> Result<Vec<Tensor2>> {
        names
            .iter()
            .map(|name| {
                entries
                    .remove(&format!("opt.{slot}.{kind}.{name}"))
                    .ok_or_else(|| {
                        Error::state(format!(
                            "checkpoint missing optimizer buffer opt.{slot}.{kind}.{name}"
                        ))
                    })
            })
            .collect()
    };
    let m = collect("m")?;
    let v = collect("v")?;
    opt.restore(m, v, step)
}

/// Rebuild a full [`TrainState`] from a checkpoint file. The entire file
/// is parsed and validated first; errors never yield a half-restored state.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().peekable();
    let header = parse_header(&mut lines)?;

    // Everything after the header is param blocks.
    let header_lines = 4 + OPT_NAMES.len();
    let body_start = text
        .lines()
        .take(header_lines)
        .map(|l| l.len() + 1)
        .sum::<usize>();
    let body = &text[body_start.min(text.len())..];
    let parsed = read_params(std::io::Cursor::new(body))?;
    let mut entries: HashMap<String, Tensor2> = HashMap::with_capacity(parsed.len());
    for (name, t) in parsed {
        if entries.insert(name.clone(), t).is_some() {
            return Err(Error::state(format!("checkpoint repeats parameter {name}")));
        }
    }

    let mut state = TrainState::new(header.config)?;
    for (prefix, net) in [
        ("policy", &mut state.policy as &mut dyn Parameterized),
        ("q1", &mut state.critics.q1),
        ("q2", &mut state.critics.q2),
        ("q1_target", &mut state.critics.q1_target),
        ("q2_target", &mut state.critics.q2_target),
        ("text_head", &mut state.text_head),
        ("traj_encoder", &mut state.traj_encoder),
    ] {
        let section = take_section(&mut entries, prefix, net)?;
        assign_params(net, &section)
            .map_err(|e| Error::state(format!("checkpoint section {prefix}: {e}")))?;
    }
    let step = |slot: &str| *header.opt_steps.get(slot).expect("header validated");
    restore_opt(&mut entries, "policy", &mut state.opt_policy, &state.policy, step("policy"))?;
    restore_opt(&mut entries, "q1", &mut state.opt_q1, &state.critics.q1, step("q1"))?;
    restore_opt(&mut entries, "q2", &mut state.opt_q2, &state.critics.q2, step("q2"))?;
    restore_opt(&mut entries, "text", &mut state.opt_text, &state.text_head, step("text"))?;
    restore_opt(
        &mut entries,
        "traj",
        &mut state.opt_traj,
        &state.traj_encoder,
        step("traj"),
    )?;
    if let Some(name) = entries.keys().next() {
        return Err(Error::state(format!(
            "checkpoint has {} unexpected parameters (first: {name})",
            entries.len()
        )));
    }

    state.rng = ChaCha12Rng::from_seed(header.rng_seed);
    state.rng.set_stream(header.rng_stream);
    state.rng.set_word_pos(header.rng_word_pos);
    state.epoch = header.epoch;
    Ok(state)
}

/// Bitwise comparison of two training states: parameters, optimizer
/// buffers, RNG position, and epoch. Exactly the fidelity a checkpoint
/// must preserve.
pub fn states_equal(a: &TrainState, b: &TrainState) -> bool {
    use crate::neural::params_bitwise_eq;
    let opts_equal = |x: &AdamState, y: &AdamState| {
        if x.step_count() != y.step_count() {
            return false;
        }
        let (xm, xv) = x.buffers();
        let (ym, yv) = y.buffers();
        xm.len() == ym.len()
            && xm.iter().zip(ym).all(|(p, q)| p.bitwise_eq(q))
            && xv.iter().zip(yv).all(|(p, q)| p.bitwise_eq(q))
    };
    a.config == b.config
        && a.epoch == b.epoch
        && a.rng == b.rng
        && params_bitwise_eq(&a.policy, &b.policy)
        && params_bitwise_eq(&a.critics.q1, &b.critics.q1)
        && params_bitwise_eq(&a.critics.q2, &b.critics.q2)
        && params_bitwise_eq(&a.critics.q1_target, &b.critics.q1_target)
        && params_bitwise_eq(&a.critics.q2_target, &b.critics.q2_target)
        && params_bitwise_eq(&a.text_head, &b.text_head)
        && params_bitwise_eq(&a.traj_encoder, &b.traj_encoder)
        && opts_equal(&a.opt_policy, &b.opt_policy)
        && opts_equal(&a.opt_q1, &b.opt_q1)
        && opts_equal(&a.opt_q2, &b.opt_q2)
        && opts_equal(&a.opt_text, &b.opt_text)
        && opts_equal(&a.opt_traj, &b.opt_traj)
}
