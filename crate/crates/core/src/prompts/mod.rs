//! Task prompts and their embedding pipeline.
//!
//! A task is described to the policy through two prompts: a structured text
//! description and a short demonstration trajectory. Both are mapped into a
//! shared `d_embed`-dimensional space:
//!
//! * text: a frozen encoder (feature hashing, or an external embedding
//!   service) produces a raw vector, then a trainable projection head maps
//!   it down;
//! * trajectory: interleaved state/action tokens run through small
//!   self-attention blocks, are mean-pooled, and projected.

mod external;
mod text;
mod trajectory;

pub use external::{EncoderClientConfig, ExternalEncoder};
pub use text::{parse_text_prompt, serialize_text_prompt, HashTextEncoder};
pub use trajectory::{truncate_prompt, TrajectoryEncoder, TrajectoryEncoderCache, TrajectoryPrompt};

use crate::error::{Error, Result};
use crate::neural::{Activation, Mlp, MlpCache};
use crate::tensor::Tensor2;
use rand::Rng;

/// Instruction line prepended to every serialized text prompt before it is
/// handed to an encoder.
pub const DEFAULT_INSTRUCTION: &str =
    "convert the following task description into a structured policy representation";

/// Structured task description. Serialized canonically (see
/// [`serialize_text_prompt`]) before encoding, so the same prompt always
/// yields the same encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPrompt {
    pub task_name: String,
    pub objective: String,
    pub constraints: Vec<String>,
    /// Ordered key/value pairs rendered as `key = value`.
    pub attributes: Vec<(String, String)>,
}

impl TextPrompt {
    pub fn validate(&self) -> Result<()> {
        if self.task_name.trim().is_empty() {
            return Err(Error::argument("text prompt: task name is empty"));
        }
        let no_newlines = |s: &str| !s.contains('\n') && !s.contains('\r');
        if !no_newlines(&self.task_name) || !no_newlines(&self.objective) {
            return Err(Error::argument("text prompt: fields must be single-line"));
        }
        for c in &self.constraints {
            if !no_newlines(c) {
                return Err(Error::argument("text prompt: constraints must be single-line"));
            }
        }
        for (k, v) in &self.attributes {
            if k.trim().is_empty() {
                return Err(Error::argument("text prompt: attribute key is empty"));
            }
            if k.contains('=') || !no_newlines(k) || !no_newlines(v) {
                return Err(Error::argument(format!(
                    "text prompt: attribute {k:?} has a reserved character"
                )));
            }
        }
        Ok(())
    }
}

/// Frozen text-to-vector encoders. Implementations must be deterministic
/// for a fixed input string within a process run.
pub trait TextEncoder {
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
    /// Width of the produced vectors.
    fn dim(&self) -> usize;
}

/// Three-layer projection head (relu, relu, identity) used to map raw
/// encoder outputs and pooled trajectory features into the shared embedding
/// space.
///
/// `input_gain` rescales the first layer's weights after initialization.
/// The default init assumes inputs with per-component variance near 1;
/// L2-normalized encoder vectors spread one unit of norm over d_in
/// components, which would leave the head's output (and therefore the whole
/// text pathway) a factor of ~sqrt(d_in) quieter than every other network
/// input. Pass sqrt(d_in) for unit-norm inputs, 1.0 for inputs that are
/// already component-scaled.
pub fn projection_head(
    d_in: usize,
    hidden: usize,
    d_out: usize,
    input_gain: f64,
    rng: &mut impl Rng,
) -> Result<Mlp> {
    if !input_gain.is_finite() || input_gain <= 0.0 {
        return Err(Error::config(format!(
            "projection head input gain must be finite and positive, got {input_gain}"
        )));
    }
    let mut head = Mlp::with_dims(
        &[d_in, hidden, hidden, d_out],
        Activation::Relu,
        Activation::Identity,
        rng,
    )?;
    if input_gain != 1.0 {
        head.layer_mut(0).w.value.scale(input_gain);
    }
    Ok(head)
}

/// Embed a text prompt: serialize canonically, run the frozen encoder, and
/// project with the trainable head. Returns a (1, d_embed) tensor; the
/// cache enables a later backward pass through the head.
pub fn embed_text(
    encoder: &dyn TextEncoder,
    head: &Mlp,
    prompt: &TextPrompt,
    cache: &mut MlpCache,
) -> Result<Tensor2> {
    let raw = encode_prompt_raw(encoder, prompt)?;
    head.forward(&Tensor2::row_vector(&raw), cache)
}

/// The frozen half of [`embed_text`]: canonical serialization plus encoder.
pub fn encode_prompt_raw(encoder: &dyn TextEncoder, prompt: &TextPrompt) -> Result<Vec<f64>> {
    let text = serialize_text_prompt(prompt)?;
    let raw = encoder.encode(&text)?;
    if raw.len() != encoder.dim() {
        return Err(Error::Protocol(format!(
            "encoder produced {} values, declared width {}",
            raw.len(),
            encoder.dim()
        )));
    }
    Ok(raw)
}
