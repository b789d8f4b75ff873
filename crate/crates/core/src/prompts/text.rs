use super::{TextEncoder, TextPrompt, DEFAULT_INSTRUCTION};
use crate::error::{Error, Result};

/// Canonical rendering of a [`TextPrompt`]: the instruction line, one blank
/// line, then fixed-order `Key: value` fields. Constraints and attributes
/// are one line each and keep their stored order.
pub fn serialize_text_prompt(prompt: &TextPrompt) -> Result<String> {
    prompt.validate()?;
    let mut s = String::new();
    s.push_str(DEFAULT_INSTRUCTION);
    s.push_str("\n\n");
    s.push_str("Task: ");
    s.push_str(&prompt.task_name);
    s.push('\n');
    s.push_str("Objective: ");
    s.push_str(&prompt.objective);
    s.push('\n');
    for c in &prompt.constraints {
        s.push_str("Constraint: ");
        s.push_str(c);
        s.push('\n');
    }
    for (k, v) in &prompt.attributes {
        s.push_str("Attribute: ");
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    Ok(s)
}

/// Inverse of [`serialize_text_prompt`]. Strict: section order is enforced
/// and unknown lines are rejected with their line number.
pub fn parse_text_prompt(text: &str) -> Result<TextPrompt> {
    let err = |line: usize, msg: String| Error::Load {
        path: "<text prompt>".into(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == DEFAULT_INSTRUCTION => {}
        Some((n, l)) => return Err(err(n + 1, format!("expected instruction line, found {l:?}"))),
        None => return Err(err(1, "empty prompt text".into())),
    }
    match lines.next() {
        Some((_, "")) => {}
        Some((n, l)) => return Err(err(n + 1, format!("expected blank separator, found {l:?}"))),
        None => return Err(err(2, "prompt truncated after instruction".into())),
    }

    let mut task_name = None;
    let mut objective = None;
    let mut constraints = Vec::new();
    let mut attributes = Vec::new();
    // Sections must appear in order: Task, Objective, Constraint*, Attribute*.
    let mut stage = 0;
    for (n, line) in lines {
        let lineno = n + 1;
        if line.is_empty() {
            // Tolerate trailing blank lines only.
            stage = 4;
            continue;
        }
        if stage == 4 {
            return Err(err(lineno, format!("content after blank line: {line:?}")));
        }
        if let Some(rest) = line.strip_prefix("Task: ") {
            if stage != 0 {
                return Err(err(lineno, "Task line out of order".into()));
            }
            task_name = Some(rest.to_string());
            stage = 1;
        } else if let Some(rest) = line.strip_prefix("Objective: ") {
            if stage != 1 {
                return Err(err(lineno, "Objective line out of order".into()));
            }
            objective = Some(rest.to_string());
            stage = 2;
        } else if let Some(rest) = line.strip_prefix("Constraint: ") {
            if stage != 2 {
                return Err(err(lineno, "Constraint line out of order".into()));
            }
            constraints.push(rest.to_string());
        } else if let Some(rest) = line.strip_prefix("Attribute: ") {
            if !(2..=3).contains(&stage) {
                return Err(err(lineno, "Attribute line out of order".into()));
            }
            stage = 3;
            let (k, v) = rest
                .split_once(" = ")
                .ok_or_else(|| err(lineno, format!("attribute without ' = ': {rest:?}")))?;
            attributes.push((k.to_string(), v.to_string()));
        } else {
            return Err(err(lineno, format!("unrecognized line: {line:?}")));
        }
    }
    let prompt = TextPrompt {
        task_name: task_name.ok_or_else(|| err(3, "missing Task line".into()))?,
        objective: objective.ok_or_else(|| err(4, "missing Objective line".into()))?,
        constraints,
        attributes,
    };
    prompt.validate()?;
    Ok(prompt)
}

/// Feature-hashing text encoder: signed bucket counts over character
/// 3-grams and whitespace-separated words, L2-normalized.
///
/// Hashing is FNV-1a (64-bit) implemented here rather than the stdlib
/// hasher, whose output is not guaranteed stable across Rust releases; the
/// encoder must give bitwise-identical vectors for the same string,
/// forever.
#[derive(Debug, Clone)]
pub struct HashTextEncoder {
    dim: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl HashTextEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config(format!(
                "hash encoder needs at least 2 buckets, got {dim}"
            )));
        }
        Ok(HashTextEncoder { dim })
    }

    fn bucket(&self, token: &[u8], out: &mut [f64]) {
        let h = fnv1a(token);
        // High bit picks the sign, the rest of the hash picks the bucket.
        let sign = if h >> 63 == 1 { 1.0 } else { -1.0 };
        out[(h % self.dim as u64) as usize] += sign;
    }
}

impl TextEncoder for HashTextEncoder {
    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            self.bucket(&buf[..len], &mut out);
        }
        for word in lower.split_whitespace() {
            self.bucket(word.as_bytes(), &mut out);
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut out {
                *v /= norm;
            }
        }
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
