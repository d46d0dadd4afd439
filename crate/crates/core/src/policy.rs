//! Tabular autoregressive categorical policy.
//!
//! The policy is a dense logit table indexed by a small context feature:
//! (question template, step-position bucket, class of the last emitted
//! token). Softmax over the token vocabulary at each context gives exact
//! log-probabilities and closed-form gradients, so every optimization step
//! downstream can be checked against finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::Sample;
use crate::trajectory::{Token, TokenId, Trajectory, Vocab};

pub const N_TEMPLATES: usize = 4;
pub const N_POSITION_BUCKETS: usize = 8;
pub const N_PREV_CLASSES: usize = 6;

/// Class of the previously emitted token, part of the context feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrevClass {
    Start,
    ThinkOpen,
    ThinkClose,
    Claim,
    Boxed,
    End,
}

impl PrevClass {
    pub fn index(self) -> usize {
        match self {
            PrevClass::Start => 0,
            PrevClass::ThinkOpen => 1,
            PrevClass::ThinkClose => 2,
            PrevClass::Claim => 3,
            PrevClass::Boxed => 4,
            PrevClass::End => 5,
        }
    }

    pub fn of_token(token: Token) -> PrevClass {
        match token {
            Token::ThinkOpen => PrevClass::ThinkOpen,
            Token::ThinkClose => PrevClass::ThinkClose,
            Token::Claim(_) => PrevClass::Claim,
            Token::Boxed(_) => PrevClass::Boxed,
            Token::End => PrevClass::End,
        }
    }
}

pub fn position_bucket(position: usize) -> usize {
    position.min(N_POSITION_BUCKETS - 1)
}

/// Flat index for a (template, bucket, prev-class) triple.
pub fn context_index(template: usize, bucket: usize, prev: usize) -> usize {
    debug_assert!(template < N_TEMPLATES && bucket < N_POSITION_BUCKETS && prev < N_PREV_CLASSES);
    (template * N_POSITION_BUCKETS + bucket) * N_PREV_CLASSES + prev
}

pub fn n_contexts() -> usize {
    N_TEMPLATES * N_POSITION_BUCKETS * N_PREV_CLASSES
}

/// Context feature for the next token of `prompt` at `position`, given the
/// previously emitted token. Deterministic and total.
pub fn context_of(prompt: &Sample, position: usize, prev: Option<Token>) -> usize {
    let prev_class = match (position, prev) {
        (0, _) | (_, None) => PrevClass::Start,
        (_, Some(token)) => PrevClass::of_token(token),
    };
    context_index(prompt.question.template_id.index(), position_bucket(position), prev_class.index())
}

/// Sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub max_len: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { temperature: 1.0, max_len: 64 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// The learnable logit table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub vocab_size: usize,
    pub logits: Vec<f64>,
    schema_hash: String,
}

impl PolicyParams {
    /// All-zero logits: the uniform policy, the reproducible cold start.
    pub fn new_uniform(vocab: &Vocab) -> PolicyParams {
        PolicyParams {
            vocab_size: vocab.len(),
            logits: vec![0.0; n_contexts() * vocab.len()],
            schema_hash: schema_hash(vocab),
        }
    }

    pub fn schema_hash(&self) -> &str {
        &self.schema_hash
    }

    pub fn row(&self, ctx: usize) -> &[f64] {
        &self.logits[ctx * self.vocab_size..(ctx + 1) * self.vocab_size]
    }

    pub fn row_mut(&mut self, ctx: usize) -> &mut [f64] {
        &mut self.logits[ctx * self.vocab_size..(ctx + 1) * self.vocab_size]
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite policy parameter".into()));
        }
        Ok(())
    }

    /// Log-softmax of one context row at the given temperature.
    pub fn log_softmax_row(&self, ctx: usize, temperature: f64) -> Vec<f64> {
        let row = self.row(ctx);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
        let lse = m + row.iter().map(|&z| (z / temperature - m).exp()).sum::<f64>().ln();
        row.iter().map(|&z| z / temperature - lse).collect()
    }
}

/// Schema identity: context dimensions plus the vocabulary fingerprint.
pub fn schema_hash(vocab: &Vocab) -> String {
    let mut hasher = Sha256::new();
    hasher.update(
        format!("{N_TEMPLATES}:{N_POSITION_BUCKETS}:{N_PREV_CLASSES}:{}", vocab.fingerprint())
            .as_bytes(),
    );
    format!("{:x}", hasher.finalize())
}

/// Sample a trajectory autoregressively; stops at the end token or max_len.
/// The recorded log-probabilities are exactly those of the sampled tokens
/// under the sampling distribution.
pub fn sample_trajectory(
    params: &PolicyParams,
    vocab: &Vocab,
    prompt: &Sample,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut prev = None;
    for position in 0..cfg.max_len {
        let ctx = context_of(prompt, position, prev);
        let log_probs = params.log_softmax_row(ctx, cfg.temperature);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = vocab.len() - 1;
        for (id, lp) in log_probs.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                chosen = id;
                break;
            }
        }
        tokens.push(chosen);
        logprobs.push(log_probs[chosen]);
        let token = vocab.token(chosen).expect("sampled id is in vocab");
        if token == Token::End {
            break;
        }
        prev = Some(token);
    }
    Trajectory { tokens, old_logprobs: logprobs, prompt_ref: prompt.sample_id.clone() }
}

/// Greedy decoding with exact-tie randomization: at each step the argmax
/// token is taken, and exact logit ties are broken uniformly at random from
/// the provided stream. Under the uniform cold-start table this reduces to
/// plain sampling; under a trained table ties are essentially absent.
pub fn greedy_decode(
    params: &PolicyParams,
    vocab: &Vocab,
    prompt: &Sample,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut prev = None;
    for position in 0..cfg.max_len {
        let ctx = context_of(prompt, position, prev);
        let row = params.row(ctx);
        let best = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let ties: Vec<TokenId> =
            (0..row.len()).filter(|&i| row[i] == best).collect();
        let chosen = ties[rng.gen_range(0..ties.len())];
        let log_probs = params.log_softmax_row(ctx, cfg.temperature);
        tokens.push(chosen);
        logprobs.push(log_probs[chosen]);
        let token = vocab.token(chosen).expect("argmax id is in vocab");
        if token == Token::End {
            break;
        }
        prev = Some(token);
    }
    Trajectory { tokens, old_logprobs: logprobs, prompt_ref: prompt.sample_id.clone() }
}

/// Per-token log-probabilities of a given token sequence.
pub fn logprob(
    params: &PolicyParams,
    vocab: &Vocab,
    prompt: &Sample,
    tokens: &[TokenId],
    temperature: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut prev = None;
    for (position, &id) in tokens.iter().enumerate() {
        let token = vocab.token(id).ok_or(Error::UnknownToken(id, vocab.len()))?;
        let ctx = context_of(prompt, position, prev);
        out.push(params.log_softmax_row(ctx, temperature)[id]);
        prev = Some(token);
    }
    Ok(out)
}

/// Dense gradient of the summed log-probability with respect to the logit
/// table: at each visited context, +1/T on the taken token and -p/T on every
/// token. Unvisited contexts stay exactly zero.
pub fn grad_logprob(
    params: &PolicyParams,
    vocab: &Vocab,
    prompt: &Sample,
    tokens: &[TokenId],
    temperature: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.logits.len()];
    let mut prev = None;
    for (position, &id) in tokens.iter().enumerate() {
        let token = vocab.token(id).ok_or(Error::UnknownToken(id, vocab.len()))?;
        let ctx = context_of(prompt, position, prev);
        let log_probs = params.log_softmax_row(ctx, temperature);
        let row = &mut grad[ctx * params.vocab_size..(ctx + 1) * params.vocab_size];
        for (v, lp) in log_probs.iter().enumerate() {
            row[v] -= lp.exp() / temperature;
        }
        row[id] += 1.0 / temperature;
        prev = Some(token);
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON dump of the logit table. Round-trips bit-exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub schema_hash: String,
    pub n_contexts: usize,
    pub vocab_size: usize,
    /// Number of completed training steps when the checkpoint was written.
    pub step: usize,
    pub logits: Vec<f64>,
}

impl Checkpoint {
    pub fn of(params: &PolicyParams, step: usize) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            schema_hash: params.schema_hash.clone(),
            n_contexts: n_contexts(),
            vocab_size: params.vocab_size,
            step,
            logits: params.logits.clone(),
        }
    }

    /// Rebuild the params table, verifying the schema against `vocab`.
    pub fn into_params(self, vocab: &Vocab) -> Result<(PolicyParams, usize)> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let expected = schema_hash(vocab);
        if self.schema_hash != expected {
            return Err(Error::CheckpointMismatch(
                "schema hash does not match the configured vocabulary".into(),
            ));
        }
        if self.vocab_size != vocab.len()
            || self.n_contexts != n_contexts()
            || self.logits.len() != self.vocab_size * self.n_contexts
        {
            return Err(Error::CheckpointMismatch("table dimensions do not match".into()));
        }
        let step = self.step;
        let params = PolicyParams {
            vocab_size: self.vocab_size,
            logits: self.logits,
            schema_hash: self.schema_hash,
        };
        params.assert_finite()?;
        Ok((params, step))
    }
}
