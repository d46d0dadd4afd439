//! Group-relative policy optimization.
//!
//! One training step: roll out a group of responses per prompt, score each
//! with the fused reward, standardize rewards within the group into
//! advantages, and take one clipped-surrogate gradient step per rollout
//! wave. The surrogate keeps the full ratio machinery even though training
//! is on-policy, so off-policy reuse (and clipping) stays testable.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::curation::AugmentedSample;
use crate::error::{Error, Result};
use crate::judge::{pairwise_score, JudgeDiagnostics, PairwiseJudge};
use crate::metrics::MetricRecord;
use crate::policy::{
    context_of, greedy_decode, logprob, sample_trajectory, PolicyParams, SamplingConfig,
};
use crate::reward::{breakdown, FusionConfig, RewardBreakdown};
use crate::rng::{derive_seed, stream};
use crate::scene::{enumerate_facts, Sample};
use crate::trajectory::{answer_score, format_score, parse, Trajectory, Vocab};

/// G sampled trajectories for one prompt with their scores and rewards.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub sample_id: String,
    pub trajectories: Vec<Trajectory>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub rewards: Vec<f64>,
    /// Whether each trajectory carried at least one contradicted claim.
    pub hallucinated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
}

/// How Eq-style averaging over group and response length is performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenAveraging {
    /// Mean over tokens within each trajectory, then mean over the group.
    PerTrajectory,
    /// Flat mean over all tokens of the group.
    Flat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub group_size: usize,
    /// Optimizer batch size. Accepted for config compatibility; the update
    /// rule is one gradient step per rollout wave.
    pub batch_size: usize,
    /// Prompts rolled out per wave.
    pub rollout_batch_size: usize,
    pub epochs: usize,
    /// When set, overrides epochs: run exactly this many waves, cycling the
    /// dataset.
    pub total_steps: Option<usize>,
    pub clip_epsilon: f64,
    pub temperature: f64,
    /// Accepted for config compatibility; the objective never includes a KL
    /// term.
    pub kl_enabled: bool,
    pub max_len: usize,
    pub token_averaging: TokenAveraging,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            group_size: 8,
            batch_size: 16,
            rollout_batch_size: 64,
            epochs: 1,
            total_steps: Some(200),
            clip_epsilon: 0.2,
            temperature: 1.0,
            kl_enabled: false,
            max_len: 16,
            token_averaging: TokenAveraging::PerTrajectory,
            checkpoint_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config("clip_epsilon must be in (0,1)".into()));
        }
        // Zero is allowed so a null update is expressible; negative is not.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.max_len == 0 || self.rollout_batch_size == 0 || self.batch_size == 0 {
            return Err(Error::Config("sizes must be >= 1".into()));
        }
        if self.total_steps == Some(0) || (self.total_steps.is_none() && self.epochs == 0) {
            return Err(Error::Config("training needs at least one step".into()));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig { temperature: self.temperature, max_len: self.max_len }
    }
}

/// Standardize rewards within one group: (r - mean) / population std, all
/// zeros for degenerate (zero-variance) groups.
pub fn compute_advantages(rewards: &[f64]) -> Result<AdvantageSet> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::Config(format!("group size must be >= 2, got {g}")));
    }
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return Ok(AdvantageSet { advantages: vec![0.0; g] });
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    if var == 0.0 {
        return Ok(AdvantageSet { advantages: vec![0.0; g] });
    }
    let std = var.sqrt();
    Ok(AdvantageSet { advantages: rewards.iter().map(|r| (r - mean) / std).collect() })
}

/// Clipped-surrogate loss and its exact gradient for one group.
///
/// Per token: psi = exp(new_lp - old_lp), term = min(psi*A, clip(psi, 1-eps,
/// 1+eps)*A). Loss is the negative average of terms under the configured
/// averaging convention. The gradient treats the clip as piecewise constant
/// outside the band: tokens clipped out contribute nothing.
#[allow(clippy::too_many_arguments)]
pub fn surrogate_loss_and_grad(
    sample: &Sample,
    group: &RolloutGroup,
    advantages: &AdvantageSet,
    params_new: &PolicyParams,
    vocab: &Vocab,
    temperature: f64,
    clip_epsilon: f64,
    averaging: TokenAveraging,
) -> Result<(f64, Vec<f64>)> {
    let g = group.trajectories.len();
    if g != advantages.advantages.len() {
        return Err(Error::Dataset("advantage count does not match group size".into()));
    }
    let total_tokens: usize = group.trajectories.iter().map(|t| t.tokens.len()).sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params_new.logits.len()];
    let v = params_new.vocab_size;

    for (i, traj) in group.trajectories.iter().enumerate() {
        if traj.tokens.len() != traj.old_logprobs.len() {
            return Err(Error::LogprobMismatch {
                tokens: traj.tokens.len(),
                logprobs: traj.old_logprobs.len(),
            });
        }
        let a = advantages.advantages[i];
        let new_lps = logprob(params_new, vocab, sample, &traj.tokens, temperature)?;
        let w = match averaging {
            TokenAveraging::PerTrajectory => 1.0 / (g as f64 * traj.tokens.len() as f64),
            TokenAveraging::Flat => 1.0 / total_tokens as f64,
        };
        let mut prev = None;
        for (pos, &tok) in traj.tokens.iter().enumerate() {
            let psi = (new_lps[pos] - traj.old_logprobs[pos]).exp();
            let unclipped = psi * a;
            let clipped = psi.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * a;
            loss -= w * unclipped.min(clipped);

            let clipped_out = (a > 0.0 && psi > 1.0 + clip_epsilon)
                || (a < 0.0 && psi < 1.0 - clip_epsilon);
            if a != 0.0 && !clipped_out {
                let coeff = -w * psi * a;
                let ctx = context_of(sample, pos, prev);
                let log_probs = params_new.log_softmax_row(ctx, temperature);
                let row = &mut grad[ctx * v..(ctx + 1) * v];
                for (id, lp) in log_probs.iter().enumerate() {
                    row[id] -= coeff * lp.exp() / temperature;
                }
                row[tok] += coeff / temperature;
            }
            prev = vocab.token(tok);
        }
    }
    Ok((loss, grad))
}

/// Roll out and score one group for one augmented sample.
#[allow(clippy::too_many_arguments)]
pub fn rollout_group(
    params: &PolicyParams,
    aug: &AugmentedSample,
    group_size: usize,
    sampling: &SamplingConfig,
    vocab: &Vocab,
    fusion: &FusionConfig,
    judge: &dyn PairwiseJudge,
    diagnostics: &JudgeDiagnostics,
    wave_seed: u64,
    slot: u64,
) -> Result<RolloutGroup> {
    let reference_parsed = parse(&aug.reference, vocab);
    let facts = enumerate_facts(&aug.sample.scene);
    let mut trajectories = Vec::with_capacity(group_size);
    let mut breakdowns = Vec::with_capacity(group_size);
    let mut rewards = Vec::with_capacity(group_size);
    let mut hallucinated = Vec::with_capacity(group_size);
    for k in 0..group_size {
        let mut rng = stream(wave_seed, "rollout", slot, k as u64);
        let traj = sample_trajectory(params, vocab, &aug.sample, sampling, &mut rng);
        let parsed = parse(&traj, vocab);
        let s_fmt = format_score(&parsed);
        let s_ans = answer_score(&parsed, &aug.sample.question.gold_answer);
        let mut judge_rng = stream(wave_seed, "judge", slot, k as u64);
        let s_vis = pairwise_score(
            judge,
            &aug.sample.question,
            &aug.pseudo_gt,
            &parsed,
            &reference_parsed,
            &mut judge_rng,
            diagnostics,
        )?;
        let b = breakdown(s_vis, s_ans, s_fmt, fusion);
        let profile = crate::judge::fidelity_profile(&parsed.claims, &facts);
        hallucinated.push(profile.contradicted > 0);
        rewards.push(b.fused);
        breakdowns.push(b);
        trajectories.push(traj);
    }
    Ok(RolloutGroup {
        sample_id: aug.sample.sample_id.clone(),
        trajectories,
        breakdowns,
        rewards,
        hallucinated,
    })
}

/// Roll out and score a whole wave of samples.
#[allow(clippy::too_many_arguments)]
pub fn rollout_wave(
    params: &PolicyParams,
    wave: &[&AugmentedSample],
    cfg: &TrainConfig,
    vocab: &Vocab,
    fusion: &FusionConfig,
    judge: &dyn PairwiseJudge,
    diagnostics: &JudgeDiagnostics,
    wave_seed: u64,
) -> Result<Vec<RolloutGroup>> {
    let sampling = cfg.sampling();
    wave.iter()
        .enumerate()
        .map(|(slot, aug)| {
            rollout_group(
                params,
                aug,
                cfg.group_size,
                &sampling,
                vocab,
                fusion,
                judge,
                diagnostics,
                wave_seed,
                slot as u64,
            )
        })
        .collect()
}

/// Greedy-decoding answer accuracy over a holdout set. Ties in the argmax
/// are broken from a seeded stream, so the uniform cold-start policy decodes
/// like a sampler.
pub fn holdout_accuracy(
    params: &PolicyParams,
    holdout: &[Sample],
    vocab: &Vocab,
    sampling: &SamplingConfig,
    seed: u64,
    step: usize,
) -> f64 {
    if holdout.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for (i, sample) in holdout.iter().enumerate() {
        let mut rng = stream(seed, "holdout", step as u64, i as u64);
        let traj = greedy_decode(params, vocab, sample, sampling, &mut rng);
        let parsed = parse(&traj, vocab);
        correct += answer_score(&parsed, &sample.question.gold_answer) as usize;
    }
    correct as f64 / holdout.len() as f64
}

#[derive(Debug)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub metrics: Vec<MetricRecord>,
    pub judge_extraction_failures: u64,
    pub judge_endpoint_failures: u64,
}

fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, "shuffle", epoch, 0);
    indices.shuffle(&mut rng);
    indices
}

/// The training loop: per step, one rollout wave, per-group advantages, and
/// a single gradient step. Fully deterministic under the oracle judge and a
/// fixed seed; resumable at any step boundary because every random stream is
/// derived from (seed, step).
pub fn train(
    dataset: &[AugmentedSample],
    holdout: &[Sample],
    cfg: &TrainConfig,
    fusion: &FusionConfig,
    judge: &dyn PairwiseJudge,
    vocab: &Vocab,
    resume: Option<(PolicyParams, usize)>,
    mut on_step: impl FnMut(usize, &PolicyParams, &MetricRecord) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    fusion.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    if cfg.kl_enabled {
        log::warn!("kl_enabled is accepted but the objective has no KL term");
    }

    let n = dataset.len();
    let waves_per_epoch = n.div_ceil(cfg.rollout_batch_size.min(n));
    let total_steps = cfg.total_steps.unwrap_or(cfg.epochs * waves_per_epoch);
    let (mut params, start_step) = match resume {
        Some((p, step)) => (p, step),
        None => (PolicyParams::new_uniform(vocab), 0),
    };
    let diagnostics = JudgeDiagnostics::default();
    let sampling = cfg.sampling();
    let mut metrics = Vec::with_capacity(total_steps.saturating_sub(start_step));

    for step in start_step..total_steps {
        let t0 = Instant::now();
        let epoch = (step / waves_per_epoch) as u64;
        let wave_idx = step % waves_per_epoch;
        let perm = epoch_permutation(n, cfg.seed, epoch);
        let per_wave = cfg.rollout_batch_size.min(n);
        let lo = wave_idx * per_wave;
        let hi = (lo + per_wave).min(n);
        let wave: Vec<&AugmentedSample> = perm[lo..hi].iter().map(|&i| &dataset[i]).collect();

        let wave_seed = derive_seed(cfg.seed, "wave", step as u64, 0);
        let groups =
            rollout_wave(&params, &wave, cfg, vocab, fusion, judge, &diagnostics, wave_seed)?;

        let mut wave_grad = vec![0.0; params.logits.len()];
        for (group, aug) in groups.iter().zip(&wave) {
            let advantages = compute_advantages(&group.rewards)?;
            let (_loss, grad) = surrogate_loss_and_grad(
                &aug.sample,
                group,
                &advantages,
                &params,
                vocab,
                cfg.temperature,
                cfg.clip_epsilon,
                cfg.token_averaging,
            )?;
            for (acc, g) in wave_grad.iter_mut().zip(&grad) {
                *acc += g;
            }
        }
        let scale = cfg.learning_rate / groups.len() as f64;
        for (p, g) in params.logits.iter_mut().zip(&wave_grad) {
            *p -= scale * g;
        }
        params.assert_finite()?;

        let n_traj: usize = groups.iter().map(|g| g.trajectories.len()).sum();
        let mean = |f: &dyn Fn(&RewardBreakdown) -> f64| -> f64 {
            groups
                .iter()
                .flat_map(|g| g.breakdowns.iter())
                .map(f)
                .sum::<f64>()
                / n_traj as f64
        };
        let record = MetricRecord {
            step,
            mean_fused_reward: mean(&|b| b.fused),
            mean_s_vis: mean(&|b| b.s_vis as f64),
            mean_s_ans: mean(&|b| b.s_ans as f64),
            mean_s_fmt: mean(&|b| b.s_fmt as f64),
            holdout_accuracy: holdout_accuracy(&params, holdout, vocab, &sampling, cfg.seed, step),
            hallucination_rate: groups
                .iter()
                .flat_map(|g| g.hallucinated.iter())
                .filter(|&&h| h)
                .count() as f64
                / n_traj as f64,
            mean_response_len: groups
                .iter()
                .flat_map(|g| g.trajectories.iter())
                .map(|t| t.tokens.len() as f64)
                .sum::<f64>()
                / n_traj as f64,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        record.validate()?;
        on_step(step, &params, &record)?;
        metrics.push(record);
    }

    let (extraction, endpoint) = diagnostics.snapshot();
    Ok(TrainOutput {
        params,
        metrics,
        judge_extraction_failures: extraction,
        judge_endpoint_failures: endpoint,
    })
}
