//! Data curation pipeline.
//!
//! Builds the augmented training set in four stages: balanced sampling
//! across domain pools, learnability filtering by rollout accuracy under the
//! current policy, pseudo-ground-truth caption attachment (one caption per
//! scene, shared across its questions), and best-of-N reference selection by
//! sequential pairwise tournament. The output is a JSONL dataset plus a
//! manifest that conserves per-domain totals.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judge::{shuffle_and_map, PairwiseJudge};
use crate::policy::{sample_trajectory, PolicyParams, SamplingConfig};
use crate::rng::{derive_seed, hash_str, stream};
use crate::scene::{
    generate_question, generate_scene, render_pseudo_gt, QuestionTemplate, Sample, Scene,
    SceneConfig, StructuredCaption,
};
use crate::trajectory::{answer_score, canonicalize_answer, parse, Trajectory, TrajectoryRecord, Vocab};

// ---------------------------------------------------------------------------
// Domain pools
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DomainPool {
    pub domain_tag: String,
    pub samples: Vec<Sample>,
}

/// A named domain and the question templates it draws from.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub name: String,
    pub templates: Vec<QuestionTemplate>,
}

impl DomainSpec {
    pub fn from_name(name: &str) -> Result<DomainSpec> {
        let templates = match name {
            "counting" => vec![QuestionTemplate::Count],
            "attributes" => vec![QuestionTemplate::AttributeLookup],
            "comparison" => vec![QuestionTemplate::Comparison],
            "spatial" => vec![QuestionTemplate::Relation],
            "mixed" => vec![
                QuestionTemplate::Count,
                QuestionTemplate::AttributeLookup,
                QuestionTemplate::Comparison,
                QuestionTemplate::Relation,
            ],
            other => {
                return Err(Error::Config(format!(
                    "unknown domain {other:?} (known: counting, attributes, comparison, spatial, mixed)"
                )))
            }
        };
        Ok(DomainSpec { name: name.to_string(), templates })
    }
}

/// Generate candidate pools, one per domain, `pool_size` samples each.
/// Scenes that cannot host a domain's template are resampled.
pub fn generate_domain_pools(
    scene_cfg: &SceneConfig,
    domains: &[DomainSpec],
    pool_size: usize,
    seed: u64,
) -> Result<Vec<DomainPool>> {
    scene_cfg.validate()?;
    let mut pools = Vec::with_capacity(domains.len());
    for (pool_idx, spec) in domains.iter().enumerate() {
        let mut samples = Vec::with_capacity(pool_size);
        for i in 0..pool_size {
            let mut placed = false;
            for attempt in 0..64u64 {
                let nonce = i as u64 * 97 + attempt;
                let scene_seed = derive_seed(seed, "scene", pool_idx as u64, nonce);
                let scene = generate_scene(scene_seed, scene_cfg)?;
                let template =
                    spec.templates[((i as u64 + attempt) % spec.templates.len() as u64) as usize];
                let q_seed = derive_seed(seed, "question", pool_idx as u64, nonce);
                match generate_question(&scene, template, q_seed) {
                    Ok(question) => {
                        samples.push(Sample {
                            sample_id: format!("{}-{i:05}", spec.name),
                            scene,
                            question,
                            domain_tag: spec.name.clone(),
                        });
                        placed = true;
                        break;
                    }
                    Err(Error::TemplateSkip { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            if !placed {
                return Err(Error::Config(format!(
                    "domain {:?}: no instantiable scene after 64 attempts",
                    spec.name
                )));
            }
        }
        pools.push(DomainPool { domain_tag: spec.name.clone(), samples });
    }
    Ok(pools)
}

/// Draw `min(per_domain_n, |pool|)` samples uniformly without replacement
/// from each pool. Deterministic per seed.
pub fn balanced_sample(
    pools: &[DomainPool],
    per_domain_n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if pools.is_empty() {
        return Err(Error::Config("no domain pools to sample from".into()));
    }
    if per_domain_n == 0 {
        return Err(Error::Config("per_domain_n must be >= 1".into()));
    }
    let mut out = Vec::new();
    for (pool_idx, pool) in pools.iter().enumerate() {
        let mut indices: Vec<usize> = (0..pool.samples.len()).collect();
        let mut rng = stream(seed, "balanced", pool_idx as u64, 0);
        // Partial Fisher-Yates: the first k slots are a uniform draw.
        let k = per_domain_n.min(indices.len());
        for i in 0..k {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        let mut chosen: Vec<usize> = indices[..k].to_vec();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| pool.samples[i].clone()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Learnability filtering
// ---------------------------------------------------------------------------

/// Accuracy bounds for the rollout-based filter.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub rollouts_per_sample: usize,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { rollouts_per_sample: 8, min_accuracy: 0.1, max_accuracy: 0.9 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts_per_sample < 1 {
            return Err(Error::Config("rollouts_per_sample must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.min_accuracy) {
            return Err(Error::Config("min_accuracy must be in [0,1)".into()));
        }
        if !(self.max_accuracy > 0.0 && self.max_accuracy <= 1.0) {
            return Err(Error::Config("max_accuracy must be in (0,1]".into()));
        }
        if self.min_accuracy >= self.max_accuracy {
            return Err(Error::Config("min_accuracy must be < max_accuracy".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooHard,
    TooEasy,
    Unverifiable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rejection {
    pub sample_id: String,
    pub domain_tag: String,
    pub reason: RejectReason,
}

/// Anything that can roll out a response for a sample. The training policy
/// implements this; tests plant rigged samplers with known accuracy.
pub trait ResponseSampler: Sync {
    fn sample_response(
        &self,
        sample: &Sample,
        rollout_idx: usize,
        rng: &mut ChaCha8Rng,
    ) -> Trajectory;
}

/// The real sampler: the current policy at training temperature.
pub struct PolicySampler<'a> {
    pub params: &'a PolicyParams,
    pub vocab: &'a Vocab,
    pub cfg: SamplingConfig,
}

impl ResponseSampler for PolicySampler<'_> {
    fn sample_response(
        &self,
        sample: &Sample,
        _rollout_idx: usize,
        rng: &mut ChaCha8Rng,
    ) -> Trajectory {
        sample_trajectory(self.params, self.vocab, sample, &self.cfg, rng)
    }
}

/// Keep samples whose empirical rollout accuracy sits inside the bounds;
/// reject the rest with a reason. Questions whose gold answer cannot be
/// expressed in the closed answer set are unverifiable by construction.
pub fn learnability_filter(
    samples: &[Sample],
    sampler: &dyn ResponseSampler,
    cfg: &FilterConfig,
    vocab: &Vocab,
    seed: u64,
) -> Result<(Vec<(Sample, f64)>, Vec<Rejection>)> {
    cfg.validate()?;
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let gold = canonicalize_answer(&sample.question.gold_answer);
        if vocab.boxed_id(&gold).is_none() {
            rejected.push(Rejection {
                sample_id: sample.sample_id.clone(),
                domain_tag: sample.domain_tag.clone(),
                reason: RejectReason::Unverifiable,
            });
            continue;
        }
        let k = cfg.rollouts_per_sample;
        let mut correct = 0usize;
        for rollout_idx in 0..k {
            let mut rng = stream(seed, "filter", i as u64, rollout_idx as u64);
            let traj = sampler.sample_response(sample, rollout_idx, &mut rng);
            let parsed = parse(&traj, vocab);
            correct += answer_score(&parsed, &sample.question.gold_answer) as usize;
        }
        let accuracy = correct as f64 / k as f64;
        if accuracy < cfg.min_accuracy {
            rejected.push(Rejection {
                sample_id: sample.sample_id.clone(),
                domain_tag: sample.domain_tag.clone(),
                reason: RejectReason::TooHard,
            });
        } else if accuracy > cfg.max_accuracy {
            rejected.push(Rejection {
                sample_id: sample.sample_id.clone(),
                domain_tag: sample.domain_tag.clone(),
                reason: RejectReason::TooEasy,
            });
        } else {
            kept.push((sample.clone(), accuracy));
        }
    }
    Ok((kept, rejected))
}

// ---------------------------------------------------------------------------
// Pseudo-ground-truth captioning
// ---------------------------------------------------------------------------

pub trait Captioner {
    fn caption(&self, scene: &Scene) -> Result<StructuredCaption>;
}

/// Exact captioner with an optional, uncalibrated noise knob: with
/// probability `noise` per object line the color word is cycled, and with
/// the same probability per relation line the line is dropped.
pub struct OracleCaptioner {
    pub noise: f64,
    pub seed: u64,
}

impl OracleCaptioner {
    pub fn exact() -> OracleCaptioner {
        OracleCaptioner { noise: 0.0, seed: 0 }
    }
}

impl Captioner for OracleCaptioner {
    fn caption(&self, scene: &Scene) -> Result<StructuredCaption> {
        let caption = render_pseudo_gt(scene);
        if self.noise <= 0.0 {
            return Ok(caption);
        }
        let mut rng = stream(self.seed, "caption-noise", hash_str(&scene.scene_id), 0);
        let mut lines = Vec::new();
        for line in caption.text.lines() {
            if line.contains(':') {
                if rng.gen_bool(self.noise) {
                    let mut noisy = line.to_string();
                    for color in crate::scene::COLORS {
                        let word = color.word();
                        if noisy.contains(word) {
                            noisy = noisy.replacen(word, color.cycled().word(), 1);
                            break;
                        }
                    }
                    lines.push(noisy);
                } else {
                    lines.push(line.to_string());
                }
            } else if !rng.gen_bool(self.noise) {
                lines.push(line.to_string());
            }
        }
        Ok(StructuredCaption { text: lines.join("\n") })
    }
}

/// Captioner backed by a chat endpoint; the reply is stored verbatim.
/// Question-agnostic by construction: only the scene goes into the prompt.
pub struct RemoteCaptioner {
    cfg: crate::judge::EndpointConfig,
    template: String,
    client: reqwest::blocking::Client,
}

impl RemoteCaptioner {
    pub fn new(cfg: crate::judge::EndpointConfig) -> Result<RemoteCaptioner> {
        RemoteCaptioner::with_template(
            cfg,
            crate::judge::remote::DEFAULT_CAPTION_TEMPLATE.to_string(),
        )
    }

    pub fn with_template(
        cfg: crate::judge::EndpointConfig,
        template: String,
    ) -> Result<RemoteCaptioner> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Judge(format!("client build failed: {e}")))?;
        Ok(RemoteCaptioner { cfg, template, client })
    }
}

impl Captioner for RemoteCaptioner {
    fn caption(&self, scene: &Scene) -> Result<StructuredCaption> {
        let scene_json = serde_json::to_string(scene)?;
        let user = crate::judge::remote::fill_template(&self.template, &[("scene_json", &scene_json)]);
        let (content, _retries) = crate::judge::remote::chat_complete(
            &self.client,
            &self.cfg,
            "You produce structured scene descriptions.",
            &user,
        )?;
        Ok(StructuredCaption { text: content })
    }
}

// ---------------------------------------------------------------------------
// Best-of-N reference selection
// ---------------------------------------------------------------------------

/// Roll out N candidates and run a sequential single-elimination tournament:
/// the incoming candidate challenges the current champion via a pairwise
/// judgment with randomized presentation; the winner advances.
pub fn select_reference(
    sample: &Sample,
    sampler: &dyn ResponseSampler,
    n: usize,
    judge: &dyn PairwiseJudge,
    pseudo_gt: &StructuredCaption,
    vocab: &Vocab,
    seed: u64,
) -> Result<Trajectory> {
    if n < 1 {
        return Err(Error::Config("best-of-N needs N >= 1".into()));
    }
    let sample_key = hash_str(&sample.sample_id);
    let mut champion = {
        let mut rng = stream(seed, "reference", sample_key, 0);
        sampler.sample_response(sample, 0, &mut rng)
    };
    let mut champion_parsed = parse(&champion, vocab);
    for k in 1..n {
        let mut rng = stream(seed, "reference", sample_key, k as u64);
        let challenger = sampler.sample_response(sample, k, &mut rng);
        let challenger_parsed = parse(&challenger, vocab);
        let mut judge_rng = stream(seed, "reference-judge", sample_key, k as u64);
        let challenger_wins = shuffle_and_map(
            judge,
            &sample.question,
            pseudo_gt,
            &challenger_parsed,
            &champion_parsed,
            &mut judge_rng,
        )?;
        if challenger_wins {
            champion = challenger;
            champion_parsed = challenger_parsed;
        }
    }
    Ok(champion)
}

// ---------------------------------------------------------------------------
// Dataset assembly and serialization
// ---------------------------------------------------------------------------

/// A training sample with everything attached: pseudo ground truth, frozen
/// reference response, and the filter-time rollout accuracy.
#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub sample: Sample,
    pub pseudo_gt: StructuredCaption,
    pub reference: Trajectory,
    pub rollout_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DomainManifest {
    pub domain: String,
    pub sampled: usize,
    pub kept: usize,
    pub too_hard: usize,
    pub too_easy: usize,
    pub unverifiable: usize,
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub domains: Vec<DomainManifest>,
    pub total_sampled: usize,
    pub total_kept: usize,
    pub total_rejected: usize,
}

impl Manifest {
    pub fn conserves_totals(&self) -> bool {
        let sampled: usize = self.domains.iter().map(|d| d.sampled).sum();
        let kept: usize = self.domains.iter().map(|d| d.kept).sum();
        let rejected: usize =
            self.domains.iter().map(|d| d.too_hard + d.too_easy + d.unverifiable).sum();
        sampled == self.total_sampled
            && kept == self.total_kept
            && rejected == self.total_rejected
            && sampled == kept + rejected
    }
}

/// Compose the full pipeline: balanced sampling, filtering, captioning,
/// reference selection. Captions are generated once per scene and shared.
#[allow(clippy::too_many_arguments)]
pub fn build_dataset(
    pools: &[DomainPool],
    per_domain_n: usize,
    filter_cfg: &FilterConfig,
    best_of_n: usize,
    captioner: &dyn Captioner,
    judge: &dyn PairwiseJudge,
    sampler: &dyn ResponseSampler,
    vocab: &Vocab,
    seed: u64,
) -> Result<(Vec<AugmentedSample>, Manifest)> {
    let balanced = balanced_sample(pools, per_domain_n, seed)?;
    let (kept, rejected) =
        learnability_filter(&balanced, sampler, filter_cfg, vocab, derive_seed(seed, "lf", 0, 0))?;

    let mut caption_cache: BTreeMap<String, StructuredCaption> = BTreeMap::new();
    let mut dataset = Vec::with_capacity(kept.len());
    for (sample, rollout_accuracy) in kept {
        let pseudo_gt = match caption_cache.get(&sample.scene.scene_id) {
            Some(c) => c.clone(),
            None => {
                let c = captioner.caption(&sample.scene)?;
                caption_cache.insert(sample.scene.scene_id.clone(), c.clone());
                c
            }
        };
        let reference = select_reference(
            &sample,
            sampler,
            best_of_n,
            judge,
            &pseudo_gt,
            vocab,
            derive_seed(seed, "bofn", 0, 0),
        )?;
        dataset.push(AugmentedSample { sample, pseudo_gt, reference, rollout_accuracy });
    }

    let mut per_domain: BTreeMap<String, DomainManifest> = BTreeMap::new();
    for s in &balanced {
        per_domain.entry(s.domain_tag.clone()).or_insert_with(|| DomainManifest {
            domain: s.domain_tag.clone(),
            sampled: 0,
            kept: 0,
            too_hard: 0,
            too_easy: 0,
            unverifiable: 0,
        }).sampled += 1;
    }
    for a in &dataset {
        per_domain.get_mut(&a.sample.domain_tag).expect("kept sample came from a pool").kept += 1;
    }
    for r in &rejected {
        let entry = per_domain.get_mut(&r.domain_tag).expect("rejection came from a pool");
        match r.reason {
            RejectReason::TooHard => entry.too_hard += 1,
            RejectReason::TooEasy => entry.too_easy += 1,
            RejectReason::Unverifiable => entry.unverifiable += 1,
        }
    }
    let domains: Vec<DomainManifest> = per_domain.into_values().collect();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed,
        total_sampled: balanced.len(),
        total_kept: dataset.len(),
        total_rejected: rejected.len(),
        domains,
    };
    debug_assert!(manifest.conserves_totals());
    Ok((dataset, manifest))
}

// --- JSONL serialization ---

pub const DATASET_FORMAT: &str = "augmented-samples";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AugmentedSampleRecord {
    pub sample: Sample,
    pub pseudo_gt: String,
    pub reference: TrajectoryRecord,
    pub rollout_accuracy: f64,
}

/// Write the dataset as versioned JSONL: a header line, then one record per
/// sample.
pub fn write_dataset<W: Write>(
    mut w: W,
    dataset: &[AugmentedSample],
    vocab: &Vocab,
) -> Result<()> {
    let header =
        DatasetHeader { format: DATASET_FORMAT.to_string(), version: DATASET_VERSION };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for a in dataset {
        let record = AugmentedSampleRecord {
            sample: a.sample.clone(),
            pseudo_gt: a.pseudo_gt.text.clone(),
            reference: TrajectoryRecord::new(&a.reference, vocab),
            rollout_accuracy: a.rollout_accuracy,
        };
        writeln!(w, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<AugmentedSample>> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Dataset("empty dataset file".into()))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Dataset(format!("bad dataset header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported dataset format {}/{}",
            header.format, header.version
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AugmentedSampleRecord = serde_json::from_str(&line)?;
        out.push(AugmentedSample {
            sample: record.sample,
            pseudo_gt: StructuredCaption { text: record.pseudo_gt },
            reference: record.reference.into_trajectory(),
            rollout_accuracy: record.rollout_accuracy,
        });
    }
    Ok(out)
}

/// Plain samples (e.g. the holdout set) as versioned JSONL.
pub fn write_samples<W: Write>(mut w: W, samples: &[Sample]) -> Result<()> {
    let header = DatasetHeader { format: "samples".to_string(), version: 1 };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for s in samples {
        writeln!(w, "{}", serde_json::to_string(s)?)?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(r: R) -> Result<Vec<Sample>> {
    let mut lines = r.lines();
    let header_line =
        lines.next().ok_or_else(|| Error::Dataset("empty samples file".into()))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Dataset(format!("bad samples header: {e}")))?;
    if header.format != "samples" || header.version != 1 {
        return Err(Error::Dataset(format!(
            "unsupported samples format {}/{}",
            header.format, header.version
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
