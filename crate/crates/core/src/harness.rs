//! Command implementations behind the CLI: dataset generation, training,
//! evaluation, the reward-strategy ablation, and report rendering.
//!
//! Every command is deterministic under the oracle judge and a fixed seed;
//! outputs are written atomically (temp file in the target directory, then
//! rename). Wall-clock telemetry goes to its own sidecar so the primary
//! outputs hash identically across reruns.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::curation::{
    build_dataset, generate_domain_pools, read_dataset, read_samples, write_dataset,
    write_samples, AugmentedSample, Captioner, OracleCaptioner, PolicySampler, RemoteCaptioner,
};
use crate::error::{Error, Result};
use crate::grpo::{holdout_accuracy, train};
use crate::judge::fidelity_profile;
use crate::metrics::{
    metrics_header, metrics_row, read_metrics, write_metrics, write_telemetry, MetricRecord,
};
use crate::policy::{greedy_decode, Checkpoint, PolicyParams};
use crate::reward::{FusionConfig, STRATEGIES};
use crate::rng::{derive_seed, stream};
use crate::scene::{enumerate_facts, Sample};
use crate::trajectory::{answer_score, parse};

/// File layout under the configured output directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub out_dir: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> RunPaths {
        RunPaths { out_dir: out_dir.to_path_buf() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.out_dir.join("dataset.jsonl")
    }
    pub fn holdout(&self) -> PathBuf {
        self.out_dir.join("holdout.jsonl")
    }
    pub fn manifest(&self) -> PathBuf {
        self.out_dir.join("manifest.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.out_dir.join("metrics.csv")
    }
    pub fn telemetry(&self) -> PathBuf {
        self.out_dir.join("telemetry.csv")
    }
    pub fn checkpoint_final(&self) -> PathBuf {
        self.out_dir.join("checkpoint_final.json")
    }
    pub fn checkpoint_step(&self, step: usize) -> PathBuf {
        self.out_dir.join(format!("checkpoint_step{step:06}.json"))
    }
    pub fn eval_report(&self) -> PathBuf {
        self.out_dir.join("eval_report.json")
    }
    pub fn ablation_dir(&self) -> PathBuf {
        self.out_dir.join("ablation")
    }
    pub fn ablation_metrics(&self, slug: &str) -> PathBuf {
        self.ablation_dir().join(format!("metrics_{slug}.csv"))
    }
    pub fn ablation_summary(&self) -> PathBuf {
        self.ablation_dir().join("summary.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.out_dir.join("report.md")
    }
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| Error::Config("output path has no parent".into()))?;
    std::fs::create_dir_all(dir)?;
    let mut tmp = path.to_path_buf();
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config("output path has no file name".into()))?;
    tmp.set_file_name(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn build_captioner(cfg: &RunConfig) -> Result<Box<dyn Captioner>> {
    match cfg.scene.captioner.as_str() {
        "oracle" => Ok(Box::new(OracleCaptioner {
            noise: cfg.scene.caption_noise,
            seed: derive_seed(cfg.seed, "caption", 0, 0),
        })),
        "remote" => {
            let template = match &cfg.judge.caption_template_path {
                Some(p) => std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read caption template {}: {e}", p.display()))
                })?,
                None => crate::judge::remote::DEFAULT_CAPTION_TEMPLATE.to_string(),
            };
            Ok(Box::new(RemoteCaptioner::with_template(cfg.judge.endpoint.clone(), template)?))
        }
        other => Err(Error::Config(format!("unknown captioner {other:?}"))),
    }
}

#[derive(Debug)]
pub struct GenDataOutput {
    pub dataset_path: PathBuf,
    pub holdout_path: PathBuf,
    pub manifest_path: PathBuf,
    pub kept: usize,
    pub rejected: usize,
}

/// Build and write the augmented dataset, the holdout set, and the manifest.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<GenDataOutput> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.paths.out_dir);
    let vocab = cfg.vocab();
    let scene_cfg = cfg.scene_config();
    let specs = cfg.domain_specs()?;

    let pools = generate_domain_pools(
        &scene_cfg,
        &specs,
        cfg.scene.pool_size,
        derive_seed(cfg.seed, "pools", 0, 0),
    )?;

    // Rollouts for filtering and references come from the cold-start policy:
    // the same policy training will start from.
    let params = PolicyParams::new_uniform(&vocab);
    let sampler = PolicySampler { params: &params, vocab: &vocab, cfg: cfg.train.sampling() };
    let judge = cfg.build_judge()?;
    let captioner = build_captioner(cfg)?;

    let (dataset, manifest) = build_dataset(
        &pools,
        cfg.scene.per_domain_n,
        &cfg.filter,
        cfg.reference.best_of_n,
        captioner.as_ref(),
        judge.as_ref(),
        &sampler,
        &vocab,
        derive_seed(cfg.seed, "dataset", 0, 0),
    )?;
    if dataset.is_empty() {
        return Err(Error::Dataset(
            "learnability filter rejected every sample; relax the bounds or enlarge the pools"
                .into(),
        ));
    }

    // Holdout: disjoint seed stream, same domains, ids prefixed.
    let per_domain = cfg.scene.holdout_size.div_ceil(specs.len());
    let holdout_pools = generate_domain_pools(
        &scene_cfg,
        &specs,
        per_domain,
        derive_seed(cfg.seed, "holdout-pools", 0, 0),
    )?;
    let mut holdout: Vec<Sample> = Vec::new();
    'outer: for i in 0..per_domain {
        for pool in &holdout_pools {
            if holdout.len() >= cfg.scene.holdout_size {
                break 'outer;
            }
            let mut s = pool.samples[i].clone();
            s.sample_id = format!("holdout-{}", s.sample_id);
            holdout.push(s);
        }
    }

    let mut dataset_bytes = Vec::new();
    write_dataset(&mut dataset_bytes, &dataset, &vocab)?;
    let mut holdout_bytes = Vec::new();
    write_samples(&mut holdout_bytes, &holdout)?;
    let manifest_bytes = serde_json::to_vec_pretty(&manifest)?;

    atomic_write(&paths.dataset(), &dataset_bytes)?;
    atomic_write(&paths.holdout(), &holdout_bytes)?;
    atomic_write(&paths.manifest(), &manifest_bytes)?;

    log::info!(
        "dataset: kept {} of {} sampled ({} rejected)",
        manifest.total_kept,
        manifest.total_sampled,
        manifest.total_rejected
    );
    Ok(GenDataOutput {
        dataset_path: paths.dataset(),
        holdout_path: paths.holdout(),
        manifest_path: paths.manifest(),
        kept: manifest.total_kept,
        rejected: manifest.total_rejected,
    })
}

fn load_training_inputs(paths: &RunPaths) -> Result<(Vec<AugmentedSample>, Vec<Sample>)> {
    let dataset_file = std::fs::File::open(paths.dataset()).map_err(|e| {
        Error::Dataset(format!("missing dataset {} ({e}); run gen-data first", paths.dataset().display()))
    })?;
    let dataset = read_dataset(BufReader::new(dataset_file))?;
    let holdout_file = std::fs::File::open(paths.holdout()).map_err(|e| {
        Error::Dataset(format!("missing holdout {} ({e}); run gen-data first", paths.holdout().display()))
    })?;
    let holdout = read_samples(BufReader::new(holdout_file))?;
    Ok((dataset, holdout))
}

#[derive(Debug)]
pub struct TrainRunOutput {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub steps_run: usize,
    pub final_record: Option<MetricRecord>,
}

/// Train per config; writes metrics.csv, telemetry.csv, periodic checkpoints
/// and checkpoint_final.json.
pub fn cmd_train(cfg: &RunConfig, resume_from: Option<&Path>) -> Result<TrainRunOutput> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.paths.out_dir);
    let vocab = cfg.vocab();
    let (dataset, holdout) = load_training_inputs(&paths)?;
    let judge = cfg.build_judge()?;

    let resume = match resume_from {
        Some(p) => {
            let bytes = std::fs::read(p)
                .map_err(|e| Error::Dataset(format!("missing checkpoint {}: {e}", p.display())))?;
            let ckpt: Checkpoint = serde_json::from_str(&String::from_utf8_lossy(&bytes))?;
            Some(ckpt.into_params(&vocab)?)
        }
        None => None,
    };

    let checkpoint_every = cfg.train.checkpoint_every;
    let out = train(
        &dataset,
        &holdout,
        &cfg.train,
        &cfg.fusion,
        judge.as_ref(),
        &vocab,
        resume,
        |step, params, record| {
            if checkpoint_every > 0 && (step + 1) % checkpoint_every == 0 {
                let ckpt = Checkpoint::of(params, step + 1);
                atomic_write(&paths.checkpoint_step(step + 1), &serde_json::to_vec(&ckpt)?)?;
            }
            log::debug!("{}", metrics_row(record));
            Ok(())
        },
    )?;

    let mut metrics_bytes = Vec::new();
    write_metrics(&mut metrics_bytes, &out.metrics)?;
    atomic_write(&paths.metrics(), &metrics_bytes)?;
    let mut telemetry_bytes = Vec::new();
    write_telemetry(&mut telemetry_bytes, &out.metrics)?;
    atomic_write(&paths.telemetry(), &telemetry_bytes)?;

    let final_step = out.metrics.last().map(|m| m.step + 1).unwrap_or(0);
    let ckpt = Checkpoint::of(&out.params, final_step);
    atomic_write(&paths.checkpoint_final(), &serde_json::to_vec(&ckpt)?)?;

    if out.judge_extraction_failures > 0 || out.judge_endpoint_failures > 0 {
        log::warn!(
            "judge diagnostics: {} extraction failures, {} endpoint failures scored 0",
            out.judge_extraction_failures,
            out.judge_endpoint_failures
        );
    }
    Ok(TrainRunOutput {
        metrics_path: paths.metrics(),
        checkpoint_path: paths.checkpoint_final(),
        steps_run: out.metrics.len(),
        final_record: out.metrics.last().cloned(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainEval {
    pub domain: String,
    pub n: usize,
    pub accuracy: f64,
    pub hallucination_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub accuracy: f64,
    pub hallucination_rate: f64,
    pub per_domain: Vec<DomainEval>,
}

/// Read an evaluation set from either file format: plain samples or the
/// augmented dataset.
pub fn read_eval_samples(path: &Path) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Dataset(format!("missing eval set {}: {e}", path.display())))?;
    let mut first_line = String::new();
    use std::io::BufRead;
    let mut reader = BufReader::new(file);
    reader.read_line(&mut first_line)?;
    let header: serde_json::Value = serde_json::from_str(&first_line)
        .map_err(|e| Error::Dataset(format!("bad eval set header: {e}")))?;
    let format = header.get("format").and_then(|v| v.as_str()).unwrap_or_default().to_string();
    drop(reader);
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    match format.as_str() {
        "samples" => read_samples(reader),
        "augmented-samples" => {
            Ok(read_dataset(reader)?.into_iter().map(|a| a.sample).collect())
        }
        other => Err(Error::Dataset(format!("unknown eval set format {other:?}"))),
    }
}

/// Greedy-decoding evaluation of a checkpoint on a sample set, with a
/// per-domain breakdown.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path, dataset_path: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.paths.out_dir);
    let vocab = cfg.vocab();
    let bytes = std::fs::read(checkpoint_path).map_err(|e| {
        Error::Dataset(format!("missing checkpoint {}: {e}", checkpoint_path.display()))
    })?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    let (params, _step) = ckpt.into_params(&vocab)?;
    let samples = read_eval_samples(dataset_path)?;
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }

    let sampling = cfg.train.sampling();
    let mut per_domain: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (i, sample) in samples.iter().enumerate() {
        let mut rng = stream(cfg.seed, "eval", i as u64, 0);
        let traj = greedy_decode(&params, &vocab, sample, &sampling, &mut rng);
        let parsed = parse(&traj, &vocab);
        let correct = answer_score(&parsed, &sample.question.gold_answer) as usize;
        let facts = enumerate_facts(&sample.scene);
        let hallucinated =
            (fidelity_profile(&parsed.claims, &facts).contradicted > 0) as usize;
        let entry = per_domain.entry(sample.domain_tag.clone()).or_insert((0, 0, 0));
        entry.0 += 1;
        entry.1 += correct;
        entry.2 += hallucinated;
    }

    let n_samples = samples.len();
    let total_correct: usize = per_domain.values().map(|v| v.1).sum();
    let total_hallucinated: usize = per_domain.values().map(|v| v.2).sum();
    let report = EvalReport {
        n_samples,
        accuracy: total_correct as f64 / n_samples as f64,
        hallucination_rate: total_hallucinated as f64 / n_samples as f64,
        per_domain: per_domain
            .into_iter()
            .map(|(domain, (n, correct, hallucinated))| DomainEval {
                domain,
                n,
                accuracy: correct as f64 / n as f64,
                hallucination_rate: hallucinated as f64 / n as f64,
            })
            .collect(),
    };
    atomic_write(&paths.eval_report(), &serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub final_accuracy: f64,
    pub final_hallucination_rate: f64,
    pub mean_len_final_quartile: f64,
}

#[derive(Debug)]
pub struct AblateOutput {
    pub rows: Vec<AblationRow>,
    pub summary_path: PathBuf,
    pub curve_paths: Vec<PathBuf>,
}

/// Mean response length over the final quartile of steps.
pub fn final_quartile_mean_len(metrics: &[MetricRecord]) -> f64 {
    if metrics.is_empty() {
        return 0.0;
    }
    let start = metrics.len() - metrics.len().div_ceil(4);
    let tail = &metrics[start..];
    tail.iter().map(|m| m.mean_response_len).sum::<f64>() / tail.len() as f64
}

/// Train every built-in reward strategy under a shared seed; emit one curve
/// file per strategy plus a summary table.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblateOutput> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.paths.out_dir);
    let vocab = cfg.vocab();
    let (dataset, holdout) = load_training_inputs(&paths)?;
    let judge = cfg.build_judge()?;

    let mut rows = Vec::new();
    let mut curve_paths = Vec::new();
    for strategy in STRATEGIES {
        let fusion = FusionConfig { strategy, ..cfg.fusion.clone() };
        let out = train(
            &dataset,
            &holdout,
            &cfg.train,
            &fusion,
            judge.as_ref(),
            &vocab,
            None,
            |_, _, _| Ok(()),
        )?;
        let mut curve_bytes = Vec::new();
        write_metrics(&mut curve_bytes, &out.metrics)?;
        let curve_path = paths.ablation_metrics(strategy.slug());
        atomic_write(&curve_path, &curve_bytes)?;
        curve_paths.push(curve_path);
        let last = out.metrics.last().expect("at least one step");
        rows.push(AblationRow {
            strategy: strategy.slug().to_string(),
            final_accuracy: last.holdout_accuracy,
            final_hallucination_rate: last.hallucination_rate,
            mean_len_final_quartile: final_quartile_mean_len(&out.metrics),
        });
        log::info!(
            "ablation {}: accuracy {:.3}, hallucination {:.3}",
            strategy.slug(),
            last.holdout_accuracy,
            last.hallucination_rate
        );
    }

    let mut summary = String::from(
        "strategy,final_accuracy,final_hallucination_rate,mean_len_final_quartile\n",
    );
    for row in &rows {
        summary.push_str(&format!(
            "{},{},{},{}\n",
            row.strategy, row.final_accuracy, row.final_hallucination_rate,
            row.mean_len_final_quartile
        ));
    }
    atomic_write(&paths.ablation_summary(), summary.as_bytes())?;
    Ok(AblateOutput { rows, summary_path: paths.ablation_summary(), curve_paths })
}

/// Render a Markdown report from the ablation outputs.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::new(&cfg.paths.out_dir);
    let summary = std::fs::read_to_string(paths.ablation_summary()).map_err(|e| {
        Error::Dataset(format!(
            "missing ablation summary {} ({e}); run ablate first",
            paths.ablation_summary().display()
        ))
    })?;

    let mut report = String::new();
    report.push_str("# Reward strategy comparison\n\n");
    report.push_str("| strategy | final accuracy | final hallucination rate | mean length (final quartile) |\n");
    report.push_str("|---|---|---|---|\n");
    for line in summary.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() == 4 {
            report.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                fields[0], fields[1], fields[2], fields[3]
            ));
        }
    }
    report.push_str("\n## Curves\n\n");
    for strategy in STRATEGIES {
        let path = paths.ablation_metrics(strategy.slug());
        if path.exists() {
            let metrics = read_metrics(BufReader::new(std::fs::File::open(&path)?))?;
            if let (Some(first), Some(last)) = (metrics.first(), metrics.last()) {
                report.push_str(&format!(
                    "- `{}`: hallucination {:.3} -> {:.3}, accuracy {:.3} -> {:.3}, length {:.1} -> {:.1} over {} steps\n",
                    strategy.slug(),
                    first.hallucination_rate,
                    last.hallucination_rate,
                    first.holdout_accuracy,
                    last.holdout_accuracy,
                    first.mean_response_len,
                    last.mean_response_len,
                    metrics.len(),
                ));
            }
        }
    }
    report.push_str(&format!("\nColumns: `{}`\n", metrics_header().replace('\n', " / ")));
    atomic_write(&paths.report(), report.as_bytes())?;
    Ok(report)
}

/// Untrained-baseline helper used by tests: holdout accuracy of the uniform
/// cold-start policy.
pub fn uniform_holdout_accuracy(cfg: &RunConfig, holdout: &[Sample]) -> f64 {
    let vocab = cfg.vocab();
    let params = PolicyParams::new_uniform(&vocab);
    holdout_accuracy(&params, holdout, &vocab, &cfg.train.sampling(), cfg.seed, 0)
}
