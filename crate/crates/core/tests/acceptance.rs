//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.
//! Criterion 8 trains the gated and vanilla strategies end to end under a
//! shared seed; its endpoint goldens were recorded from the first verified
//! run and are exact under the deterministic seed derivation.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use factgate::config::RunConfig;
use factgate::curation::{
    learnability_filter, read_dataset, read_samples, select_reference, FilterConfig,
    PolicySampler, ResponseSampler,
};
use factgate::grpo::{
    compute_advantages, surrogate_loss_and_grad, train, RolloutGroup, TokenAveraging, TrainConfig,
};
use factgate::harness;
use factgate::judge::stub::{StubAction, StubServer};
use factgate::judge::{
    extract_verdict, fidelity_profile, EndpointConfig, FailurePolicy, OracleJudge, PairwiseJudge,
    PairwiseQuery, Presentation, RemoteJudge, Slot, Verdict, VerdictPatterns,
};
use factgate::metrics::MetricRecord;
use factgate::policy::{context_of, logprob, sample_trajectory, PolicyParams, SamplingConfig};
use factgate::reward::{fuse, FusionConfig, FusionStrategy};
use factgate::rng::stream;
use factgate::scene::{
    enumerate_facts, generate_question, generate_scene, render_pseudo_gt, Fact, QuestionTemplate,
    Sample, SceneConfig, StructuredCaption,
};
use factgate::trajectory::{canonicalize_answer, parse, ParsedTrajectory, Trajectory, Vocab};

fn report(criterion: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] {criterion}: {detail}");
    assert!(ok, "{criterion}: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: reward-fusion exactness over the full boolean cube
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_reward_fusion_exactness() {
    let t0 = Instant::now();
    let cfg = FusionConfig::default();
    assert_eq!(cfg.answer_weight, 0.9);
    assert_eq!(cfg.format_weight, 0.1);
    assert_eq!(cfg.bonus, 0.5);
    assert_eq!((cfg.mix_vis_weight, cfg.mix_ans_weight, cfg.mix_fmt_weight), (0.2, 0.7, 0.1));

    // Hand-computed tables, one entry per cube point (vis, ans, fmt),
    // written as explicit f64 arithmetic on the paper coefficients.
    let cube = [
        (0u8, 0u8, 0u8),
        (0, 0, 1),
        (0, 1, 0),
        (0, 1, 1),
        (1, 0, 0),
        (1, 0, 1),
        (1, 1, 0),
        (1, 1, 1),
    ];
    let vanilla = [0.0, 0.1, 0.9, 0.9 + 0.1, 0.0, 0.1, 0.9, 0.9 + 0.1];
    let gate = [0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.9, 0.9 + 0.1];
    let bonus = [0.0, 0.1, 0.9, 0.9 + 0.1, 0.0, 0.1, 0.9 + 0.5, 0.9 + 0.1 + 0.5];
    let mix = [0.0, 0.1, 0.7, 0.7 + 0.1, 0.2, 0.2 + 0.1, 0.2 + 0.7, (0.2 + 0.7) + 0.1];

    for (strategy, table) in [
        (FusionStrategy::Vanilla, &vanilla),
        (FusionStrategy::VisualGate, &gate),
        (FusionStrategy::VisualBonus, &bonus),
        (FusionStrategy::VisualMix, &mix),
    ] {
        let cfg = FusionConfig::default().with_strategy(strategy);
        for (point, expect) in cube.iter().zip(table.iter()) {
            let got = fuse(point.0, point.1, point.2, &cfg);
            assert_eq!(
                got, *expect,
                "{strategy:?} at {point:?}: got {got}, expected {expect}"
            );
        }
    }
    // Gating: all four vis=0 points are exactly zero.
    let gate_cfg = FusionConfig::default().with_strategy(FusionStrategy::VisualGate);
    for point in cube.iter().filter(|p| p.0 == 0) {
        assert_eq!(fuse(point.0, point.1, point.2, &gate_cfg), 0.0);
    }
    let elapsed = t0.elapsed();
    report(
        "criterion 1 (reward-fusion exactness)",
        elapsed.as_secs_f64() < 1.0,
        &format!("32 cube entries exact, 4 gated points zero, {:.3}s", elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: advantage standardization over 10^4 random groups
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_advantage_standardization() {
    let t0 = Instant::now();
    let mut rng = stream(2024, "criterion2", 0, 0);
    let sizes = [2usize, 8, 16];
    let mut checked = 0usize;
    for trial in 0..10_000 {
        let g = sizes[trial % sizes.len()];
        let degenerate = trial % 97 == 0;
        let rewards: Vec<f64> = if degenerate {
            vec![rng.gen_range(0.0..1.5); g]
        } else {
            (0..g).map(|_| rng.gen_range(0.0..1.5)).collect()
        };
        let a = compute_advantages(&rewards).unwrap().advantages;
        if rewards.windows(2).all(|w| w[0] == w[1]) {
            assert!(a.iter().all(|&x| x == 0.0), "degenerate group must be all zero");
            continue;
        }
        let mean = a.iter().sum::<f64>() / g as f64;
        let std = (a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / g as f64).sqrt();
        assert!(mean.abs() <= 1e-9, "mean {mean} too large");
        assert!((std - 1.0).abs() <= 1e-9, "std {std} off unit");

        let affine: Vec<f64> = rewards.iter().map(|r| 2.0 * r + 3.0).collect();
        let b = compute_advantages(&affine).unwrap().advantages;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9, "affine transform changed advantages");
        }
        checked += 1;
    }
    let elapsed = t0.elapsed();
    report(
        "criterion 2 (advantage standardization)",
        elapsed.as_secs_f64() < 5.0,
        &format!("{checked} non-degenerate groups standardized, {:.2}s", elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: surrogate gradient vs central finite differences
// ---------------------------------------------------------------------------

fn dynamics_sample(vocab_size: u8, seed: u64) -> Sample {
    let cfg = SceneConfig { grid_size: 3, max_objects: vocab_size };
    let scene = generate_scene(seed, &cfg).unwrap();
    let question = generate_question(&scene, QuestionTemplate::Count, seed ^ 0x77).unwrap();
    Sample { sample_id: format!("s{seed}"), scene, question, domain_tag: "counting".into() }
}

#[test]
fn criterion_3_gradient_correctness() {
    let t0 = Instant::now();
    let vocab = Vocab::new(2);
    let sample = dynamics_sample(2, 31);
    let eps = 0.2;
    let h = 1e-5;
    let margin = 1e-3;
    let mut instances = 0usize;
    let mut coords_checked = 0usize;
    let mut trial = 0u64;
    while instances < 10 {
        trial += 1;
        let mut params_old = PolicyParams::new_uniform(&vocab);
        let mut rng = stream(3000 + trial, "old", 0, 0);
        for z in params_old.logits.iter_mut() {
            *z = rng.gen_range(-0.8..0.8);
        }
        let mut params_new = params_old.clone();
        let mut rng = stream(3100 + trial, "delta", 0, 0);
        for z in params_new.logits.iter_mut() {
            *z += rng.gen_range(-0.25..0.25);
        }
        let sampling = SamplingConfig { temperature: 1.0, max_len: 10 };
        let mut group = RolloutGroup {
            sample_id: sample.sample_id.clone(),
            trajectories: Vec::new(),
            breakdowns: Vec::new(),
            rewards: Vec::new(),
            hallucinated: Vec::new(),
        };
        let mut reward_rng = stream(3200 + trial, "rewards", 0, 0);
        for k in 0..4 {
            let mut roll = stream(3300 + trial, "roll", k, 0);
            group
                .trajectories
                .push(sample_trajectory(&params_old, &vocab, &sample, &sampling, &mut roll));
            group.rewards.push(reward_rng.gen_range(0.0..1.0));
        }
        let advantages = compute_advantages(&group.rewards).unwrap();

        // Exclude instances with any ratio near a clip boundary.
        let mut near = false;
        for traj in &group.trajectories {
            let lps = logprob(&params_new, &vocab, &sample, &traj.tokens, 1.0).unwrap();
            for (lp, old) in lps.iter().zip(&traj.old_logprobs) {
                let psi = (lp - old).exp();
                if (psi - (1.0 - eps)).abs() < margin || (psi - (1.0 + eps)).abs() < margin {
                    near = true;
                }
            }
        }
        if near {
            continue;
        }

        let eval = |p: &PolicyParams| {
            surrogate_loss_and_grad(
                &sample,
                &group,
                &advantages,
                p,
                &vocab,
                1.0,
                eps,
                TokenAveraging::PerTrajectory,
            )
            .unwrap()
            .0
        };
        let (_, grad) = surrogate_loss_and_grad(
            &sample,
            &group,
            &advantages,
            &params_new,
            &vocab,
            1.0,
            eps,
            TokenAveraging::PerTrajectory,
        )
        .unwrap();

        let mut coords = Vec::new();
        for traj in &group.trajectories {
            let mut prev = None;
            for (pos, &tok) in traj.tokens.iter().enumerate() {
                let ctx = context_of(&sample, pos, prev);
                coords.push(ctx * vocab.len() + tok);
                coords.push(ctx * vocab.len() + (tok + 7) % vocab.len());
                prev = vocab.token(tok);
            }
        }
        coords.sort_unstable();
        coords.dedup();
        let mut coord_rng = stream(3400 + trial, "coords", 0, 0);
        for _ in 0..6 {
            let idx = coords[coord_rng.gen_range(0..coords.len())];
            let mut plus = params_new.clone();
            plus.logits[idx] += h;
            let mut minus = params_new.clone();
            minus.logits[idx] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let rel = (grad[idx] - fd).abs() / grad[idx].abs().max(fd.abs()).max(1e-8);
            assert!(
                rel <= 1e-4,
                "instance {instances} coord {idx}: analytic {} vs fd {fd} (rel {rel:.2e})",
                grad[idx]
            );
            coords_checked += 1;
        }
        instances += 1;
    }
    let elapsed = t0.elapsed();
    report(
        "criterion 3 (gradient correctness)",
        coords_checked >= 50 && instances >= 10 && elapsed.as_secs_f64() < 30.0,
        &format!(
            "{coords_checked} coordinates over {instances} instances, rel err <= 1e-4, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: judge protocol (latest match, order invariance, bias probe)
// ---------------------------------------------------------------------------

fn trajectory_with_claims(vocab: &Vocab, claims: &[Fact], answer: &str, id: &str) -> ParsedTrajectory {
    let mut tokens = vec![vocab.think_open()];
    for &c in claims {
        if let Some(t) = vocab.claim_id(c) {
            tokens.push(t);
        }
    }
    tokens.push(vocab.think_close());
    tokens.push(vocab.boxed_id(answer).unwrap());
    let n = tokens.len();
    parse(&Trajectory { tokens, old_logprobs: vec![-1.0; n], prompt_ref: id.into() }, vocab)
}

/// Random claim set mixing verified, contradicted, and unverifiable claims.
fn random_claims(facts: &[Fact], rng: &mut ChaCha8Rng) -> Vec<Fact> {
    let k = rng.gen_range(0..4);
    (0..k)
        .map(|_| {
            let f = facts[rng.gen_range(0..facts.len())];
            if rng.gen_bool(0.35) {
                match f {
                    Fact::CountByAttribute { attr, count } => {
                        Fact::CountByAttribute { attr, count: count + 1 }
                    }
                    Fact::HasObject { shape, color, size, present } => {
                        Fact::HasObject { shape, color, size, present: !present }
                    }
                    Fact::LeftOf { a, b, holds } => Fact::LeftOf { a, b, holds: !holds },
                    other => other,
                }
            } else {
                f
            }
        })
        .collect()
}

struct AlwaysSlotA;
impl PairwiseJudge for AlwaysSlotA {
    fn compare(&self, _q: &PairwiseQuery<'_>) -> factgate::Result<Verdict> {
        Ok(Verdict { preferred_slot: Slot::SlotA, raw_text: None })
    }
    fn name(&self) -> &'static str {
        "biased"
    }
}

#[test]
fn criterion_4_judge_protocol() {
    // 20-case golden suite for latest-match extraction.
    let patterns = VerdictPatterns::default();
    let golden: [(&str, Option<Slot>); 20] = [
        ("I lean A at first, but final answer: B", Some(Slot::SlotB)),
        ("verdict: A", Some(Slot::SlotA)),
        ("B", Some(Slot::SlotB)),
        ("A", Some(Slot::SlotA)),
        ("[[A]]", Some(Slot::SlotA)),
        ("[B]", Some(Slot::SlotB)),
        ("(A)", Some(Slot::SlotA)),
        ("The better response is [[B]].", Some(Slot::SlotB)),
        ("A A A then at last B", Some(Slot::SlotB)),
        ("B no wait, A", Some(Slot::SlotA)),
        ("response A is wrong; response B is faithful. B", Some(Slot::SlotB)),
        ("Answer: A. Though B had merits, A wins.", Some(Slot::SlotA)),
        ("first [[B]] then [A]", Some(Slot::SlotA)),
        ("A and B are both fine but I pick (B)", Some(Slot::SlotB)),
        ("no verdict here", None),
        ("", None),
        ("a b lowercase only", None),
        ("the words Alpha and Bravo never match", None),
        ("AB glued together", None),
        ("Final verdict:\nA", Some(Slot::SlotA)),
    ];
    let mut golden_ok = 0usize;
    for (text, expect) in golden {
        match (extract_verdict(text, &patterns), expect) {
            (Ok(v), Some(slot)) if v.preferred_slot == slot => golden_ok += 1,
            (Err(_), None) => golden_ok += 1,
            (got, want) => panic!("extract_verdict({text:?}) = {got:?}, expected {want:?}"),
        }
    }

    // Order invariance of the mapped result with the oracle on 10^3 pairs.
    let vocab = Vocab::new(3);
    let cfg = SceneConfig { grid_size: 3, max_objects: 3 };
    let judge = OracleJudge::new();
    let mut rng = stream(4004, "pairs", 0, 0);
    let mut invariant = 0usize;
    for trial in 0..1000u64 {
        let scene = generate_scene(trial, &cfg).unwrap();
        let question = generate_question(&scene, QuestionTemplate::Count, trial).unwrap();
        let caption = render_pseudo_gt(&scene);
        let facts: Vec<Fact> = enumerate_facts(&scene).into_iter().collect();
        let sample_id = format!("s{trial}");
        let target =
            trajectory_with_claims(&vocab, &random_claims(&facts, &mut rng), "1", &sample_id);
        let reference =
            trajectory_with_claims(&vocab, &random_claims(&facts, &mut rng), "2", &sample_id);
        let mut mapped = Vec::new();
        for presentation in [Presentation::TargetFirst, Presentation::ReferenceFirst] {
            let q = PairwiseQuery::new(&question, &caption, &target, &reference, presentation)
                .unwrap();
            let v = judge.compare(&q).unwrap();
            mapped.push(v.preferred_slot == q.target_slot());
        }
        assert_eq!(mapped[0], mapped[1], "oracle mapping varied with order on pair {trial}");
        invariant += 1;
    }

    // A position-biased judge is detected: the mapped result flips with order.
    let scene = generate_scene(7, &cfg).unwrap();
    let question = generate_question(&scene, QuestionTemplate::Count, 7).unwrap();
    let caption = render_pseudo_gt(&scene);
    let target = trajectory_with_claims(&vocab, &[], "1", "s7");
    let reference = trajectory_with_claims(&vocab, &[], "2", "s7");
    let biased = AlwaysSlotA;
    let mut flips = Vec::new();
    for presentation in [Presentation::TargetFirst, Presentation::ReferenceFirst] {
        let q = PairwiseQuery::new(&question, &caption, &target, &reference, presentation).unwrap();
        let v = biased.compare(&q).unwrap();
        flips.push(v.preferred_slot == q.target_slot());
    }
    let bias_detected = flips[0] != flips[1];

    report(
        "criterion 4 (judge protocol)",
        golden_ok == 20 && invariant == 1000 && bias_detected,
        &format!("{golden_ok}/20 golden cases, {invariant} order-invariant pairs, bias detected"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: oracle-judge equivalence with the brute-force rule
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_oracle_equivalence() {
    let vocab = Vocab::new(3);
    let cfg = SceneConfig { grid_size: 3, max_objects: 3 };
    let judge = OracleJudge::new();
    let mut rng = stream(5005, "pairs", 0, 0);
    let mut agree = 0usize;
    let total = 1000usize;
    for trial in 0..total as u64 {
        let scene = generate_scene(9000 + trial, &cfg).unwrap();
        let question = generate_question(&scene, QuestionTemplate::Comparison, trial).unwrap();
        let caption = render_pseudo_gt(&scene);
        let fact_set = enumerate_facts(&scene);
        let facts: Vec<Fact> = fact_set.iter().copied().collect();
        let sample_id = format!("s{trial}");
        let target =
            trajectory_with_claims(&vocab, &random_claims(&facts, &mut rng), "yes", &sample_id);
        let reference =
            trajectory_with_claims(&vocab, &random_claims(&facts, &mut rng), "no", &sample_id);

        let q = PairwiseQuery::new(
            &question,
            &caption,
            &target,
            &reference,
            Presentation::TargetFirst,
        )
        .unwrap();
        let got = judge.compare(&q).unwrap().preferred_slot == Slot::SlotA;

        // Brute-force re-evaluation of the lexicographic fidelity rule.
        let tp = fidelity_profile(&target.claims, &fact_set);
        let rp = fidelity_profile(&reference.claims, &fact_set);
        let expect = if tp.contradicted != rp.contradicted {
            tp.contradicted < rp.contradicted
        } else if tp.verified != rp.verified {
            tp.verified > rp.verified
        } else if target.well_formed != reference.well_formed {
            target.well_formed
        } else {
            true
        };
        if got == expect {
            agree += 1;
        }
    }
    report(
        "criterion 5 (oracle-judge equivalence)",
        agree == total,
        &format!("{agree}/{total} agreement with brute-force rule"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: learnability filtering with planted accuracies
// ---------------------------------------------------------------------------

struct PlantedSampler {
    accuracies: Vec<f64>,
    k: usize,
    vocab: Vocab,
}

impl ResponseSampler for PlantedSampler {
    fn sample_response(
        &self,
        sample: &Sample,
        rollout_idx: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Trajectory {
        let idx: usize = sample.sample_id.rsplit('-').next().unwrap().parse().unwrap();
        let correct_slots = (self.accuracies[idx] * self.k as f64).round() as usize;
        let gold = canonicalize_answer(&sample.question.gold_answer);
        let answer = if rollout_idx < correct_slots {
            gold
        } else {
            self.vocab.answers().iter().find(|a| **a != gold).unwrap().clone()
        };
        Trajectory {
            tokens: vec![self.vocab.boxed_id(&answer).unwrap()],
            old_logprobs: vec![-1.0],
            prompt_ref: sample.sample_id.clone(),
        }
    }
}

#[test]
fn criterion_6_learnability_filtering() {
    let vocab = Vocab::new(3);
    let scene_cfg = SceneConfig { grid_size: 3, max_objects: 3 };
    let mut samples = Vec::new();
    for i in 0..4u64 {
        let scene = generate_scene(600 + i, &scene_cfg).unwrap();
        let question = generate_question(&scene, QuestionTemplate::Count, i).unwrap();
        samples.push(Sample {
            sample_id: format!("planted-{i}"),
            scene,
            question,
            domain_tag: "counting".into(),
        });
    }
    let planted = vec![0.0, 0.25, 0.5, 1.0];
    let cfg = FilterConfig { rollouts_per_sample: 8, min_accuracy: 0.1, max_accuracy: 0.9 };
    let sampler = PlantedSampler { accuracies: planted, k: 8, vocab: Vocab::new(3) };
    let (kept, rejected) = learnability_filter(&samples, &sampler, &cfg, &vocab, 66).unwrap();
    let kept_ids: Vec<&str> = kept.iter().map(|(s, _)| s.sample_id.as_str()).collect();
    let kept_accs: Vec<f64> = kept.iter().map(|(_, a)| *a).collect();

    let conserved = kept.len() + rejected.len() == samples.len();
    let exact = kept_ids == ["planted-1", "planted-2"] && kept_accs == [0.25, 0.5];
    report(
        "criterion 6 (learnability filtering)",
        exact && conserved,
        &format!("kept {kept_ids:?} with accuracies {kept_accs:?}, totals conserved"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: best-of-N winner is never strictly dominated
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_best_of_n_soundness() {
    let vocab = Vocab::new(2);
    let scene_cfg = SceneConfig { grid_size: 3, max_objects: 2 };
    let judge = OracleJudge::new();
    let params = PolicyParams::new_uniform(&vocab);
    let sampler = PolicySampler {
        params: &params,
        vocab: &vocab,
        cfg: SamplingConfig { temperature: 1.0, max_len: 12 },
    };
    let n = 8;
    let mut checked = 0usize;
    let mut trial = 0u64;
    while checked < 200 {
        trial += 1;
        let scene = generate_scene(7000 + trial, &scene_cfg).unwrap();
        let question = match generate_question(&scene, QuestionTemplate::Count, trial) {
            Ok(q) => q,
            Err(_) => continue,
        };
        let sample = Sample {
            sample_id: format!("bofn-{trial}"),
            scene,
            question,
            domain_tag: "counting".into(),
        };
        let pseudo_gt = render_pseudo_gt(&sample.scene);
        let facts = enumerate_facts(&sample.scene);
        let winner =
            select_reference(&sample, &sampler, n, &judge, &pseudo_gt, &vocab, 70).unwrap();
        let wp = {
            let parsed = parse(&winner, &vocab);
            fidelity_profile(&parsed.claims, &facts)
        };
        // Exhaustively regenerate the same candidates and test domination.
        for k in 0..n {
            let mut rng = stream(
                70,
                "reference",
                factgate::rng::hash_str(&sample.sample_id),
                k as u64,
            );
            let cand = sampler.sample_response(&sample, k, &mut rng);
            let cp = {
                let parsed = parse(&cand, &vocab);
                fidelity_profile(&parsed.claims, &facts)
            };
            let dominates = cp.contradicted <= wp.contradicted
                && cp.verified >= wp.verified
                && (cp.contradicted < wp.contradicted || cp.verified > wp.verified);
            assert!(
                !dominates,
                "candidate {k} strictly dominates the winner on sample {trial}"
            );
        }
        checked += 1;
    }
    report(
        "criterion 7 (best-of-N soundness)",
        checked == 200,
        &format!("{checked} samples, no winner strictly dominated among N={n}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: training dynamics (gated vs vanilla under a shared seed)
// ---------------------------------------------------------------------------

fn dynamics_config(out_dir: &std::path::Path) -> RunConfig {
    let toml = format!(
        r#"
seed = 11

[paths]
out_dir = "{}"

[scene]
grid_size = 3
max_objects = 2
domains = ["counting", "attributes", "comparison", "spatial"]
pool_size = 96
per_domain_n = 64
holdout_size = 128

[filter]
rollouts_per_sample = 8
min_accuracy = 0.1
max_accuracy = 0.9

[reference]
best_of_n = 8

[train]
learning_rate = 50.0
group_size = 16
batch_size = 16
rollout_batch_size = 128
total_steps = 200
clip_epsilon = 0.2
temperature = 1.0
max_len = 12
checkpoint_every = 0
"#,
        out_dir.display()
    );
    RunConfig::from_toml(&toml).unwrap()
}

struct DynamicsRuns {
    gate: Vec<MetricRecord>,
    vanilla: Vec<MetricRecord>,
    wall_seconds: f64,
}

fn dynamics_runs() -> &'static DynamicsRuns {
    static RUNS: OnceLock<DynamicsRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dynamics_config(dir.path());
        let t0 = Instant::now();
        harness::cmd_gen_data(&cfg).unwrap();
        let paths = harness::RunPaths::new(&cfg.paths.out_dir);
        let dataset = read_dataset(std::io::BufReader::new(
            std::fs::File::open(paths.dataset()).unwrap(),
        ))
        .unwrap();
        let holdout = read_samples(std::io::BufReader::new(
            std::fs::File::open(paths.holdout()).unwrap(),
        ))
        .unwrap();
        let vocab = cfg.vocab();
        let judge = OracleJudge::new();
        let mut run = |strategy: FusionStrategy| {
            let fusion = cfg.fusion.clone().with_strategy(strategy);
            train(&dataset, &holdout, &cfg.train, &fusion, &judge, &vocab, None, |_, _, _| Ok(()))
                .unwrap()
                .metrics
        };
        let gate = run(FusionStrategy::VisualGate);
        let vanilla = run(FusionStrategy::Vanilla);
        DynamicsRuns { gate, vanilla, wall_seconds: t0.elapsed().as_secs_f64() }
    })
}

fn quartile_mean_len(metrics: &[MetricRecord]) -> f64 {
    let start = metrics.len() - metrics.len().div_ceil(4);
    let tail = &metrics[start..];
    tail.iter().map(|m| m.mean_response_len).sum::<f64>() / tail.len() as f64
}

// Goldens recorded from the first verified run of this seeded configuration.
const GOLDEN_GATE_FINAL_HALLUCINATION: f64 = 0.036057692307692304;
const GOLDEN_VANILLA_FINAL_HALLUCINATION: f64 = 0.07271634615384616;
const GOLDEN_GATE_FINAL_ACCURACY: f64 = 0.421875;

#[test]
fn criterion_8a_gate_reduces_final_hallucination() {
    let runs = dynamics_runs();
    let gate = runs.gate.last().unwrap().hallucination_rate;
    let vanilla = runs.vanilla.last().unwrap().hallucination_rate;
    let golden_ok = (gate - GOLDEN_GATE_FINAL_HALLUCINATION).abs() <= 1e-9
        && (vanilla - GOLDEN_VANILLA_FINAL_HALLUCINATION).abs() <= 1e-9;
    report(
        "criterion 8a (final hallucination, gate < vanilla)",
        gate < vanilla && golden_ok && runs.wall_seconds < 300.0,
        &format!(
            "gate {gate:.4} < vanilla {vanilla:.4}, goldens exact, {:.1}s total",
            runs.wall_seconds
        ),
    );
}

#[test]
fn criterion_8b_gate_lengthens_responses() {
    let runs = dynamics_runs();
    let gate = quartile_mean_len(&runs.gate);
    let vanilla = quartile_mean_len(&runs.vanilla);
    report(
        "criterion 8b (final-quartile length, gate > vanilla)",
        gate > vanilla,
        &format!("gate {gate:.3} vs vanilla {vanilla:.3}"),
    );
}

#[test]
fn criterion_8c_gate_accuracy_non_decreasing_after_burn_in() {
    let runs = dynamics_runs();
    let acc: Vec<f64> = runs.gate.iter().map(|m| m.holdout_accuracy).collect();
    // Band fixed after the first verified run: after 50 burn-in steps the
    // curve never drops more than 0.08 below its running maximum.
    let burn_in = 50;
    let band = 0.08;
    let mut running_max = acc[burn_in];
    let mut violations = 0usize;
    for &a in &acc[burn_in..] {
        running_max = running_max.max(a);
        if a < running_max - band {
            violations += 1;
        }
    }
    let final_acc = *acc.last().unwrap();
    let golden_ok = (final_acc - GOLDEN_GATE_FINAL_ACCURACY).abs() <= 1e-9;
    report(
        "criterion 8c (gate accuracy non-decreasing after burn-in)",
        violations == 0 && golden_ok,
        &format!(
            "0 band violations after step {burn_in} (band {band}), final accuracy {final_acc:.4}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical outputs across reruns
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_determinism() {
    let small = |dir: &std::path::Path| {
        let toml = format!(
            r#"
seed = 5
[paths]
out_dir = "{}"
[scene]
grid_size = 3
max_objects = 2
domains = ["counting", "attributes"]
pool_size = 24
per_domain_n = 16
holdout_size = 8
[train]
learning_rate = 10.0
group_size = 4
rollout_batch_size = 8
total_steps = 12
max_len = 10
checkpoint_every = 6
"#,
            dir.display()
        );
        RunConfig::from_toml(&toml).unwrap()
    };
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        harness::cmd_gen_data(&cfg).unwrap();
        harness::cmd_train(&cfg, None).unwrap();
        let paths = harness::RunPaths::new(&cfg.paths.out_dir);
        let read = |p: std::path::PathBuf| std::fs::read(p).unwrap();
        (
            read(paths.dataset()),
            read(paths.holdout()),
            read(paths.manifest()),
            read(paths.metrics()),
            read(paths.checkpoint_final()),
        )
    };
    let a = run();
    let b = run();
    let identical = a == b;
    report(
        "criterion 9 (determinism)",
        identical,
        "dataset, holdout, manifest, metrics, checkpoint byte-identical across reruns",
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: remote-judge integration against the local stub
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_remote_judge_stub() {
    let vocab = Vocab::new(2);
    let scene_cfg = SceneConfig { grid_size: 3, max_objects: 2 };
    let scene = generate_scene(42, &scene_cfg).unwrap();
    let question = generate_question(&scene, QuestionTemplate::Count, 1).unwrap();
    let caption = render_pseudo_gt(&scene);
    let target = trajectory_with_claims(&vocab, &[], "1", "s42");
    let reference = trajectory_with_claims(&vocab, &[], "2", "s42");

    // Think-wrapped reply: stripped, then latest match wins.
    let server = StubServer::start(vec![StubAction::Reply(
        "<think>Response A seems thorough.</think> Checking facts... my verdict is B".into(),
    )])
    .unwrap();
    let endpoint = EndpointConfig {
        base_url: server.base_url(),
        timeout_ms: 2_000,
        max_retries: 0,
        backoff_ms: 10,
        failure_policy: FailurePolicy::ScoreZero,
        ..EndpointConfig::default()
    };
    let judge = RemoteJudge::new(endpoint).unwrap();
    let q = PairwiseQuery::new(&question, &caption, &target, &reference, Presentation::TargetFirst)
        .unwrap();
    let think_wrapped_ok = judge.compare(&q).unwrap().preferred_slot == Slot::SlotB;
    drop(server);

    // Two timeouts, then success, with the retry count surfaced.
    let server = StubServer::start(vec![
        StubAction::Hang(900),
        StubAction::Hang(900),
        StubAction::Reply("A".into()),
    ])
    .unwrap();
    let endpoint = EndpointConfig {
        base_url: server.base_url(),
        timeout_ms: 300,
        max_retries: 3,
        backoff_ms: 10,
        failure_policy: FailurePolicy::ScoreZero,
        ..EndpointConfig::default()
    };
    let judge = RemoteJudge::new(endpoint).unwrap();
    let (verdict, retries) = judge.compare_detailed(&q).unwrap();
    let retry_ok = verdict.preferred_slot == Slot::SlotA && retries == 2;
    drop(server);

    // Verdict mapping: a stub that always answers B prefers the target
    // exactly when the target sits in slot B.
    let server = StubServer::start(vec![StubAction::Reply("B".into())]).unwrap();
    let endpoint = EndpointConfig {
        base_url: server.base_url(),
        timeout_ms: 2_000,
        max_retries: 0,
        backoff_ms: 10,
        failure_policy: FailurePolicy::ScoreZero,
        ..EndpointConfig::default()
    };
    let judge = RemoteJudge::new(endpoint).unwrap();
    let mut mapped = Vec::new();
    for presentation in [Presentation::TargetFirst, Presentation::ReferenceFirst] {
        let q = PairwiseQuery::new(&question, &caption, &target, &reference, presentation).unwrap();
        let v = judge.compare(&q).unwrap();
        mapped.push(v.preferred_slot == q.target_slot());
    }
    let mapping_ok = mapped == [false, true];

    report(
        "criterion 10 (remote-judge stub integration)",
        think_wrapped_ok && retry_ok && mapping_ok,
        &format!("think-stripped latest-match ok, retries=2 surfaced, verdict mapping correct"),
    );
}

// Shared helper namespace check: the two dynamics helpers must stay in sync
// with the library's quartile computation.
#[test]
fn quartile_helper_matches_harness() {
    let mk = |step: usize, len: f64| MetricRecord {
        step,
        mean_fused_reward: 0.0,
        mean_s_vis: 0.0,
        mean_s_ans: 0.0,
        mean_s_fmt: 0.0,
        holdout_accuracy: 0.0,
        hallucination_rate: 0.0,
        mean_response_len: len,
        wall_ms: 0.0,
    };
    let metrics: Vec<MetricRecord> = (0..11).map(|i| mk(i, i as f64)).collect();
    assert_eq!(
        quartile_mean_len(&metrics),
        harness::final_quartile_mean_len(&metrics)
    );
    let _ = BTreeSet::from([1]);
}
