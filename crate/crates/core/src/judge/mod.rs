//! Pairwise visual-fidelity judging.
//!
//! A judge decides which of two trajectories reasons more faithfully about a
//! scene, given the structured pseudo ground truth. Two implementations: a
//! deterministic oracle that scores claim fidelity by exact fact lookup, and
//! a remote chat-completion endpoint with the standard bias mitigations
//! (think-token stripping, latest-match verdict extraction, and randomized
//! presentation order mapped back to the target).

pub mod remote;
pub mod stub;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{parse_caption, FactKey, FactSet, Question, StructuredCaption};
use crate::trajectory::{ClaimSet, ParsedTrajectory};

pub use remote::{EndpointConfig, FailurePolicy, RemoteJudge};

/// Which slot of the two-response prompt holds the target trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Presentation {
    TargetFirst,
    ReferenceFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    SlotA,
    SlotB,
}

/// A judge's decision: exactly one preferred slot, plus the raw reply text
/// when a remote model produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub preferred_slot: Slot,
    pub raw_text: Option<String>,
}

/// One pairwise comparison, fully specified including presentation order.
#[derive(Debug, Clone)]
pub struct PairwiseQuery<'a> {
    pub question: &'a Question,
    pub pseudo_gt: &'a StructuredCaption,
    pub target: &'a ParsedTrajectory,
    pub reference: &'a ParsedTrajectory,
    pub presentation: Presentation,
}

impl<'a> PairwiseQuery<'a> {
    pub fn new(
        question: &'a Question,
        pseudo_gt: &'a StructuredCaption,
        target: &'a ParsedTrajectory,
        reference: &'a ParsedTrajectory,
        presentation: Presentation,
    ) -> Result<PairwiseQuery<'a>> {
        if target.raw.prompt_ref != reference.raw.prompt_ref {
            return Err(Error::Dataset(format!(
                "target answers {:?} but reference answers {:?}",
                target.raw.prompt_ref, reference.raw.prompt_ref
            )));
        }
        Ok(PairwiseQuery { question, pseudo_gt, target, reference, presentation })
    }

    /// The slot the target occupies under this presentation.
    pub fn target_slot(&self) -> Slot {
        match self.presentation {
            Presentation::TargetFirst => Slot::SlotA,
            Presentation::ReferenceFirst => Slot::SlotB,
        }
    }

    /// Trajectories in presented order (slot A first).
    pub fn presented(&self) -> (&ParsedTrajectory, &ParsedTrajectory) {
        match self.presentation {
            Presentation::TargetFirst => (self.target, self.reference),
            Presentation::ReferenceFirst => (self.reference, self.target),
        }
    }
}

/// How a trajectory's claims fare against the fact set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FidelityProfile {
    pub verified: usize,
    pub contradicted: usize,
    pub unverifiable: usize,
}

/// Classify every claim by exact lookup on the shared predicate schema.
pub fn fidelity_profile(claims: &ClaimSet, facts: &FactSet) -> FidelityProfile {
    let by_key: std::collections::BTreeMap<FactKey, _> =
        facts.iter().map(|f| (f.key(), f.value())).collect();
    let mut profile = FidelityProfile { verified: 0, contradicted: 0, unverifiable: 0 };
    for claim in &claims.claims {
        match by_key.get(&claim.key()) {
            Some(v) if *v == claim.value() => profile.verified += 1,
            Some(_) => profile.contradicted += 1,
            None => profile.unverifiable += 1,
        }
    }
    profile
}

/// Sort key for the oracle's lexicographic preference: fewer contradictions
/// dominate, then more verified claims, then well-formed over malformed.
pub fn fidelity_rank(profile: &FidelityProfile, well_formed: bool) -> (usize, isize, u8) {
    (profile.contradicted, -(profile.verified as isize), !well_formed as u8)
}

/// A pairwise judge. Implementations must be shareable across threads.
pub trait PairwiseJudge: Sync {
    fn compare(&self, query: &PairwiseQuery<'_>) -> Result<Verdict>;

    fn name(&self) -> &'static str;

    /// What to do with the comparison when the judge itself fails.
    fn failure_policy(&self) -> FailurePolicy {
        FailurePolicy::FailRun
    }

    /// Comparisons that may safely run concurrently.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Deterministic judge: ranks the two fidelity profiles lexicographically
/// and prefers the target on exact ties.
#[derive(Debug, Default)]
pub struct OracleJudge {
    _private: (),
}

impl OracleJudge {
    pub fn new() -> OracleJudge {
        OracleJudge::default()
    }
}

impl PairwiseJudge for OracleJudge {
    fn compare(&self, query: &PairwiseQuery<'_>) -> Result<Verdict> {
        let facts = parse_caption(&query.pseudo_gt.text).map_err(|e| {
            Error::Config(format!("pseudo ground truth does not parse: {e}"))
        })?;
        let target_rank =
            fidelity_rank(&fidelity_profile(&query.target.claims, &facts), query.target.well_formed);
        let reference_rank = fidelity_rank(
            &fidelity_profile(&query.reference.claims, &facts),
            query.reference.well_formed,
        );
        // Ties go to the target: matching the frozen reference should not
        // zero the reward.
        let target_preferred = target_rank <= reference_rank;
        let preferred_slot = if target_preferred {
            query.target_slot()
        } else {
            match query.target_slot() {
                Slot::SlotA => Slot::SlotB,
                Slot::SlotB => Slot::SlotA,
            }
        };
        Ok(Verdict { preferred_slot, raw_text: None })
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

// ---------------------------------------------------------------------------
// Verdict text handling (shared with the remote judge)
// ---------------------------------------------------------------------------

/// Remove every marker-delimited span and any leftover bare markers.
/// Unmatched open markers are removed alone; the text after them survives.
/// Idempotent: output never contains either marker.
pub fn strip_think(text: &str, open: &str, close: &str) -> String {
    let mut out = text.to_string();
    loop {
        match out.find(open) {
            Some(start) => {
                let after = start + open.len();
                match out[after..].find(close) {
                    Some(rel) => {
                        let end = after + rel + close.len();
                        out.replace_range(start..end, "");
                    }
                    None => {
                        out.replace_range(start..after, "");
                    }
                }
            }
            None => break,
        }
    }
    out.replace(close, "")
}

/// Compiled verdict patterns for the two slots.
#[derive(Debug, Clone)]
pub struct VerdictPatterns {
    slot_a: Regex,
    slot_b: Regex,
}

pub const DEFAULT_SLOT_A_PATTERN: &str = r"\[\[A\]\]|\[A\]|\(A\)|\bA\b";
pub const DEFAULT_SLOT_B_PATTERN: &str = r"\[\[B\]\]|\[B\]|\(B\)|\bB\b";

impl Default for VerdictPatterns {
    fn default() -> Self {
        VerdictPatterns::new(DEFAULT_SLOT_A_PATTERN, DEFAULT_SLOT_B_PATTERN)
            .expect("default patterns compile")
    }
}

impl VerdictPatterns {
    pub fn new(slot_a: &str, slot_b: &str) -> Result<VerdictPatterns> {
        Ok(VerdictPatterns {
            slot_a: Regex::new(slot_a)
                .map_err(|e| Error::Config(format!("bad slot-A pattern: {e}")))?,
            slot_b: Regex::new(slot_b)
                .map_err(|e| Error::Config(format!("bad slot-B pattern: {e}")))?,
        })
    }
}

/// Scan for all verdict candidates; the latest match wins. Zero matches is
/// an extraction failure surfaced to the caller.
pub fn extract_verdict(text: &str, patterns: &VerdictPatterns) -> Result<Verdict> {
    let last_a = patterns.slot_a.find_iter(text).last().map(|m| m.start());
    let last_b = patterns.slot_b.find_iter(text).last().map(|m| m.start());
    let preferred_slot = match (last_a, last_b) {
        (Some(a), Some(b)) => {
            if a > b {
                Slot::SlotA
            } else {
                Slot::SlotB
            }
        }
        (Some(_), None) => Slot::SlotA,
        (None, Some(_)) => Slot::SlotB,
        (None, None) => {
            return Err(Error::Judge(format!("no verdict token in reply {text:?}")))
        }
    };
    Ok(Verdict { preferred_slot, raw_text: Some(text.to_string()) })
}

// ---------------------------------------------------------------------------
// Presentation shuffling and the binary score
// ---------------------------------------------------------------------------

/// Randomize presentation order, run the judge, and map its slot verdict
/// back to "was the target preferred?".
pub fn shuffle_and_map(
    judge: &dyn PairwiseJudge,
    question: &Question,
    pseudo_gt: &StructuredCaption,
    target: &ParsedTrajectory,
    reference: &ParsedTrajectory,
    rng: &mut ChaCha8Rng,
) -> Result<bool> {
    let presentation = if rng.gen_bool(0.5) {
        Presentation::TargetFirst
    } else {
        Presentation::ReferenceFirst
    };
    let query = PairwiseQuery::new(question, pseudo_gt, target, reference, presentation)?;
    let verdict = judge.compare(&query)?;
    Ok(verdict.preferred_slot == query.target_slot())
}

/// Counters for comparisons that could not be scored normally.
#[derive(Debug, Default)]
pub struct JudgeDiagnostics {
    pub extraction_failures: AtomicU64,
    pub endpoint_failures: AtomicU64,
}

impl JudgeDiagnostics {
    pub fn snapshot(&self) -> (u64, u64) {
        (
            self.extraction_failures.load(Ordering::Relaxed),
            self.endpoint_failures.load(Ordering::Relaxed),
        )
    }
}

/// The binary visual-fidelity score: 1 iff the target is preferred over the
/// reference under a randomized presentation.
///
/// A verdict-extraction failure conservatively scores 0 and is counted. An
/// endpoint failure follows the judge's policy: score 0 and count, or fail
/// the run.
pub fn pairwise_score(
    judge: &dyn PairwiseJudge,
    question: &Question,
    pseudo_gt: &StructuredCaption,
    target: &ParsedTrajectory,
    reference: &ParsedTrajectory,
    rng: &mut ChaCha8Rng,
    diagnostics: &JudgeDiagnostics,
) -> Result<u8> {
    match shuffle_and_map(judge, question, pseudo_gt, target, reference, rng) {
        Ok(preferred) => Ok(preferred as u8),
        Err(Error::Judge(msg)) => {
            if msg.contains("no verdict token") {
                diagnostics.extraction_failures.fetch_add(1, Ordering::Relaxed);
                log::warn!("verdict extraction failed, scoring 0: {msg}");
                return Ok(0);
            }
            match judge.failure_policy() {
                FailurePolicy::ScoreZero => {
                    diagnostics.endpoint_failures.fetch_add(1, Ordering::Relaxed);
                    log::warn!("judge failure, scoring 0: {msg}");
                    Ok(0)
                }
                FailurePolicy::FailRun => Err(Error::Judge(msg)),
            }
        }
        Err(e) => Err(e),
    }
}
