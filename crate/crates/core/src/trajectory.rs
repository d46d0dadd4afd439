//! Response grammar: token vocabulary, trajectory parsing, and the
//! rule-based format and answer scores.
//!
//! A response is a token sequence over a closed vocabulary: think-segment
//! delimiters, one token per instantiable visual claim, one boxed token per
//! answer candidate, and an end marker. The well-formed shape is a single
//! think span (claims only inside) followed by a single boxed answer.
//! Parsing is total: malformed sequences never abort, they just score zero
//! on format, and claims/answers are still recovered best-effort so that
//! every rollout can be judged and filtered.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::{AttributeValue, Fact, COLORS, SHAPES, SIZES};

pub type TokenId = usize;

/// One vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    ThinkOpen,
    ThinkClose,
    End,
    /// A visual claim, same schema as a fact.
    Claim(Fact),
    /// A boxed final answer; the payload indexes `Vocab::answers`.
    Boxed(u8),
}

/// Closed token vocabulary derived from the scene configuration.
///
/// Layout is fixed: think-open, think-close, end, then every instantiable
/// claim in canonical order, then one boxed token per answer candidate.
#[derive(Debug, Clone)]
pub struct Vocab {
    pub max_objects: u8,
    tokens: Vec<Token>,
    index: HashMap<Token, TokenId>,
    answers: Vec<String>,
}

impl Vocab {
    pub fn new(max_objects: u8) -> Vocab {
        let mut tokens = vec![Token::ThinkOpen, Token::ThinkClose, Token::End];

        for attr in AttributeValue::all() {
            for count in 0..=max_objects {
                tokens.push(Token::Claim(Fact::CountByAttribute { attr, count }));
            }
        }
        for &shape in &SHAPES {
            for &color in &COLORS {
                for &size in &SIZES {
                    for present in [false, true] {
                        tokens.push(Token::Claim(Fact::HasObject { shape, color, size, present }));
                    }
                }
            }
        }
        for obj_id in 0..max_objects {
            for value in AttributeValue::all() {
                tokens.push(Token::Claim(Fact::AttributeOf { obj_id, value }));
            }
        }
        for a in 0..max_objects {
            for b in 0..max_objects {
                if a == b {
                    continue;
                }
                for holds in [false, true] {
                    tokens.push(Token::Claim(Fact::LeftOf { a, b, holds }));
                }
            }
        }
        for a in 0..max_objects {
            for b in 0..max_objects {
                if a == b {
                    continue;
                }
                for holds in [false, true] {
                    tokens.push(Token::Claim(Fact::Above { a, b, holds }));
                }
            }
        }

        let mut answers: Vec<String> = (0..=max_objects).map(|n| n.to_string()).collect();
        answers.extend(AttributeValue::all().iter().map(|a| a.word().to_string()));
        answers.push("yes".into());
        answers.push("no".into());
        for i in 0..answers.len() {
            tokens.push(Token::Boxed(i as u8));
        }

        let index = tokens.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        Vocab { max_objects, tokens, index, answers }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<Token> {
        self.tokens.get(id).copied()
    }

    pub fn id_of(&self, token: Token) -> Option<TokenId> {
        self.index.get(&token).copied()
    }

    pub fn think_open(&self) -> TokenId {
        0
    }

    pub fn think_close(&self) -> TokenId {
        1
    }

    pub fn end(&self) -> TokenId {
        2
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn answer_text(&self, boxed_idx: u8) -> &str {
        &self.answers[boxed_idx as usize]
    }

    /// Boxed token id for a canonical answer string, if it is a candidate.
    pub fn boxed_id(&self, answer: &str) -> Option<TokenId> {
        let idx = self.answers.iter().position(|a| a == answer)?;
        self.id_of(Token::Boxed(idx as u8))
    }

    pub fn claim_id(&self, fact: Fact) -> Option<TokenId> {
        self.id_of(Token::Claim(fact))
    }

    /// Text piece for a single token.
    pub fn piece(&self, id: TokenId) -> String {
        match self.token(id) {
            Some(Token::ThinkOpen) => "<think>".into(),
            Some(Token::ThinkClose) => "</think>".into(),
            Some(Token::End) => "<end>".into(),
            Some(Token::Claim(fact)) => fact.claim_text(),
            Some(Token::Boxed(i)) => format!("\\boxed{{{}}}", self.answer_text(i)),
            None => format!("<unk:{id}>"),
        }
    }

    /// Stable decoded text: token pieces joined by single spaces.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|&id| self.piece(id)).collect::<Vec<_>>().join(" ")
    }

    /// Hash of the full token layout; embedded in checkpoints so a params
    /// table is never applied to a mismatched vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for id in 0..self.len() {
            hasher.update(self.piece(id).as_bytes());
            hasher.update([0u8]);
        }
        format!("{:x}", hasher.finalize())
    }
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// A sampled response: token ids plus the log-probabilities recorded at
/// sampling time, tagged with the sample it answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tokens: Vec<TokenId>,
    pub old_logprobs: Vec<f64>,
    pub prompt_ref: String,
}

impl Trajectory {
    pub fn validate(&self, max_len: usize) -> Result<()> {
        if self.tokens.is_empty() || self.tokens.len() > max_len {
            return Err(Error::Dataset(format!(
                "trajectory length {} outside [1, {max_len}]",
                self.tokens.len()
            )));
        }
        if self.tokens.len() != self.old_logprobs.len() {
            return Err(Error::LogprobMismatch {
                tokens: self.tokens.len(),
                logprobs: self.old_logprobs.len(),
            });
        }
        if self.old_logprobs.iter().any(|&lp| lp > 0.0 || !lp.is_finite()) {
            return Err(Error::Dataset("log-probabilities must be finite and <= 0".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// JSONL form of a trajectory: ids plus stable decoded text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub prompt_ref: String,
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub old_logprobs: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn new(traj: &Trajectory, vocab: &Vocab) -> TrajectoryRecord {
        TrajectoryRecord {
            prompt_ref: traj.prompt_ref.clone(),
            tokens: traj.tokens.clone(),
            text: vocab.decode(&traj.tokens),
            old_logprobs: traj.old_logprobs.clone(),
        }
    }

    pub fn into_trajectory(self) -> Trajectory {
        Trajectory {
            tokens: self.tokens,
            old_logprobs: self.old_logprobs,
            prompt_ref: self.prompt_ref,
        }
    }
}

/// Deduplicated, canonically ordered claims plus a count of tokens that sat
/// inside a think span without being claims.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClaimSet {
    pub claims: Vec<Fact>,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrajectory {
    pub well_formed: bool,
    pub claims: ClaimSet,
    pub answer: Option<String>,
    /// Stable decoded text of the raw tokens; what a remote judge reads.
    pub text: String,
    pub raw: Trajectory,
}

/// Parse a trajectory. Total over arbitrary token id sequences.
///
/// Well-formed means all of:
///   1. every id is in the vocabulary;
///   2. exactly one think-open and one think-close, open before close;
///   3. only claim tokens strictly between them;
///   4. exactly one boxed token, after the think-close;
///   5. nothing follows the boxed token except an optional end marker;
///   6. the end marker appears at most once, and only as the final token.
///
/// A well-formed response therefore finishes at its answer. Claims are
/// recovered from inside every open..close region even when the sequence is
/// malformed; non-claim tokens found there are dropped and counted. The
/// answer is the last boxed token anywhere in the sequence.
pub fn parse(traj: &Trajectory, vocab: &Vocab) -> ParsedTrajectory {
    let tokens = &traj.tokens;
    let mut opens = Vec::new();
    let mut closes = Vec::new();
    let mut boxed = Vec::new();
    let mut ends = Vec::new();
    let mut unknown = false;

    for (pos, &id) in tokens.iter().enumerate() {
        match vocab.token(id) {
            Some(Token::ThinkOpen) => opens.push(pos),
            Some(Token::ThinkClose) => closes.push(pos),
            Some(Token::Boxed(_)) => boxed.push(pos),
            Some(Token::End) => ends.push(pos),
            Some(Token::Claim(_)) => {}
            None => unknown = true,
        }
    }

    // Best-effort claim recovery from every think region.
    let mut claims = Vec::new();
    let mut dropped = 0usize;
    let mut in_think = false;
    for &id in tokens {
        match vocab.token(id) {
            Some(Token::ThinkOpen) if !in_think => in_think = true,
            Some(Token::ThinkClose) if in_think => in_think = false,
            Some(Token::Claim(fact)) if in_think => claims.push(fact),
            _ if in_think => dropped += 1,
            _ => {}
        }
    }
    claims.sort();
    claims.dedup();

    let answer = boxed.last().and_then(|&pos| match vocab.token(tokens[pos]) {
        Some(Token::Boxed(i)) => Some(vocab.answer_text(i).to_string()),
        _ => None,
    });

    let well_formed = !unknown
        && opens.len() == 1
        && closes.len() == 1
        && opens[0] < closes[0]
        && (opens[0] + 1..closes[0])
            .all(|p| matches!(vocab.token(tokens[p]), Some(Token::Claim(_))))
        && boxed.len() == 1
        && boxed[0] > closes[0]
        && (boxed[0] + 1..tokens.len())
            .all(|p| matches!(vocab.token(tokens[p]), Some(Token::End)))
        && ends.len() <= 1
        && ends.iter().all(|&p| p == tokens.len() - 1);

    ParsedTrajectory {
        well_formed,
        claims: ClaimSet { claims, dropped },
        answer,
        text: vocab.decode(tokens),
        raw: traj.clone(),
    }
}

/// Binary format score: 1 iff the trajectory is well-formed.
pub fn format_score(parsed: &ParsedTrajectory) -> u8 {
    parsed.well_formed as u8
}

/// Canonical answer form: trimmed, case-folded, leading zeros stripped from
/// pure digit strings. Deliberately no synonym table.
pub fn canonicalize_answer(answer: &str) -> String {
    let trimmed = answer.trim().to_lowercase();
    if !trimmed.is_empty() && trimmed.bytes().all(|b| b.is_ascii_digit()) {
        let stripped = trimmed.trim_start_matches('0');
        if stripped.is_empty() {
            return "0".into();
        }
        return stripped.into();
    }
    trimmed
}

/// Binary answer score: 1 iff an answer is present and canonically equal to
/// the gold answer.
pub fn answer_score(parsed: &ParsedTrajectory, gold: &str) -> u8 {
    match &parsed.answer {
        Some(ans) => (canonicalize_answer(ans) == canonicalize_answer(gold)) as u8,
        None => 0,
    }
}

/// The claims of a parsed trajectory.
pub fn extract_claims(parsed: &ParsedTrajectory) -> &ClaimSet {
    &parsed.claims
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Color, Shape, Size};
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        Vocab::new(3)
    }

    fn traj(tokens: Vec<TokenId>) -> Trajectory {
        let n = tokens.len();
        Trajectory { tokens, old_logprobs: vec![-1.0; n], prompt_ref: "s0".into() }
    }

    fn red_count_claim(v: &Vocab, count: u8) -> TokenId {
        v.claim_id(Fact::CountByAttribute { attr: AttributeValue::Color(Color::Red), count })
            .unwrap()
    }

    #[test]
    fn minimal_well_formed_trajectory() {
        let v = vocab();
        let t = traj(vec![
            v.think_open(),
            red_count_claim(&v, 3),
            v.think_close(),
            v.boxed_id("3").unwrap(),
        ]);
        let p = parse(&t, &v);
        assert!(p.well_formed);
        assert_eq!(p.claims.claims.len(), 1);
        assert_eq!(p.answer.as_deref(), Some("3"));
        assert_eq!(format_score(&p), 1);
    }

    #[test]
    fn no_boxed_span_is_malformed() {
        let v = vocab();
        let t = traj(vec![v.think_open(), v.think_close()]);
        let p = parse(&t, &v);
        assert!(!p.well_formed);
        assert!(p.answer.is_none());
        assert_eq!(answer_score(&p, "3"), 0);
    }

    #[test]
    fn two_think_spans_malformed() {
        let v = vocab();
        let t = traj(vec![
            v.think_open(),
            v.think_close(),
            v.think_open(),
            v.think_close(),
            v.boxed_id("1").unwrap(),
        ]);
        assert!(!parse(&t, &v).well_formed);
    }

    #[test]
    fn missing_think_close_malformed() {
        let v = vocab();
        let t = traj(vec![v.think_open(), v.boxed_id("1").unwrap()]);
        assert_eq!(format_score(&parse(&t, &v)), 0);
    }

    #[test]
    fn empty_think_segment_is_well_formed() {
        let v = vocab();
        let t = traj(vec![v.think_open(), v.think_close(), v.boxed_id("yes").unwrap(), v.end()]);
        assert_eq!(format_score(&parse(&t, &v)), 1);
    }

    #[test]
    fn end_must_be_final() {
        let v = vocab();
        let t = traj(vec![v.think_open(), v.end(), v.think_close(), v.boxed_id("1").unwrap()]);
        assert!(!parse(&t, &v).well_formed);
    }

    #[test]
    fn answer_scoring() {
        let v = vocab();
        let t = traj(vec![v.think_open(), v.think_close(), v.boxed_id("3").unwrap()]);
        let p = parse(&t, &v);
        assert_eq!(answer_score(&p, "3"), 1);
        assert_eq!(answer_score(&p, "03"), 1);
        assert_eq!(answer_score(&p, " 3 "), 1);
        assert_eq!(answer_score(&p, "2"), 0);

        let t = traj(vec![v.think_open(), v.think_close(), v.boxed_id("blue").unwrap()]);
        let p = parse(&t, &v);
        assert_eq!(answer_score(&p, "Blue"), 1);
        // Strict matching: near-synonyms score zero.
        assert_eq!(answer_score(&p, "cyan"), 0);
    }

    #[test]
    fn canonicalization_rules() {
        assert_eq!(canonicalize_answer("03"), "3");
        assert_eq!(canonicalize_answer("000"), "0");
        assert_eq!(canonicalize_answer("  Yes "), "yes");
        assert_eq!(canonicalize_answer("BLUE"), "blue");
    }

    #[test]
    fn duplicate_claims_deduplicated() {
        let v = vocab();
        let c = red_count_claim(&v, 3);
        let t = traj(vec![v.think_open(), c, c, v.think_close(), v.boxed_id("3").unwrap()]);
        let p = parse(&t, &v);
        assert!(p.well_formed);
        assert_eq!(p.claims.claims.len(), 1);
        assert_eq!(p.claims.dropped, 0);
    }

    #[test]
    fn non_claim_tokens_in_think_are_dropped_and_counted() {
        let v = vocab();
        let t = traj(vec![
            v.think_open(),
            v.boxed_id("1").unwrap(), // stray boxed inside think
            red_count_claim(&v, 2),
            v.think_close(),
            v.boxed_id("2").unwrap(),
        ]);
        let p = parse(&t, &v);
        assert!(!p.well_formed);
        assert_eq!(p.claims.dropped, 1);
        assert_eq!(p.claims.claims.len(), 1);
        // Best-effort answer: last boxed token wins.
        assert_eq!(p.answer.as_deref(), Some("2"));
    }

    #[test]
    fn unknown_ids_malformed_but_total() {
        let v = vocab();
        let t = traj(vec![v.think_open(), 99999, v.think_close(), v.boxed_id("1").unwrap()]);
        let p = parse(&t, &v);
        assert!(!p.well_formed);
        assert_eq!(p.claims.dropped, 1);
    }

    #[test]
    fn decoded_text_is_stable() {
        let v = vocab();
        let t = traj(vec![
            v.think_open(),
            red_count_claim(&v, 2),
            v.claim_id(Fact::HasObject {
                shape: Shape::Circle,
                color: Color::Blue,
                size: Size::Large,
                present: false,
            })
            .unwrap(),
            v.claim_id(Fact::LeftOf { a: 0, b: 1, holds: true }).unwrap(),
            v.think_close(),
            v.boxed_id("2").unwrap(),
            v.end(),
        ]);
        assert_eq!(
            v.decode(&t.tokens),
            "<think> count(red)=2 has(large blue circle)=no left_of(0,1)=yes </think> \\boxed{2} <end>"
        );
    }

    #[test]
    fn record_round_trips_claims_and_answer() {
        let v = vocab();
        let t = traj(vec![
            v.think_open(),
            red_count_claim(&v, 1),
            v.think_close(),
            v.boxed_id("1").unwrap(),
        ]);
        let p = parse(&t, &v);
        assert!(p.well_formed);
        let json = serde_json::to_string(&TrajectoryRecord::new(&t, &v)).unwrap();
        let back: TrajectoryRecord = serde_json::from_str(&json).unwrap();
        let p2 = parse(&back.into_trajectory(), &v);
        assert_eq!(p.claims, p2.claims);
        assert_eq!(p.answer, p2.answer);
        assert_eq!(p.well_formed, p2.well_formed);
    }

    #[test]
    fn vocab_layout_and_fingerprint() {
        let v = vocab();
        // 3 structural + claims + answers(0..=3, 8 attrs, yes/no).
        let claim_count = 8 * 4 + 18 * 2 + 3 * 8 + 2 * (3 * 2) * 2;
        assert_eq!(v.len(), 3 + claim_count + 4 + 8 + 2);
        assert_eq!(v.fingerprint(), Vocab::new(3).fingerprint());
        assert_ne!(v.fingerprint(), Vocab::new(4).fingerprint());
    }

    /// Independent claim extractor used as the dual-parser oracle: regions
    /// are located by index pairs first, then content is classified.
    fn oracle_extract(tokens: &[TokenId], v: &Vocab) -> (Vec<Fact>, usize) {
        let mut regions: Vec<(usize, usize)> = Vec::new();
        let mut open: Option<usize> = None;
        for (i, &id) in tokens.iter().enumerate() {
            match v.token(id) {
                Some(Token::ThinkOpen) if open.is_none() => open = Some(i),
                Some(Token::ThinkClose) => {
                    if let Some(s) = open.take() {
                        regions.push((s, i));
                    }
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            regions.push((s, tokens.len()));
        }
        let mut claims = std::collections::BTreeSet::new();
        let mut dropped = 0;
        for (s, e) in regions {
            for &id in &tokens[s + 1..e] {
                match v.token(id) {
                    Some(Token::Claim(f)) => {
                        claims.insert(f);
                    }
                    _ => dropped += 1,
                }
            }
        }
        (claims.into_iter().collect(), dropped)
    }

    #[test]
    fn fuzz_extraction_matches_independent_oracle() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let v = vocab();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let len = rng.gen_range(1..=24);
            // Bias toward structural tokens so regions actually form.
            let tokens: Vec<TokenId> = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        rng.gen_range(0..3)
                    } else {
                        rng.gen_range(0..v.len() + 4) // occasionally unknown
                    }
                })
                .collect();
            let p = parse(&traj(tokens.clone()), &v);
            let (oracle_claims, oracle_dropped) = oracle_extract(&tokens, &v);
            assert_eq!(p.claims.claims, oracle_claims, "tokens {tokens:?}");
            assert_eq!(p.claims.dropped, oracle_dropped, "tokens {tokens:?}");
        }
    }

    proptest! {
        /// Totality: parsing and scoring never panic and stay binary for
        /// arbitrary token sequences, including adversarial orderings.
        #[test]
        fn parse_total_and_scores_binary(tokens in proptest::collection::vec(0usize..160, 1..40)) {
            let v = vocab();
            let p = parse(&traj(tokens), &v);
            prop_assert!(format_score(&p) <= 1);
            prop_assert!(answer_score(&p, "3") <= 1);
            if p.well_formed {
                prop_assert!(p.answer.is_some());
                prop_assert_eq!(p.claims.dropped, 0);
            }
        }
    }
}
