//! Remote judge: pairwise comparison through an OpenAI-style
//! chat-completions endpoint, with bounded retries, think-token stripping,
//! and latest-match verdict extraction.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::judge::{extract_verdict, strip_think, PairwiseJudge, PairwiseQuery, Verdict, VerdictPatterns};

pub const DEFAULT_JUDGE_SYSTEM_TEMPLATE: &str = include_str!("../../templates/judge_system.txt");
pub const DEFAULT_JUDGE_USER_TEMPLATE: &str = include_str!("../../templates/judge_user.txt");
pub const DEFAULT_CAPTION_TEMPLATE: &str = include_str!("../../templates/caption_prompt.txt");

/// What a failed judge call does to the training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Propagate the error and abort the run.
    FailRun,
    /// Score the comparison 0 and keep a counter.
    ScoreZero,
}

/// Connection and protocol settings for the judge endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL up to and including the API root, e.g. `http://host:1234/v1`.
    pub base_url: String,
    pub model: String,
    /// Resolved API key; empty means no Authorization header.
    #[serde(default)]
    pub api_key: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    pub failure_policy: FailurePolicy,
    #[serde(default = "default_think_open")]
    pub think_open: String,
    #[serde(default = "default_think_close")]
    pub think_close: String,
    /// Sampling temperature sent to the judge model.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_backoff_ms() -> u64 {
    250
}
fn default_max_in_flight() -> usize {
    4
}
fn default_think_open() -> String {
    "<think>".into()
}
fn default_think_close() -> String {
    "</think>".into()
}
fn default_max_tokens() -> u32 {
    512
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "judge".into(),
            api_key: String::new(),
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_max_in_flight(),
            failure_policy: FailurePolicy::ScoreZero,
            think_open: default_think_open(),
            think_close: default_think_close(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
        }
    }
}

/// Fill named placeholders of the form `{name}` in a template.
pub fn fill_template(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in substitutions {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: String,
}

/// One chat-completion round trip with bounded exponential-backoff retries.
/// Returns the assistant content and the number of retries burned.
pub fn chat_complete(
    client: &reqwest::blocking::Client,
    cfg: &EndpointConfig,
    system: &str,
    user: &str,
) -> Result<(String, u32)> {
    let body = json!({
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    });
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));

    let mut retries = 0u32;
    loop {
        let mut request = client.post(&url).json(&body);
        if !cfg.api_key.is_empty() {
            request = request.bearer_auth(&cfg.api_key);
        }
        match request.send().and_then(|r| r.error_for_status()) {
            Ok(response) => {
                let reply: ChatReply =
                    response.json().map_err(|e| Error::Judge(format!("bad reply body: {e}")))?;
                let content = reply
                    .choices
                    .first()
                    .map(|c| c.message.content.clone())
                    .ok_or_else(|| Error::Judge("reply had no choices".into()))?;
                return Ok((content, retries));
            }
            Err(e) => {
                if retries >= cfg.max_retries {
                    return Err(Error::Judge(format!(
                        "endpoint failed after {retries} retries: {e}"
                    )));
                }
                let backoff = cfg.backoff_ms.saturating_mul(1 << retries.min(8));
                log::debug!("chat request failed ({e}); retrying in {backoff} ms");
                std::thread::sleep(Duration::from_millis(backoff));
                retries += 1;
            }
        }
    }
}

/// Pairwise judge backed by a chat-completions endpoint.
pub struct RemoteJudge {
    cfg: EndpointConfig,
    system_template: String,
    user_template: String,
    patterns: VerdictPatterns,
    client: reqwest::blocking::Client,
    retries_total: AtomicU64,
}

impl RemoteJudge {
    pub fn new(cfg: EndpointConfig) -> Result<RemoteJudge> {
        RemoteJudge::with_templates(
            cfg,
            DEFAULT_JUDGE_SYSTEM_TEMPLATE.to_string(),
            DEFAULT_JUDGE_USER_TEMPLATE.to_string(),
            VerdictPatterns::default(),
        )
    }

    pub fn with_templates(
        cfg: EndpointConfig,
        system_template: String,
        user_template: String,
        patterns: VerdictPatterns,
    ) -> Result<RemoteJudge> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Judge(format!("client build failed: {e}")))?;
        Ok(RemoteJudge {
            cfg,
            system_template,
            user_template,
            patterns,
            client,
            retries_total: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn retries_total(&self) -> u64 {
        self.retries_total.load(Ordering::Relaxed)
    }

    fn build_user_message(&self, query: &PairwiseQuery<'_>) -> String {
        let (first, second) = query.presented();
        fill_template(
            &self.user_template,
            &[
                ("question", &query.question.text()),
                ("visual_ground_truth", &query.pseudo_gt.text),
                ("response_a", &first.text),
                ("response_b", &second.text),
            ],
        )
    }

    /// One comparison with retry accounting, for callers that need the
    /// number of retries this call burned.
    pub fn compare_detailed(&self, query: &PairwiseQuery<'_>) -> Result<(Verdict, u32)> {
        let user = self.build_user_message(query);
        let (content, retries) =
            chat_complete(&self.client, &self.cfg, &self.system_template, &user)?;
        self.retries_total.fetch_add(retries as u64, Ordering::Relaxed);
        let stripped = strip_think(&content, &self.cfg.think_open, &self.cfg.think_close);
        let mut verdict = extract_verdict(&stripped, &self.patterns)?;
        verdict.raw_text = Some(content);
        Ok((verdict, retries))
    }
}

impl PairwiseJudge for RemoteJudge {
    fn compare(&self, query: &PairwiseQuery<'_>) -> Result<Verdict> {
        self.compare_detailed(query).map(|(v, _)| v)
    }

    fn name(&self) -> &'static str {
        "remote"
    }

    fn failure_policy(&self) -> FailurePolicy {
        self.cfg.failure_policy
    }

    fn max_in_flight(&self) -> usize {
        self.cfg.max_in_flight.max(1)
    }
}
