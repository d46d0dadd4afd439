//! Run configuration: one TOML file driving every command.
//!
//! Cross-field invariants are checked at load. Secrets are never stored in
//! the file: the judge's `api_key` and `base_url` accept `${ENV_VAR}`
//! interpolation, and the `JUDGE_API_KEY` / `JUDGE_BASE_URL` environment
//! variables override whatever the file says.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curation::{DomainSpec, FilterConfig};
use crate::error::{Error, Result};
use crate::grpo::TrainConfig;
use crate::judge::{
    EndpointConfig, OracleJudge, PairwiseJudge, RemoteJudge, VerdictPatterns,
    DEFAULT_SLOT_A_PATTERN, DEFAULT_SLOT_B_PATTERN,
};
use crate::judge::remote::{DEFAULT_JUDGE_SYSTEM_TEMPLATE, DEFAULT_JUDGE_USER_TEMPLATE};
use crate::reward::{FusionConfig, FusionStrategy};
use crate::scene::SceneConfig;
use crate::trajectory::Vocab;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { out_dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSection {
    pub grid_size: u8,
    pub max_objects: u8,
    pub domains: Vec<String>,
    /// Candidate samples generated per domain before balancing.
    pub pool_size: usize,
    /// Samples drawn per domain by balanced sampling.
    pub per_domain_n: usize,
    pub holdout_size: usize,
    /// Pseudo-ground-truth corruption probability; 0 = exact captions.
    pub caption_noise: f64,
    /// "oracle" or "remote".
    pub captioner: String,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            grid_size: 3,
            max_objects: 3,
            domains: vec![
                "counting".into(),
                "attributes".into(),
                "comparison".into(),
                "spatial".into(),
            ],
            pool_size: 48,
            per_domain_n: 32,
            holdout_size: 32,
            caption_noise: 0.0,
            captioner: "oracle".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceSection {
    pub best_of_n: usize,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection { best_of_n: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeMode {
    Oracle,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeSection {
    pub mode: JudgeMode,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    /// Optional template override files with the named placeholders.
    pub system_template_path: Option<PathBuf>,
    pub user_template_path: Option<PathBuf>,
    pub caption_template_path: Option<PathBuf>,
    pub slot_a_pattern: String,
    pub slot_b_pattern: String,
}

impl Default for JudgeSection {
    fn default() -> Self {
        JudgeSection {
            mode: JudgeMode::Oracle,
            endpoint: EndpointConfig::default(),
            system_template_path: None,
            user_template_path: None,
            caption_template_path: None,
            slot_a_pattern: DEFAULT_SLOT_A_PATTERN.into(),
            slot_b_pattern: DEFAULT_SLOT_B_PATTERN.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub scene: SceneSection,
    pub filter: FilterConfig,
    pub reference: ReferenceSection,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub judge: JudgeSection,
}

/// Replace `${NAME}` with the value of environment variable NAME (empty when
/// unset). Only secret-bearing fields are passed through this.
fn interpolate_env(s: &str) -> String {
    let mut out = String::new();
    let mut rest = s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        match rest[start + 2..].find('}') {
            Some(end) => {
                let name = &rest[start + 2..start + 2 + end];
                out.push_str(&std::env::var(name).unwrap_or_default());
                rest = &rest[start + 2 + end + 1..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.resolve_env();
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_env(&mut self) {
        self.judge.endpoint.api_key = interpolate_env(&self.judge.endpoint.api_key);
        self.judge.endpoint.base_url = interpolate_env(&self.judge.endpoint.base_url);
        if let Ok(url) = std::env::var("JUDGE_BASE_URL") {
            if !url.is_empty() {
                self.judge.endpoint.base_url = url;
            }
        }
        if let Ok(key) = std::env::var("JUDGE_API_KEY") {
            if !key.is_empty() {
                self.judge.endpoint.api_key = key;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_config().validate()?;
        self.domain_specs()?;
        if self.scene.pool_size == 0 || self.scene.per_domain_n == 0 {
            return Err(Error::Config("pool_size and per_domain_n must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.scene.caption_noise) {
            return Err(Error::Config("caption_noise must be in [0,1]".into()));
        }
        if self.scene.captioner != "oracle" && self.scene.captioner != "remote" {
            return Err(Error::Config(format!(
                "captioner must be \"oracle\" or \"remote\", got {:?}",
                self.scene.captioner
            )));
        }
        self.filter.validate()?;
        if self.reference.best_of_n == 0 {
            return Err(Error::Config("best_of_n must be >= 1".into()));
        }
        self.fusion.validate()?;
        self.train.validate()?;
        VerdictPatterns::new(&self.judge.slot_a_pattern, &self.judge.slot_b_pattern)?;
        if self.judge.mode == JudgeMode::Remote && self.judge.endpoint.base_url.is_empty() {
            return Err(Error::Config(
                "remote judge needs base_url (config or JUDGE_BASE_URL)".into(),
            ));
        }
        Ok(())
    }

    /// CLI-level overrides, applied after load.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        strategy: Option<&str>,
        judge: Option<&str>,
    ) -> Result<()> {
        if let Some(seed) = seed {
            self.seed = seed;
            self.train.seed = seed;
        }
        if let Some(strategy) = strategy {
            self.fusion.strategy = FusionStrategy::from_slug(strategy)?;
        }
        if let Some(judge) = judge {
            self.judge.mode = match judge {
                "oracle" => JudgeMode::Oracle,
                "remote" => JudgeMode::Remote,
                other => {
                    return Err(Error::Config(format!(
                        "judge must be \"oracle\" or \"remote\", got {other:?}"
                    )))
                }
            };
        }
        self.validate()
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig { grid_size: self.scene.grid_size, max_objects: self.scene.max_objects }
    }

    pub fn domain_specs(&self) -> Result<Vec<DomainSpec>> {
        self.scene.domains.iter().map(|n| DomainSpec::from_name(n)).collect()
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.scene.max_objects)
    }

    fn read_template(&self, path: &Option<PathBuf>, fallback: &str) -> Result<String> {
        match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read template {}: {e}", p.display()))),
            None => Ok(fallback.to_string()),
        }
    }

    /// Construct the configured judge.
    pub fn build_judge(&self) -> Result<Box<dyn PairwiseJudge>> {
        match self.judge.mode {
            JudgeMode::Oracle => Ok(Box::new(OracleJudge::new())),
            JudgeMode::Remote => {
                let system = self
                    .read_template(&self.judge.system_template_path, DEFAULT_JUDGE_SYSTEM_TEMPLATE)?;
                let user =
                    self.read_template(&self.judge.user_template_path, DEFAULT_JUDGE_USER_TEMPLATE)?;
                let patterns =
                    VerdictPatterns::new(&self.judge.slot_a_pattern, &self.judge.slot_b_pattern)?;
                Ok(Box::new(RemoteJudge::with_templates(
                    self.judge.endpoint.clone(),
                    system,
                    user,
                    patterns,
                )?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_loads_with_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.scene.max_objects, 3);
        assert_eq!(cfg.fusion.strategy, FusionStrategy::VisualGate);
        assert_eq!(cfg.judge.mode, JudgeMode::Oracle);
    }

    #[test]
    fn bad_mix_weights_rejected_at_load() {
        let text = r#"
seed = 1
[fusion]
strategy = "visual-mix"
mix_vis_weight = 0.5
mix_ans_weight = 0.7
mix_fmt_weight = 0.1
"#;
        let err = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_domain_rejected_at_load() {
        let text = "seed = 1\n[scene]\ndomains = [\"clevr\"]\n";
        assert!(RunConfig::from_toml(text).is_err());
    }

    #[test]
    fn env_interpolation_fills_secrets() {
        std::env::set_var("FACTGATE_TEST_KEY", "sk-test");
        let text = "seed = 1\n[judge]\napi_key = \"${FACTGATE_TEST_KEY}\"\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.judge.endpoint.api_key, "sk-test");
        std::env::remove_var("FACTGATE_TEST_KEY");
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut cfg = RunConfig::from_toml("seed = 1\n").unwrap();
        cfg.apply_overrides(Some(9), Some("vanilla"), Some("oracle")).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.fusion.strategy, FusionStrategy::Vanilla);
        assert!(cfg.apply_overrides(None, Some("nope"), None).is_err());
    }

    #[test]
    fn grid_capacity_checked() {
        let text = "seed = 1\n[scene]\ngrid_size = 2\nmax_objects = 5\n";
        assert!(RunConfig::from_toml(text).is_err());
    }
}
