//! Reward fusion: combining the visual-fidelity, answer, and format scores
//! into one scalar trajectory reward.
//!
//! Four built-in strategies:
//! - `Vanilla`: weighted answer + format, fidelity ignored.
//! - `VisualGate`: fidelity multiplicatively gates the weighted sum; a
//!   visually unfaithful trajectory earns zero no matter how it answered.
//! - `VisualBonus`: weighted sum plus a bonus when the trajectory is both
//!   correct and visually faithful (unconditional variant behind a flag).
//! - `VisualMix`: convex mix of all three scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    Vanilla,
    VisualGate,
    VisualBonus,
    VisualMix,
}

pub const STRATEGIES: [FusionStrategy; 4] = [
    FusionStrategy::Vanilla,
    FusionStrategy::VisualGate,
    FusionStrategy::VisualBonus,
    FusionStrategy::VisualMix,
];

impl FusionStrategy {
    pub fn slug(self) -> &'static str {
        match self {
            FusionStrategy::Vanilla => "vanilla",
            FusionStrategy::VisualGate => "visual-gate",
            FusionStrategy::VisualBonus => "visual-bonus",
            FusionStrategy::VisualMix => "visual-mix",
        }
    }

    pub fn from_slug(s: &str) -> Result<FusionStrategy> {
        STRATEGIES
            .iter()
            .copied()
            .find(|st| st.slug() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion strategy {s:?}")))
    }
}

/// Fusion strategy and coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    pub answer_weight: f64,
    pub format_weight: f64,
    pub mix_vis_weight: f64,
    pub mix_ans_weight: f64,
    pub mix_fmt_weight: f64,
    pub bonus: f64,
    /// When true (default) the bonus requires answer correctness as well as
    /// visual alignment; when false it is granted on visual alignment alone.
    pub bonus_requires_answer: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            strategy: FusionStrategy::VisualGate,
            answer_weight: 0.9,
            format_weight: 0.1,
            mix_vis_weight: 0.2,
            mix_ans_weight: 0.7,
            mix_fmt_weight: 0.1,
            bonus: 0.5,
            bonus_requires_answer: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("answer_weight", self.answer_weight),
            ("format_weight", self.format_weight),
            ("mix_vis_weight", self.mix_vis_weight),
            ("mix_ans_weight", self.mix_ans_weight),
            ("mix_fmt_weight", self.mix_fmt_weight),
            ("bonus", self.bonus),
        ];
        for (name, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if (self.answer_weight + self.format_weight - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "answer_weight + format_weight must equal 1, got {}",
                self.answer_weight + self.format_weight
            )));
        }
        let mix = self.mix_vis_weight + self.mix_ans_weight + self.mix_fmt_weight;
        if (mix - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mix weights must sum to 1, got {mix}")));
        }
        Ok(())
    }

    pub fn with_strategy(mut self, strategy: FusionStrategy) -> FusionConfig {
        self.strategy = strategy;
        self
    }
}

/// Component scores plus the fused scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub s_vis: u8,
    pub s_ans: u8,
    pub s_fmt: u8,
    pub fused: f64,
}

/// Fuse binary component scores into the scalar reward under `cfg`.
pub fn fuse(s_vis: u8, s_ans: u8, s_fmt: u8, cfg: &FusionConfig) -> f64 {
    debug_assert!(s_vis <= 1 && s_ans <= 1 && s_fmt <= 1);
    let vis = s_vis as f64;
    let ans = s_ans as f64;
    let fmt = s_fmt as f64;
    match cfg.strategy {
        FusionStrategy::Vanilla => cfg.answer_weight * ans + cfg.format_weight * fmt,
        FusionStrategy::VisualGate => vis * (cfg.answer_weight * ans + cfg.format_weight * fmt),
        FusionStrategy::VisualBonus => {
            let eligible = s_vis == 1 && (!cfg.bonus_requires_answer || s_ans == 1);
            let base = cfg.answer_weight * ans + cfg.format_weight * fmt;
            if eligible {
                base + cfg.bonus
            } else {
                base
            }
        }
        FusionStrategy::VisualMix => {
            cfg.mix_vis_weight * vis + cfg.mix_ans_weight * ans + cfg.mix_fmt_weight * fmt
        }
    }
}

/// Convenience wrapper building the full breakdown record.
pub fn breakdown(s_vis: u8, s_ans: u8, s_fmt: u8, cfg: &FusionConfig) -> RewardBreakdown {
    RewardBreakdown { s_vis, s_ans, s_fmt, fused: fuse(s_vis, s_ans, s_fmt, cfg) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> Vec<(u8, u8, u8)> {
        let mut v = Vec::new();
        for s_vis in 0..=1 {
            for s_ans in 0..=1 {
                for s_fmt in 0..=1 {
                    v.push((s_vis, s_ans, s_fmt));
                }
            }
        }
        v
    }

    #[test]
    fn gate_zeroes_unfaithful_trajectories() {
        let cfg = FusionConfig::default();
        assert_eq!(fuse(0, 1, 1, &cfg), 0.0);
        for (s_vis, s_ans, s_fmt) in cube() {
            if s_vis == 0 {
                assert_eq!(fuse(s_vis, s_ans, s_fmt, &cfg), 0.0);
            }
        }
    }

    #[test]
    fn gate_format_only_pays_format_weight() {
        let cfg = FusionConfig::default();
        assert_eq!(fuse(1, 0, 1, &cfg), 0.1);
    }

    #[test]
    fn bonus_pays_on_correct_and_aligned() {
        let cfg = FusionConfig::default().with_strategy(FusionStrategy::VisualBonus);
        assert_eq!(fuse(1, 1, 1, &cfg), 0.9 + 0.1 + 0.5);
        // Aligned but wrong: no bonus under the default condition.
        assert_eq!(fuse(1, 0, 1, &cfg), 0.1);
        let unconditional = FusionConfig {
            bonus_requires_answer: false,
            ..FusionConfig::default().with_strategy(FusionStrategy::VisualBonus)
        };
        assert_eq!(fuse(1, 0, 1, &unconditional), 0.1 + 0.5);
    }

    #[test]
    fn mix_weights_components() {
        let cfg = FusionConfig::default().with_strategy(FusionStrategy::VisualMix);
        assert_eq!(fuse(1, 0, 1, &cfg), 0.2 + 0.1);
        assert!((fuse(1, 0, 1, &cfg) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn all_zero_scores_fuse_to_zero() {
        for strategy in STRATEGIES {
            let cfg = FusionConfig::default().with_strategy(strategy);
            assert_eq!(fuse(0, 0, 0, &cfg), 0.0);
        }
    }

    #[test]
    fn vanilla_ignores_visual_score() {
        let cfg = FusionConfig::default().with_strategy(FusionStrategy::Vanilla);
        for (_, s_ans, s_fmt) in cube() {
            assert_eq!(fuse(0, s_ans, s_fmt, &cfg), fuse(1, s_ans, s_fmt, &cfg));
        }
    }

    #[test]
    fn fused_reward_monotone_in_each_component() {
        for strategy in STRATEGIES {
            let cfg = FusionConfig::default().with_strategy(strategy);
            for (s_vis, s_ans, s_fmt) in cube() {
                let base = fuse(s_vis, s_ans, s_fmt, &cfg);
                if s_vis == 0 {
                    assert!(fuse(1, s_ans, s_fmt, &cfg) >= base);
                }
                if s_ans == 0 {
                    assert!(fuse(s_vis, 1, s_fmt, &cfg) >= base);
                }
                if s_fmt == 0 {
                    assert!(fuse(s_vis, s_ans, 1, &cfg) >= base);
                }
            }
        }
    }

    #[test]
    fn fused_rewards_respect_bounds() {
        for strategy in STRATEGIES {
            let cfg = FusionConfig::default().with_strategy(strategy);
            for (s_vis, s_ans, s_fmt) in cube() {
                let r = fuse(s_vis, s_ans, s_fmt, &cfg);
                assert!(r >= 0.0);
                match strategy {
                    FusionStrategy::VisualBonus => assert!(r <= 1.0 + cfg.bonus + 1e-12),
                    _ => assert!(r <= 1.0 + 1e-12),
                }
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = FusionConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.answer_weight = 0.8;
        assert!(cfg.validate().is_err());
        let mut cfg = FusionConfig::default();
        cfg.mix_ans_weight = 0.9;
        assert!(cfg.validate().is_err());
        let mut cfg = FusionConfig::default();
        cfg.bonus = -0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn strategy_slugs_round_trip() {
        for s in STRATEGIES {
            assert_eq!(FusionStrategy::from_slug(s.slug()).unwrap(), s);
        }
        assert!(FusionStrategy::from_slug("nope").is_err());
    }
}
