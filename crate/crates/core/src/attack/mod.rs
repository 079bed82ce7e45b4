//! The attack procedures: projected-gradient speaker perturbation
//! (l2/linf), gradient-guided text perturbation with beam search, and
//! the two non-optimizing baselines.

mod speaker;
mod text;

pub use speaker::{attack_speaker, baseline_speaker_gaussian, norm_value, pgd_step, project};
pub use text::{
    attack_text, baseline_text_attack, baseline_text_random, rank_replacements,
    replacement_increment, ScoredEdit,
};

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::{Edit, PerturbError};
use crate::victims::{Evaluation, TokenId, Victim, VictimError};

/// Default perturbation budget for the l2 ball (speaker embeddings are
/// unit norm at generation time). Sized so random draws in the ball
/// rarely slow the victim while the optimized direction can.
pub const DEFAULT_EPS_L2: f64 = 0.5;
/// Default perturbation budget for the linf ball.
pub const DEFAULT_EPS_LINF: f64 = 0.1;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient at iteration {iteration}; attack aborted")]
    NonFiniteGradient { iteration: u32 },
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

/// Projection norm for speaker perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl Norm {
    pub fn default_eps(self) -> f64 {
        match self {
            Norm::L2 => DEFAULT_EPS_L2,
            Norm::Linf => DEFAULT_EPS_LINF,
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

impl std::str::FromStr for Norm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            other => Err(format!("unknown norm {other:?} (expected l2 or linf)")),
        }
    }
}

/// Shared knobs for all four attack procedures.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub iterations: u32,
    pub beam: usize,
    pub alpha: f64,
    pub eps: f64,
    pub norm: Norm,
    pub ratio: f64,
    pub candidates_per_strategy: usize,
    pub target_y: f64,
    pub seed: u64,
}

impl AttackConfig {
    pub fn for_norm(norm: Norm) -> Self {
        Self {
            iterations: 100,
            beam: 3,
            alpha: 0.1,
            eps: norm.default_eps(),
            norm,
            ratio: 0.05,
            candidates_per_strategy: 100,
            target_y: 0.0,
            seed: 42,
        }
    }

    /// Full invariants for user-supplied configs.
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.iterations < 1 {
            return Err(AttackError::InvalidConfig(
                "iterations must be at least 1".to_string(),
            ));
        }
        self.validate_loose()
    }

    /// Invariants minus the iteration floor; the attack procedures
    /// accept `iterations = 0` as the identity attack.
    pub(crate) fn validate_loose(&self) -> Result<(), AttackError> {
        let checks = [
            (self.beam >= 1, "beam must be at least 1"),
            (self.alpha > 0.0, "alpha must be positive"),
            (self.eps > 0.0, "eps must be positive"),
            (
                self.ratio > 0.0 && self.ratio <= 1.0,
                "ratio must be in (0, 1]",
            ),
            (
                self.candidates_per_strategy >= 1,
                "candidates_per_strategy must be at least 1",
            ),
            (
                self.target_y == 0.0 || self.target_y == 1.0,
                "target_y must be 0 or 1",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(AttackError::InvalidConfig(msg.to_string()));
            }
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::for_norm(Norm::L2)
    }
}

/// One measured forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub frames: u64,
    pub loss: f64,
    pub mac_count: u64,
    /// Wall time of this forward pass only (monotonic clock); reported,
    /// never asserted on.
    pub forward_ms: f64,
}

impl EvalRecord {
    fn from_eval(eval: &Evaluation, forward_ms: f64) -> Self {
        Self {
            frames: eval.frames,
            loss: eval.loss,
            mac_count: eval.mac_count,
            forward_ms,
        }
    }
}

/// What the attack changed about the input.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    None,
    Speaker {
        delta: Vec<f64>,
        norm: Norm,
        magnitude: f64,
    },
    Text {
        text: String,
        edits: Vec<Edit>,
    },
}

/// Result of one attack run on one utterance.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub clean: EvalRecord,
    pub adv: EvalRecord,
    pub perturbation: Perturbation,
    /// Loss at each evaluated iterate, starting from the clean input.
    pub loss_trace: Vec<f64>,
    pub iterations_run: u32,
}

/// Graph-free forward pass with its wall time in milliseconds.
pub fn timed_evaluate(
    victim: &Victim,
    ids: &[TokenId],
    speaker: &[f64],
    target_y: f64,
) -> Result<(Evaluation, f64), VictimError> {
    let start = Instant::now();
    let eval = victim.evaluate(ids, speaker, target_y)?;
    Ok((eval, start.elapsed().as_secs_f64() * 1e3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_norm() {
        let l2 = AttackConfig::for_norm(Norm::L2);
        assert_eq!(l2.eps, DEFAULT_EPS_L2);
        let linf = AttackConfig::for_norm(Norm::Linf);
        assert_eq!(linf.eps, DEFAULT_EPS_LINF);
        assert_eq!(l2.iterations, 100);
        assert_eq!(l2.beam, 3);
        assert_eq!(l2.alpha, 0.1);
        assert_eq!(l2.ratio, 0.05);
        assert_eq!(l2.candidates_per_strategy, 100);
        assert_eq!(l2.target_y, 0.0);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = AttackConfig::default();
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        cfg = AttackConfig::default();
        cfg.ratio = 0.0;
        assert!(cfg.validate().is_err());
        cfg = AttackConfig::default();
        cfg.ratio = 1.5;
        assert!(cfg.validate().is_err());
        cfg = AttackConfig::default();
        cfg.target_y = 0.5;
        assert!(cfg.validate().is_err());
        cfg = AttackConfig::default();
        cfg.eps = -1.0;
        assert!(cfg.validate().is_err());
    }
}
