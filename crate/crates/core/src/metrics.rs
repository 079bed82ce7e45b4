//! Per-utterance outcomes and campaign aggregates: absolute frame
//! statistics, increments over clean, attack success rate, and the
//! deterministic compute proxy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackOutcome, Norm, Perturbation};
use crate::perturb::Edit;
use crate::victims::Evaluation;

/// Method label reserved for unattacked evaluations; its aggregate row
/// carries no increments or success rate.
pub const CLEAN_METHOD: &str = "clean";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty outcome set")]
    Empty,
    #[error("clean aggregate is zero; increments are undefined")]
    ZeroCleanAggregate,
}

/// An attack succeeds when the adversarial output is at least 20%
/// longer than the clean output (inclusive boundary). Implemented in
/// integer arithmetic so `adv = 1.2 * clean` is exact.
pub fn is_success(clean_frames: u64, adv_frames: u64) -> bool {
    5 * adv_frames as u128 >= 6 * clean_frames as u128
}

/// Deterministic inference-cost proxy of a forward pass (closed-form
/// multiply-accumulate count; no instrumentation).
pub fn compute_proxy(eval: &Evaluation) -> u64 {
    eval.mac_count
}

/// Compact perturbation record kept with each outcome: the norm value
/// for speaker attacks, the edit list for text attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PerturbationSummary {
    None,
    Speaker { norm: Norm, magnitude: f64 },
    Text { text: String, edits: Vec<Edit> },
}

/// One utterance under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceOutcome {
    pub utterance_id: String,
    pub method: String,
    pub clean_frames: u64,
    pub adv_frames: u64,
    pub success: bool,
    /// Wall time of the reported adversarial forward pass (monotonic
    /// clock). Excluded from serialized records so reruns of the same
    /// seed emit byte-identical outcome streams; the emitter writes
    /// timings to a sidecar instead.
    #[serde(skip_serializing, default)]
    pub wall_time_ms: f64,
    pub mac_count: u64,
    pub perturbation: PerturbationSummary,
}

impl UtteranceOutcome {
    pub fn from_attack(
        utterance_id: impl Into<String>,
        method: impl Into<String>,
        outcome: &AttackOutcome,
    ) -> Self {
        let perturbation = match &outcome.perturbation {
            Perturbation::None => PerturbationSummary::None,
            Perturbation::Speaker {
                norm, magnitude, ..
            } => PerturbationSummary::Speaker {
                norm: *norm,
                magnitude: *magnitude,
            },
            Perturbation::Text { text, edits } => PerturbationSummary::Text {
                text: text.clone(),
                edits: edits.clone(),
            },
        };
        Self {
            utterance_id: utterance_id.into(),
            method: method.into(),
            clean_frames: outcome.clean.frames,
            adv_frames: outcome.adv.frames,
            success: is_success(outcome.clean.frames, outcome.adv.frames),
            wall_time_ms: outcome.adv.forward_ms,
            mac_count: outcome.adv.mac_count,
            perturbation,
        }
    }
}

/// Mean and max of a frame distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameAggregate {
    pub mean: f64,
    pub max: f64,
}

/// Increment columns: `mean_adv/mean_clean - 1` and
/// `max_adv/max_clean - 1`.
pub fn increments(
    clean: FrameAggregate,
    adv: FrameAggregate,
) -> Result<(f64, f64), MetricsError> {
    if clean.mean <= 0.0 || clean.max <= 0.0 {
        return Err(MetricsError::ZeroCleanAggregate);
    }
    Ok((adv.mean / clean.mean - 1.0, adv.max / clean.max - 1.0))
}

/// Percentage of successfully attacked outcomes.
pub fn asr(outcomes: &[UtteranceOutcome]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = outcomes.iter().filter(|o| o.success).count();
    Ok(100.0 * hits as f64 / outcomes.len() as f64)
}

/// Per-method summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignAggregate {
    pub method: String,
    pub mean_absolute: f64,
    pub max_absolute: u64,
    /// None for the clean method (increments are relative to clean).
    pub mean_incre: Option<f64>,
    pub max_incre: Option<f64>,
    pub asr_percent: Option<f64>,
    pub mean_time_ms: f64,
    pub mean_macs: f64,
}

/// Groups outcomes by method and computes every aggregate column.
/// Output rows are sorted by method label.
pub fn aggregate(outcomes: &[UtteranceOutcome]) -> Result<Vec<CampaignAggregate>, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut by_method: BTreeMap<&str, Vec<&UtteranceOutcome>> = BTreeMap::new();
    for outcome in outcomes {
        by_method.entry(&outcome.method).or_default().push(outcome);
    }
    let mut rows = Vec::with_capacity(by_method.len());
    for (method, group) in by_method {
        let n = group.len() as f64;
        let mean_absolute = group.iter().map(|o| o.adv_frames as f64).sum::<f64>() / n;
        let max_absolute = group.iter().map(|o| o.adv_frames).max().expect("nonempty");
        let mean_time_ms = group.iter().map(|o| o.wall_time_ms).sum::<f64>() / n;
        let mean_macs = group.iter().map(|o| o.mac_count as f64).sum::<f64>() / n;
        let (mean_incre, max_incre, asr_percent) = if method == CLEAN_METHOD {
            (None, None, None)
        } else {
            let clean = FrameAggregate {
                mean: group.iter().map(|o| o.clean_frames as f64).sum::<f64>() / n,
                max: group.iter().map(|o| o.clean_frames).max().expect("nonempty") as f64,
            };
            let adv = FrameAggregate {
                mean: mean_absolute,
                max: max_absolute as f64,
            };
            let (mean_incre, max_incre) = increments(clean, adv)?;
            let hits = group.iter().filter(|o| o.success).count();
            (
                Some(mean_incre),
                Some(max_incre),
                Some(100.0 * hits as f64 / n),
            )
        };
        rows.push(CampaignAggregate {
            method: method.to_string(),
            mean_absolute,
            max_absolute,
            mean_incre,
            max_incre,
            asr_percent,
            mean_time_ms,
            mean_macs,
        });
    }
    Ok(rows)
}
