//! Library behind the `drawl` binary: config resolution, campaign
//! orchestration, victim generation, and report rendering. The binary
//! is a thin argument-parsing wrapper so integration tests can drive
//! campaigns in-process.

pub mod campaign;
pub mod config;
pub mod gen;
pub mod reporting;

use thiserror::Error;

pub use campaign::{run_campaign, CampaignResult};
pub use config::{AttackOverrides, CampaignConfig, ConfigFile, Method, DEFAULT_SEED};
pub use gen::{generate_victim, summary_line, GenSummary, GenVictimConfig, CALIBRATION_BAND};

/// Exit-code contract: 0 success, 1 usage/config error, 2 runtime or
/// attack error.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

/// Runs the gradient self-checks and renders the result; `Err` carries
/// the failing report.
pub fn gradcheck(seed: u64) -> Result<String, CliError> {
    let report = drawl_core::gradcheck::run(seed)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("gradcheck could not run: {e}")))?;
    let rendered = format!(
        "tape graphs        max rel err {:.3e}\n\
         ar victim speaker  max rel err {:.3e}\n\
         ar victim text     max rel err {:.3e}\n\
         nar victim speaker max rel err {:.3e}\n\
         nar victim text    max rel err {:.3e}\n\
         tolerance {:.0e}: {}\n",
        report.tensor_max_rel,
        report.ar_speaker_max_rel,
        report.ar_text_max_rel,
        report.nar_speaker_max_rel,
        report.nar_text_max_rel,
        drawl_core::gradcheck::TOLERANCE,
        if report.passed() { "pass" } else { "FAIL" }
    );
    if report.passed() {
        Ok(rendered)
    } else {
        Err(CliError::Runtime(anyhow::anyhow!(
            "gradient check failed:\n{rendered}"
        )))
    }
}
