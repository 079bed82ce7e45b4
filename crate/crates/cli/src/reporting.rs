//! The report subcommand: reload outcome files from one or more run
//! directories, recompute aggregates, and print a per-method table.

use std::path::{Path, PathBuf};

use drawl_core::metrics::{aggregate, CampaignAggregate, UtteranceOutcome};
use drawl_core::report::{read_manifest, read_outcomes, RunManifest, MANIFEST_FILE, OUTCOMES_FILE};

use crate::CliError;

/// Manifest fields that must agree before outcome files may be pooled;
/// merging runs against different victims, corpora, seeds, or attack
/// settings would produce a meaningless table.
fn compat_key(manifest: &RunManifest) -> impl PartialEq + std::fmt::Debug {
    (
        manifest.victim_fingerprint.clone(),
        manifest.corpus.clone(),
        manifest.seed,
        manifest.iterations,
        manifest.beam,
        manifest.alpha,
        (
            manifest.eps_l2.to_bits(),
            manifest.eps_linf.to_bits(),
            manifest.ratio.to_bits(),
        ),
        manifest.candidates_per_strategy,
        manifest.limit,
    )
}

/// Loads and pools outcomes from run directories, refusing mixed
/// manifests.
pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<UtteranceOutcome>, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("no run directories given".to_string()));
    }
    let mut reference: Option<(PathBuf, RunManifest)> = None;
    let mut outcomes = Vec::new();
    for dir in dirs {
        let manifest = read_manifest(&dir.join(MANIFEST_FILE))
            .map_err(|e| CliError::Config(format!("reading manifest in {}: {e}", dir.display())))?;
        if let Some((first_dir, first)) = &reference {
            if compat_key(first) != compat_key(&manifest) {
                return Err(CliError::Config(format!(
                    "refusing to merge {} with {}: manifests disagree on victim, corpus, seed, or attack settings",
                    first_dir.display(),
                    dir.display()
                )));
            }
        } else {
            reference = Some((dir.clone(), manifest));
        }
        let mut run = read_outcomes(&dir.join(OUTCOMES_FILE))
            .map_err(|e| CliError::Config(format!("reading outcomes in {}: {e}", dir.display())))?;
        outcomes.append(&mut run);
    }
    outcomes.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then_with(|| a.utterance_id.cmp(&b.utterance_id))
    });
    Ok(outcomes)
}

fn cell(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(x) => format!("{x:.precision$}"),
        None => "-".to_string(),
    }
}

/// Renders the per-method table.
pub fn render_table(rows: &[CampaignAggregate]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>14} {:>12} {:>11} {:>10} {:>8}\n",
        "method", "mean_absolute", "max_absolute", "mean_incre", "max_incre", "asr"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:<14} {:>14.1} {:>12} {:>11} {:>10} {:>8}\n",
            row.method,
            row.mean_absolute,
            row.max_absolute,
            cell(row.mean_incre, 3),
            cell(row.max_incre, 3),
            cell(row.asr_percent, 1),
        ));
    }
    out
}

/// Full report command: pool runs, recompute aggregates, render.
pub fn report(dirs: &[PathBuf]) -> Result<String, CliError> {
    let outcomes = load_runs(dirs)?;
    let rows = aggregate(&outcomes)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("aggregating outcomes: {e}")))?;
    Ok(render_table(&rows))
}

/// Recomputed aggregates for consistency checks against emitted files.
pub fn recompute(dir: &Path) -> Result<Vec<CampaignAggregate>, CliError> {
    let outcomes = read_outcomes(&dir.join(OUTCOMES_FILE))
        .map_err(|e| CliError::Config(format!("reading outcomes in {}: {e}", dir.display())))?;
    aggregate(&outcomes).map_err(|e| CliError::Runtime(anyhow::anyhow!("aggregating: {e}")))
}
