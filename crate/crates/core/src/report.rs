//! Output serialization and Gaussian KDE curves.
//!
//! A run directory holds: `outcomes.jsonl` (one record per
//! utterance x method, reproducible byte for byte for a fixed seed),
//! `timings.csv` (the wall-time sidecar, inherently nondeterministic),
//! `aggregates.csv`, `kde.csv`, and `manifest.json` (effective config,
//! seeds, victim fingerprint). CSV numbers use '.' decimals and Rust's
//! shortest round-trip float formatting, so parsed values equal the
//! in-memory values exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{CampaignAggregate, UtteranceOutcome};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {detail}")]
    Malformed {
        path: String,
        line: usize,
        detail: String,
    },
}

/// Gaussian kernel density curve over an ascending frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

/// Silverman's rule of thumb:
/// `0.9 * min(std, IQR / 1.34) * n^(-1/5)`, with sample std (n-1
/// denominator) and linear-interpolation quartiles.
///
/// Falls back to 1.0 for a single sample or when every value is equal.
/// A zero IQR with nonzero std (over half the sample at one point,
/// which attack frame counts capped at max_steps produce routinely)
/// uses the std alone: a unit bandwidth on data spread over hundreds
/// of thousands of frames would put all kernel mass between grid
/// points.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "bandwidth of an empty sample");
    let n = values.len();
    if n == 1 {
        return 1.0;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let std = var.sqrt();

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);

    let candidates = [std, iqr / 1.34];
    let spread = candidates
        .into_iter()
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !spread.is_finite() {
        return 1.0;
    }
    0.9 * spread * nf.powf(-0.2)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = (sorted.len() - 1) as f64 * p;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    sorted[lo] + (idx - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Evaluates the Gaussian KDE `(1/(n h)) sum_i phi((x - v_i)/h)` on the
/// given grid.
pub fn gaussian_kde(values: &[f64], grid: &[f64], bandwidth: f64) -> KdeCurve {
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    assert!(!values.is_empty(), "kde of an empty sample");
    assert!(
        grid.windows(2).all(|w| w[0] < w[1]),
        "grid must be strictly ascending"
    );
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            for &v in values {
                let u = (x - v) / bandwidth;
                acc += (-0.5 * u * u).exp();
            }
            norm * acc
        })
        .collect();
    KdeCurve {
        grid: grid.to_vec(),
        density,
        bandwidth,
    }
}

/// 512-point uniform grid spanning `[min - 4h, max + 4h]`, which covers
/// essentially all kernel mass.
pub fn default_grid(values: &[f64], bandwidth: f64) -> Vec<f64> {
    let points = 512;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min - 4.0 * bandwidth;
    let hi = max + 4.0 * bandwidth;
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

/// Silverman bandwidth plus the default grid in one call.
pub fn default_curve(values: &[f64]) -> KdeCurve {
    let h = silverman_bandwidth(values);
    let grid = default_grid(values, h);
    gaussian_kde(values, &grid, h)
}

/// Trapezoidal integral of a curve over its grid.
pub fn trapezoid_mass(curve: &KdeCurve) -> f64 {
    curve
        .grid
        .windows(2)
        .zip(curve.density.windows(2))
        .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
        .sum()
}

/// Everything needed to reproduce a run byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub seed: u64,
    pub corpus: String,
    pub victim_path: String,
    pub victim_kind: String,
    pub victim_fingerprint: String,
    pub methods: Vec<String>,
    pub iterations: u32,
    pub beam: usize,
    pub alpha: f64,
    pub eps_l2: f64,
    pub eps_linf: f64,
    pub baseline_norm: String,
    pub ratio: f64,
    pub candidates_per_strategy: usize,
    pub target_y: f64,
    pub limit: Option<usize>,
    pub jobs: usize,
    pub utterances_attacked: usize,
    pub skipped: Vec<SkippedUtterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedUtterance {
    pub id: String,
    pub reason: String,
}

/// File names inside a run directory.
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const KDE_FILE: &str = "kde.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the full run directory. Outcomes must already be in their
/// deterministic order (sorted by method, then utterance id).
pub fn emit(
    dir: &Path,
    outcomes: &[UtteranceOutcome],
    aggregates: &[CampaignAggregate],
    kdes: &[(String, KdeCurve)],
    manifest: &RunManifest,
) -> Result<PathBuf, ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Write {
        path: dir.display().to_string(),
        source,
    })?;

    let mut lines = String::new();
    for outcome in outcomes {
        lines.push_str(&serde_json::to_string(outcome).expect("outcome serializes"));
        lines.push('\n');
    }
    write_file(&dir.join(OUTCOMES_FILE), &lines)?;

    let mut timings = String::from("method,utterance_id,wall_time_ms\n");
    for outcome in outcomes {
        writeln!(
            timings,
            "{},{},{}",
            outcome.method, outcome.utterance_id, outcome.wall_time_ms
        )
        .expect("string write");
    }
    write_file(&dir.join(TIMINGS_FILE), &timings)?;

    let mut agg = String::from(
        "method,mean_absolute,max_absolute,mean_incre,max_incre,asr,mean_time_ms,mean_macs\n",
    );
    for row in aggregates {
        writeln!(
            agg,
            "{},{},{},{},{},{},{},{}",
            row.method,
            row.mean_absolute,
            row.max_absolute,
            opt(row.mean_incre),
            opt(row.max_incre),
            opt(row.asr_percent),
            row.mean_time_ms,
            row.mean_macs
        )
        .expect("string write");
    }
    write_file(&dir.join(AGGREGATES_FILE), &agg)?;

    let mut kde = String::from("method,x,density\n");
    for (method, curve) in kdes {
        for (x, d) in curve.grid.iter().zip(&curve.density) {
            writeln!(kde, "{},{},{}", method, x, d).expect("string write");
        }
    }
    write_file(&dir.join(KDE_FILE), &kde)?;

    let manifest_json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), &manifest_json)?;
    Ok(dir.to_path_buf())
}

/// Parses an `outcomes.jsonl` file back into records (wall times come
/// back as zero; they live in the sidecar).
pub fn read_outcomes(path: &Path) -> Result<Vec<UtteranceOutcome>, ReportError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ReportError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut outcomes = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let outcome: UtteranceOutcome =
            serde_json::from_str(line).map_err(|e| ReportError::Malformed {
                path: path.display().to_string(),
                line: idx + 1,
                detail: e.to_string(),
            })?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Parses an `aggregates.csv` file.
pub fn read_aggregates(path: &Path) -> Result<Vec<CampaignAggregate>, ReportError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ReportError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let malformed = |detail: &str| ReportError::Malformed {
            path: path.display().to_string(),
            line: idx + 1,
            detail: detail.to_string(),
        };
        if fields.len() != 8 {
            return Err(malformed("expected 8 fields"));
        }
        let parse = |s: &str| -> Result<f64, ReportError> {
            s.parse::<f64>().map_err(|e| malformed(&e.to_string()))
        };
        let parse_opt = |s: &str| -> Result<Option<f64>, ReportError> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse(s).map(Some)
            }
        };
        rows.push(CampaignAggregate {
            method: fields[0].to_string(),
            mean_absolute: parse(fields[1])?,
            max_absolute: fields[2]
                .parse::<u64>()
                .map_err(|e| malformed(&e.to_string()))?,
            mean_incre: parse_opt(fields[3])?,
            max_incre: parse_opt(fields[4])?,
            asr_percent: parse_opt(fields[5])?,
            mean_time_ms: parse(fields[6])?,
            mean_macs: parse(fields[7])?,
        });
    }
    Ok(rows)
}

/// Parses a manifest back.
pub fn read_manifest(path: &Path) -> Result<RunManifest, ReportError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ReportError::Read {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&raw).map_err(|e| ReportError::Malformed {
        path: path.display().to_string(),
        line: 0,
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PerturbationSummary;

    const PEAK: f64 = 0.3989422804014327; // 1/sqrt(2*pi)
    const PHI_ONE: f64 = 0.24197072451914337; // phi(1)

    #[test]
    fn bandwidth_fallbacks() {
        assert_eq!(silverman_bandwidth(&[5.0]), 1.0);
        assert_eq!(silverman_bandwidth(&[2.0, 2.0, 2.0]), 1.0);
    }

    #[test]
    fn zero_iqr_with_spread_uses_the_std() {
        // More than half the sample at one point: IQR is zero but the
        // distribution is wide, so the bandwidth must follow the std.
        let values = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 100_000.0, 200_000.0];
        let h = silverman_bandwidth(&values);
        assert!(h > 1_000.0, "h = {h}");
        let curve = default_curve(&values);
        assert!(trapezoid_mass(&curve) >= 0.97);
    }

    #[test]
    fn bandwidth_matches_the_reference_computation() {
        // Frozen from an independent computation with sample std
        // (n-1 denominator) and linear-interpolation quartiles:
        // min(3.0276503540974917, 4.5/1.34) * 0.9 * 10^(-1/5).
        let values: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let h = silverman_bandwidth(&values);
        assert!((h - 1.719286404692283).abs() <= 1e-9, "h = {h}");
    }

    #[test]
    fn single_kernel_peaks_at_the_point() {
        let curve = gaussian_kde(&[0.0], &[0.0], 1.0);
        assert!((curve.density[0] - PEAK).abs() < 1e-5);
    }

    #[test]
    fn symmetric_pair_evaluates_to_phi_one_at_zero() {
        let curve = gaussian_kde(&[-1.0, 1.0], &[0.0], 1.0);
        assert!((curve.density[0] - PHI_ONE).abs() < 1e-5);
    }

    #[test]
    fn default_grid_captures_nearly_all_mass() {
        let values = vec![10.0, 12.0, 15.0, 30.0, 31.0, 55.0, 80.0];
        let curve = default_curve(&values);
        let mass = trapezoid_mass(&curve);
        assert!(mass >= 0.97 && mass <= 1.0 + 1e-9, "mass = {mass}");
    }

    #[test]
    fn mirrored_values_give_mirrored_densities() {
        let values = vec![1.0, 2.0, 5.0, 9.0];
        let h = 1.7;
        let grid: Vec<f64> = (0..64).map(|i| -2.0 + 0.25 * i as f64).collect();
        let forward = gaussian_kde(&values, &grid, h);

        let neg_values: Vec<f64> = values.iter().map(|v| -v).collect();
        let neg_grid: Vec<f64> = grid.iter().rev().map(|x| -x).collect();
        let mirrored = gaussian_kde(&neg_values, &neg_grid, h);

        for (a, b) in forward
            .density
            .iter()
            .zip(mirrored.density.iter().rev())
        {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    fn sample_outcome(id: &str, method: &str) -> UtteranceOutcome {
        UtteranceOutcome {
            utterance_id: id.to_string(),
            method: method.to_string(),
            clean_frames: 1000,
            adv_frames: 1500,
            success: true,
            wall_time_ms: 3.25,
            mac_count: 123456,
            perturbation: PerturbationSummary::Speaker {
                norm: crate::attack::Norm::L2,
                magnitude: 1.9871234567890123,
            },
        }
    }

    fn sample_manifest() -> RunManifest {
        RunManifest {
            artifact_version: "0.1.0".to_string(),
            seed: 42,
            corpus: "corpus.txt".to_string(),
            victim_path: "victim.json".to_string(),
            victim_kind: "ar".to_string(),
            victim_fingerprint: "abc123".to_string(),
            methods: vec!["clean".to_string(), "spk-l2".to_string()],
            iterations: 100,
            beam: 3,
            alpha: 0.1,
            eps_l2: 2.0,
            eps_linf: 0.5,
            baseline_norm: "l2".to_string(),
            ratio: 0.05,
            candidates_per_strategy: 100,
            target_y: 0.0,
            limit: Some(50),
            jobs: 1,
            utterances_attacked: 2,
            skipped: vec![],
        }
    }

    #[test]
    fn emit_then_read_round_trips_outcomes_and_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let outcomes = vec![sample_outcome("1", "clean"), sample_outcome("2", "spk-l2")];
        let aggregates = crate::metrics::aggregate(&outcomes).unwrap();
        let kde = default_curve(&[1000.0, 1500.0]);
        emit(
            dir.path(),
            &outcomes,
            &aggregates,
            &[("spk-l2".to_string(), kde)],
            &sample_manifest(),
        )
        .unwrap();

        let parsed = read_outcomes(&dir.path().join(OUTCOMES_FILE)).unwrap();
        // Wall time is sidecar-only; everything else round-trips.
        for (orig, back) in outcomes.iter().zip(&parsed) {
            assert_eq!(back.wall_time_ms, 0.0);
            let mut orig_no_time = orig.clone();
            orig_no_time.wall_time_ms = 0.0;
            assert_eq!(&orig_no_time, back);
        }
        // Aggregates recomputed from parsed records match the emitted
        // ones on every deterministic column.
        let recomputed = crate::metrics::aggregate(&parsed).unwrap();
        let emitted = read_aggregates(&dir.path().join(AGGREGATES_FILE)).unwrap();
        for (a, b) in recomputed.iter().zip(&emitted) {
            assert_eq!(a.method, b.method);
            assert_eq!(a.mean_absolute, b.mean_absolute);
            assert_eq!(a.max_absolute, b.max_absolute);
            assert_eq!(a.mean_incre, b.mean_incre);
            assert_eq!(a.max_incre, b.max_incre);
            assert_eq!(a.asr_percent, b.asr_percent);
        }
        let manifest = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest, sample_manifest());
    }

    #[test]
    fn empty_method_set_emits_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        emit(dir.path(), &[], &[], &[], &sample_manifest()).unwrap();
        let agg = std::fs::read_to_string(dir.path().join(AGGREGATES_FILE)).unwrap();
        assert_eq!(
            agg,
            "method,mean_absolute,max_absolute,mean_incre,max_incre,asr,mean_time_ms,mean_macs\n"
        );
        let outcomes = std::fs::read_to_string(dir.path().join(OUTCOMES_FILE)).unwrap();
        assert!(outcomes.is_empty());
    }

    #[test]
    fn csv_floats_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let outcomes = vec![sample_outcome("1", "spk-l2")];
        let mut aggregates = crate::metrics::aggregate(&outcomes).unwrap();
        aggregates[0].mean_absolute = 1234.000000000000001;
        aggregates[0].mean_incre = Some(0.1 + 0.2); // famously inexact
        emit(dir.path(), &outcomes, &aggregates, &[], &sample_manifest()).unwrap();
        let back = read_aggregates(&dir.path().join(AGGREGATES_FILE)).unwrap();
        assert_eq!(back[0].mean_absolute, aggregates[0].mean_absolute);
        assert_eq!(back[0].mean_incre, aggregates[0].mean_incre);
    }
}
