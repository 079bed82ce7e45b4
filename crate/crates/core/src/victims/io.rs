//! Weight-file persistence.
//!
//! The format is a single JSON document: a small header (format
//! version, kind, dims, seed, calibration), the vocabulary, and named
//! weight arrays. Serialization order is fixed so identical victims
//! produce identical bytes, and floats round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ar::{ArDims, ArVictim, Calibration};
use super::nar::{NarDims, NarVictim};
use super::{EmbeddingTable, Victim};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightIoError {
    #[error("failed to read weight file {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write weight file {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("weight file {path} is not valid JSON: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown victim kind {0:?}")]
    UnknownKind(String),
    #[error("expected a {expected} victim, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error("weight file field {field}: {detail}")]
    Field { field: String, detail: String },
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format_version: u32,
    kind: String,
    seed: u64,
    dims: DimsRecord,
    calibration: Option<CalibrationRecord>,
    vocab: VocabRecord,
    arrays: Vec<ArrayRecord>,
}

#[derive(Serialize, Deserialize, Default)]
struct DimsRecord {
    d_text: usize,
    d_spk: usize,
    d_h: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames_per_step: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_steps: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames_per_unit: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct CalibrationRecord {
    b_stop: f64,
    median_step: u32,
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    chars: String,
    base_count: usize,
}

#[derive(Serialize, Deserialize)]
struct ArrayRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn array(name: &str, shape: Vec<usize>, data: Vec<f64>) -> ArrayRecord {
    ArrayRecord {
        name: name.to_string(),
        shape,
        data,
    }
}

fn field_err(field: &str, detail: impl Into<String>) -> WeightIoError {
    WeightIoError::Field {
        field: field.to_string(),
        detail: detail.into(),
    }
}

/// Serializes a victim to `path`. Identical victims produce identical
/// bytes.
pub fn save_victim(victim: &Victim, path: &Path) -> Result<(), WeightIoError> {
    let file = match victim {
        Victim::Ar(v) => {
            let dims = v.dims();
            let w = v.weights();
            let emb = v.embedding();
            WeightFile {
                format_version: FORMAT_VERSION,
                kind: "ar".to_string(),
                seed: v.seed(),
                dims: DimsRecord {
                    d_text: dims.d_text,
                    d_spk: dims.d_spk,
                    d_h: dims.d_h,
                    frames_per_step: Some(dims.frames_per_step),
                    max_steps: Some(dims.max_steps),
                    frames_per_unit: None,
                },
                calibration: v.calibration().map(|c| CalibrationRecord {
                    b_stop: c.b_stop,
                    median_step: c.median_step,
                }),
                vocab: VocabRecord {
                    chars: emb.chars().iter().collect(),
                    base_count: emb.base_count(),
                },
                arrays: vec![
                    array(
                        "embedding",
                        vec![emb.len(), dims.d_text],
                        emb.rows_flat().to_vec(),
                    ),
                    array(
                        "enc_weight",
                        vec![dims.d_h, dims.d_text],
                        w.enc_weight.to_vec(),
                    ),
                    array("enc_bias", vec![dims.d_h], w.enc_bias.to_vec()),
                    array(
                        "init_weight",
                        vec![dims.d_h, dims.d_h + dims.d_spk],
                        w.init_weight.to_vec(),
                    ),
                    array(
                        "rec_state",
                        vec![dims.d_h, dims.d_h],
                        w.rec_state.to_vec(),
                    ),
                    array(
                        "rec_context",
                        vec![dims.d_h, dims.d_h],
                        w.rec_context.to_vec(),
                    ),
                    array(
                        "rec_speaker",
                        vec![dims.d_h, dims.d_spk],
                        w.rec_speaker.to_vec(),
                    ),
                    array("stop_weight", vec![dims.d_h], w.stop_weight.to_vec()),
                    array("stop_bias", vec![1], vec![w.stop_bias]),
                ],
            }
        }
        Victim::Nar(v) => {
            let dims = v.dims();
            let w = v.weights();
            let emb = v.embedding();
            WeightFile {
                format_version: FORMAT_VERSION,
                kind: "nar".to_string(),
                seed: v.seed(),
                dims: DimsRecord {
                    d_text: dims.d_text,
                    d_spk: dims.d_spk,
                    d_h: dims.d_h,
                    frames_per_step: None,
                    max_steps: None,
                    frames_per_unit: Some(dims.frames_per_unit),
                },
                calibration: None,
                vocab: VocabRecord {
                    chars: emb.chars().iter().collect(),
                    base_count: emb.base_count(),
                },
                arrays: vec![
                    array(
                        "embedding",
                        vec![emb.len(), dims.d_text],
                        emb.rows_flat().to_vec(),
                    ),
                    array(
                        "hidden_weight",
                        vec![dims.d_h, dims.d_text + dims.d_spk],
                        w.hidden_weight.to_vec(),
                    ),
                    array("hidden_bias", vec![dims.d_h], w.hidden_bias.to_vec()),
                    array("out_weight", vec![dims.d_h], w.out_weight.to_vec()),
                    array("out_bias", vec![1], vec![w.out_bias]),
                ],
            }
        }
    };
    let json = serde_json::to_string(&file).expect("weight file serializes");
    std::fs::write(path, json).map_err(|source| WeightIoError::Write {
        path: path.display().to_string(),
        source,
    })
}

struct ArraySet {
    arrays: Vec<ArrayRecord>,
}

impl ArraySet {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>, WeightIoError> {
        let idx = self
            .arrays
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| field_err(name, "missing array"))?;
        let record = self.arrays.swap_remove(idx);
        if record.shape != shape {
            return Err(field_err(
                name,
                format!("expected shape {:?}, found {:?}", shape, record.shape),
            ));
        }
        let expected_len: usize = shape.iter().product();
        if record.data.len() != expected_len {
            return Err(field_err(
                name,
                format!(
                    "shape {:?} implies {} values, found {}",
                    shape,
                    expected_len,
                    record.data.len()
                ),
            ));
        }
        if let Some(bad) = record.data.iter().find(|v| !v.is_finite()) {
            return Err(field_err(name, format!("non-finite value {bad}")));
        }
        Ok(record.data)
    }
}

/// Loads either victim kind from `path`.
pub fn load_victim(path: &Path) -> Result<Victim, WeightIoError> {
    let raw = std::fs::read_to_string(path).map_err(|source| WeightIoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let file: WeightFile =
        serde_json::from_str(&raw).map_err(|source| WeightIoError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    if file.format_version != FORMAT_VERSION {
        return Err(WeightIoError::UnsupportedVersion(file.format_version));
    }

    let chars: Vec<char> = file.vocab.chars.chars().collect();
    if chars.is_empty() {
        return Err(field_err("vocab.chars", "vocabulary is empty"));
    }
    if file.vocab.base_count == 0 || file.vocab.base_count > chars.len() {
        return Err(field_err(
            "vocab.base_count",
            format!(
                "base_count {} out of range for {} characters",
                file.vocab.base_count,
                chars.len()
            ),
        ));
    }
    let dims = &file.dims;
    let mut arrays = ArraySet {
        arrays: file.arrays,
    };
    let rows = arrays.take("embedding", &[chars.len(), dims.d_text])?;
    let embedding =
        EmbeddingTable::from_parts(chars, file.vocab.base_count, dims.d_text, rows);

    match file.kind.as_str() {
        "ar" => {
            let ar_dims = ArDims {
                d_text: dims.d_text,
                d_spk: dims.d_spk,
                d_h: dims.d_h,
                frames_per_step: dims
                    .frames_per_step
                    .ok_or_else(|| field_err("dims.frames_per_step", "missing for kind ar"))?,
                max_steps: dims
                    .max_steps
                    .ok_or_else(|| field_err("dims.max_steps", "missing for kind ar"))?,
            };
            ar_dims
                .validate()
                .map_err(|e| field_err("dims", e.to_string()))?;
            let (dh, ds, dt) = (ar_dims.d_h, ar_dims.d_spk, ar_dims.d_text);
            let enc_weight = arrays.take("enc_weight", &[dh, dt])?;
            let enc_bias = arrays.take("enc_bias", &[dh])?;
            let init_weight = arrays.take("init_weight", &[dh, dh + ds])?;
            let rec_state = arrays.take("rec_state", &[dh, dh])?;
            let rec_context = arrays.take("rec_context", &[dh, dh])?;
            let rec_speaker = arrays.take("rec_speaker", &[dh, ds])?;
            let stop_weight = arrays.take("stop_weight", &[dh])?;
            let stop_bias = arrays.take("stop_bias", &[1])?[0];
            let calibration = file
                .calibration
                .map(|c| {
                    if c.b_stop != stop_bias {
                        Err(field_err(
                            "calibration.b_stop",
                            format!("{} does not match stop_bias array {}", c.b_stop, stop_bias),
                        ))
                    } else {
                        Ok(Calibration {
                            b_stop: c.b_stop,
                            median_step: c.median_step,
                        })
                    }
                })
                .transpose()?;
            Ok(Victim::Ar(ArVictim::from_parts(
                embedding,
                ar_dims,
                enc_weight,
                enc_bias,
                init_weight,
                rec_state,
                rec_context,
                rec_speaker,
                stop_weight,
                stop_bias,
                file.seed,
                calibration,
            )))
        }
        "nar" => {
            if file.calibration.is_some() {
                return Err(field_err(
                    "calibration",
                    "not applicable to kind nar",
                ));
            }
            let nar_dims = NarDims {
                d_text: dims.d_text,
                d_spk: dims.d_spk,
                d_h: dims.d_h,
                frames_per_unit: dims
                    .frames_per_unit
                    .ok_or_else(|| field_err("dims.frames_per_unit", "missing for kind nar"))?,
            };
            nar_dims
                .validate()
                .map_err(|e| field_err("dims", e.to_string()))?;
            let (dh, ds, dt) = (nar_dims.d_h, nar_dims.d_spk, nar_dims.d_text);
            let hidden_weight = arrays.take("hidden_weight", &[dh, dt + ds])?;
            let hidden_bias = arrays.take("hidden_bias", &[dh])?;
            let out_weight = arrays.take("out_weight", &[dh])?;
            let out_bias = arrays.take("out_bias", &[1])?[0];
            Ok(Victim::Nar(NarVictim::from_parts(
                embedding,
                nar_dims,
                hidden_weight,
                hidden_bias,
                out_weight,
                out_bias,
                file.seed,
            )))
        }
        other => Err(WeightIoError::UnknownKind(other.to_string())),
    }
}

/// Loads a victim that must be autoregressive.
pub fn load_ar_victim(path: &Path) -> Result<ArVictim, WeightIoError> {
    match load_victim(path)? {
        Victim::Ar(v) => Ok(v),
        Victim::Nar(_) => Err(WeightIoError::KindMismatch {
            expected: "ar".to_string(),
            found: "nar".to_string(),
        }),
    }
}

/// Loads a victim that must be non-autoregressive.
pub fn load_nar_victim(path: &Path) -> Result<NarVictim, WeightIoError> {
    match load_victim(path)? {
        Victim::Nar(v) => Ok(v),
        Victim::Ar(_) => Err(WeightIoError::KindMismatch {
            expected: "nar".to_string(),
            found: "ar".to_string(),
        }),
    }
}

/// SHA-256 of the weight file bytes, hex-encoded. Identifies a victim
/// in run manifests.
pub fn victim_fingerprint(path: &Path) -> Result<String, WeightIoError> {
    let bytes = std::fs::read(path).map_err(|source| WeightIoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
