//! Utterance corpora: plain-text and structured line formats, plus a
//! seeded synthetic corpus for demos and self-tests.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus {path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("corpus {path} line {line}: utterance text is empty")]
    EmptyUtterance { path: String, line: usize },
    #[error("corpus {path} contains no utterances")]
    Empty { path: String },
}

/// One input text with an identifier and optional speaker label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub chars: Vec<char>,
    pub speaker_ref: Option<String>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, text: &str) -> Self {
        Self {
            id: id.into(),
            chars: text.chars().collect(),
            speaker_ref: None,
        }
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

#[derive(Deserialize)]
struct StructuredLine {
    id: String,
    text: String,
    #[serde(default)]
    speaker_ref: Option<String>,
}

/// Loads a corpus file.
///
/// Lines starting with `{` are parsed as structured records
/// `{id, text, speaker_ref}`; anything else is a plain utterance whose
/// id is its 1-based line number. Blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<Utterance>, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut utterances = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let utterance = if trimmed.starts_with('{') {
            let record: StructuredLine =
                serde_json::from_str(trimmed).map_err(|source| CorpusError::Parse {
                    path: path.display().to_string(),
                    line: line_no,
                    source,
                })?;
            Utterance {
                id: record.id,
                chars: record.text.chars().collect(),
                speaker_ref: record.speaker_ref,
            }
        } else {
            Utterance::new(line_no.to_string(), trimmed)
        };
        if utterance.chars.is_empty() {
            return Err(CorpusError::EmptyUtterance {
                path: path.display().to_string(),
                line: line_no,
            });
        }
        utterances.push(utterance);
    }
    if utterances.is_empty() {
        return Err(CorpusError::Empty {
            path: path.display().to_string(),
        });
    }
    Ok(utterances)
}

const SYNTH_WORDS: &[&str] = &[
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "voice", "signal", "sound",
    "speech", "model", "frame", "input", "vector", "token", "long", "short", "noise", "quiet",
    "reading", "chapter", "letter", "similar", "printing", "process", "during", "years", "early",
    "modern", "system", "output", "stable", "timely", "minor", "change", "sample", "daily",
];

/// Deterministic English-like corpus used by demos and the verification
/// suite. Sentences are 5-12 words, answering to ids "1".."n".
pub fn synthetic_corpus(count: usize, root_seed: u64) -> Vec<Utterance> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let id = (i + 1).to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(root_seed, &["corpus", &id]));
        let words = rng.random_range(5..=12);
        let mut text = String::new();
        for w in 0..words {
            if w > 0 {
                text.push(' ');
            }
            let word = SYNTH_WORDS.choose(&mut rng).expect("word list nonempty");
            if w == 0 {
                let mut chars = word.chars();
                if let Some(first) = chars.next() {
                    text.extend(first.to_uppercase());
                    text.push_str(chars.as_str());
                }
            } else {
                text.push_str(word);
            }
        }
        text.push('.');
        out.push(Utterance::new(id, &text));
    }
    out
}
