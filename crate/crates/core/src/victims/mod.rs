//! Seeded surrogate TTS victims exposing the two length-control
//! mechanisms under attack: an autoregressive stop-token decoder and a
//! non-autoregressive duration predictor.
//!
//! Victims are immutable after generation/calibration and shareable
//! across threads. Every `forward` builds a private differentiation
//! graph; `evaluate` runs the same arithmetic without recording, for
//! the many fitness probes that never need gradients.

mod ar;
mod io;
mod nar;

pub use ar::{calibrate_stop_bias, ArDims, ArVictim, Calibration, REC_LEAK, STOP_THRESHOLD};
pub use io::{
    load_ar_victim, load_nar_victim, load_victim, save_victim, victim_fingerprint, WeightIoError,
};
pub use nar::{NarDims, NarVictim};

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::perturb::HomoglyphTable;
use crate::seed;
use crate::tensor::{Graph, NodeId, TensorError};

#[derive(Debug, Error)]
pub enum VictimError {
    #[error("character {0:?} is not in the victim vocabulary")]
    UnknownChar(char),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("speaker vector has {found} values, victim expects {expected}")]
    SpeakerDimMismatch { expected: usize, found: usize },
    #[error(
        "calibration failed: median stop step {last_median} still outside \
         [{band_lo}, {band_hi}] after {iterations} bisections"
    )]
    CalibrationUnreachable {
        band_lo: u32,
        band_hi: u32,
        iterations: u32,
        last_median: u32,
    },
    #[error("probe corpus is empty")]
    EmptyProbe,
    #[error("input text is empty")]
    EmptyText,
}

/// Index of a character row in an [`EmbeddingTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenId(pub usize);

/// Character-to-vector lookup shared by both victim kinds.
///
/// Rows are ordered: the base vocabulary (characters seen in the
/// generation corpus) first, then homoglyph extensions cloned from
/// their base character's row plus small seeded noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    chars: Vec<char>,
    index: HashMap<char, usize>,
    base_count: usize,
    d_text: usize,
    rows: Vec<f64>,
}

impl EmbeddingTable {
    /// Builds a table for `base_chars`, extending it with every
    /// homoglyph of a base character so perturbed texts stay encodable.
    pub fn generate(
        base_chars: &BTreeSet<char>,
        table: &HomoglyphTable,
        d_text: usize,
        victim_seed: u64,
    ) -> Result<Self, VictimError> {
        if d_text < 2 {
            return Err(VictimError::InvalidDims(format!(
                "d_text must be at least 2, got {d_text}"
            )));
        }
        if base_chars.is_empty() {
            return Err(VictimError::InvalidDims(
                "base vocabulary is empty".to_string(),
            ));
        }
        let mut chars: Vec<char> = base_chars.iter().copied().collect();
        let base_count = chars.len();
        let mut rows = Vec::with_capacity(chars.len() * d_text);
        for &c in &chars {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
                victim_seed,
                &["embedding", &c.to_string()],
            ));
            for _ in 0..d_text {
                rows.push(rng.sample::<f64, _>(StandardNormal));
            }
        }

        let mut index: HashMap<char, usize> =
            chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        for base in base_chars {
            for &glyph in table.replacements(*base) {
                if index.contains_key(&glyph) {
                    continue;
                }
                let base_row_start = index[base] * d_text;
                let base_row: Vec<f64> =
                    rows[base_row_start..base_row_start + d_text].to_vec();
                let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
                    victim_seed,
                    &["homoglyph", &base.to_string(), &glyph.to_string()],
                ));
                index.insert(glyph, chars.len());
                chars.push(glyph);
                for value in base_row {
                    let noise: f64 = rng.sample(StandardNormal);
                    rows.push(value + 0.01 * noise);
                }
            }
        }

        Ok(Self {
            chars,
            index,
            base_count,
            d_text,
            rows,
        })
    }

    pub fn d_text(&self) -> usize {
        self.d_text
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Characters of the base vocabulary (candidate pool for the char
    /// replacement strategy).
    pub fn base_chars(&self) -> &[char] {
        &self.chars[..self.base_count]
    }

    pub fn base_count(&self) -> usize {
        self.base_count
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn token(&self, c: char) -> Result<TokenId, VictimError> {
        self.index
            .get(&c)
            .map(|&i| TokenId(i))
            .ok_or(VictimError::UnknownChar(c))
    }

    pub fn char_at(&self, id: TokenId) -> char {
        self.chars[id.0]
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        &self.rows[id.0 * self.d_text..(id.0 + 1) * self.d_text]
    }

    /// Maps a text to token ids, failing on the first unknown character.
    pub fn encode(&self, text: &[char]) -> Result<Vec<TokenId>, VictimError> {
        text.iter().map(|&c| self.token(c)).collect()
    }

    pub(crate) fn from_parts(
        chars: Vec<char>,
        base_count: usize,
        d_text: usize,
        rows: Vec<f64>,
    ) -> Self {
        let index = chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Self {
            chars,
            index,
            base_count,
            d_text,
            rows,
        }
    }

    pub(crate) fn rows_flat(&self) -> &[f64] {
        &self.rows
    }
}

/// Fixed-dimension voice-identity vector; unit ℓ2 norm at generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    id: String,
    values: Vec<f64>,
}

impl SpeakerEmbedding {
    /// Draws a unit-norm Gaussian vector for the given label.
    pub fn seeded(dim: usize, seed_value: u64, id: impl Into<String>) -> Self {
        assert!(dim >= 1, "speaker dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
        let mut values: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            values[0] = 1.0;
        }
        Self {
            id: id.into(),
            values,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Forward result without gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Output length in frames.
    pub frames: u64,
    /// Per-step stop probabilities (AR) or per-token durations (NAR).
    pub steps_or_durations: Vec<f64>,
    /// Attack-loss value at this input.
    pub loss: f64,
    /// Closed-form multiply-accumulate count for this forward pass.
    pub mac_count: u64,
}

/// Forward result carrying the differentiation graph.
#[derive(Debug)]
pub struct VictimOutput {
    frames: u64,
    steps_or_durations: Vec<f64>,
    loss_value: f64,
    mac_count: u64,
    graph: Graph,
    loss_node: NodeId,
    speaker_node: NodeId,
    text_nodes: Vec<NodeId>,
    backward_done: bool,
}

impl VictimOutput {
    pub(crate) fn new(
        frames: u64,
        steps_or_durations: Vec<f64>,
        mac_count: u64,
        graph: Graph,
        loss_node: NodeId,
        speaker_node: NodeId,
        text_nodes: Vec<NodeId>,
    ) -> Self {
        let loss_value = graph.value(loss_node).item();
        Self {
            frames,
            steps_or_durations,
            loss_value,
            mac_count,
            graph,
            loss_node,
            speaker_node,
            text_nodes,
            backward_done: false,
        }
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn steps_or_durations(&self) -> &[f64] {
        &self.steps_or_durations
    }

    pub fn loss(&self) -> f64 {
        self.loss_value
    }

    pub fn mac_count(&self) -> u64 {
        self.mac_count
    }

    pub fn evaluation(&self) -> Evaluation {
        Evaluation {
            frames: self.frames,
            steps_or_durations: self.steps_or_durations.clone(),
            loss: self.loss_value,
            mac_count: self.mac_count,
        }
    }

    fn ensure_backward(&mut self) -> Result<(), VictimError> {
        if !self.backward_done {
            self.graph.backward(self.loss_node)?;
            self.backward_done = true;
        }
        Ok(())
    }

    /// Gradient of the loss with respect to the speaker vector.
    pub fn grad_speaker(&mut self) -> Result<Vec<f64>, VictimError> {
        self.ensure_backward()?;
        Ok(self.graph.gradient(self.speaker_node)?.data().to_vec())
    }

    /// Gradient of the loss with respect to each input position's
    /// embedding row. Duplicate characters at distinct positions get
    /// separate gradients.
    pub fn grad_text_embeddings(&mut self) -> Result<Vec<Vec<f64>>, VictimError> {
        self.ensure_backward()?;
        self.text_nodes
            .iter()
            .map(|&id| Ok(self.graph.gradient(id)?.data().to_vec()))
            .collect()
    }
}

/// Either victim kind behind one dispatching surface.
#[derive(Debug, Clone)]
pub enum Victim {
    Ar(ArVictim),
    Nar(NarVictim),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VictimKind {
    Ar,
    Nar,
}

impl std::fmt::Display for VictimKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VictimKind::Ar => "ar",
            VictimKind::Nar => "nar",
        })
    }
}

impl Victim {
    pub fn kind(&self) -> VictimKind {
        match self {
            Victim::Ar(_) => VictimKind::Ar,
            Victim::Nar(_) => VictimKind::Nar,
        }
    }

    pub fn embedding(&self) -> &EmbeddingTable {
        match self {
            Victim::Ar(v) => v.embedding(),
            Victim::Nar(v) => v.embedding(),
        }
    }

    pub fn d_spk(&self) -> usize {
        match self {
            Victim::Ar(v) => v.dims().d_spk,
            Victim::Nar(v) => v.dims().d_spk,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Victim::Ar(v) => v.seed(),
            Victim::Nar(v) => v.seed(),
        }
    }

    /// Graph-free forward pass; `target_y` only affects the AR loss.
    pub fn evaluate(
        &self,
        ids: &[TokenId],
        speaker: &[f64],
        target_y: f64,
    ) -> Result<Evaluation, VictimError> {
        match self {
            Victim::Ar(v) => v.evaluate(ids, speaker, target_y),
            Victim::Nar(v) => v.evaluate(ids, speaker),
        }
    }

    /// Differentiable forward pass.
    pub fn forward(
        &self,
        ids: &[TokenId],
        speaker: &[f64],
        target_y: f64,
    ) -> Result<VictimOutput, VictimError> {
        match self {
            Victim::Ar(v) => v.forward(ids, speaker, target_y),
            Victim::Nar(v) => v.forward(ids, speaker),
        }
    }
}

// Plain dense kernels for the graph-free path.
pub(crate) fn dense_matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (i, slot) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *slot = acc;
    }
}

pub(crate) fn dense_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a fan-in-scaled Gaussian weight matrix for one named parameter.
pub(crate) fn init_weight(victim_seed: u64, tags: &[&str], len: usize, fan_in: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(victim_seed, tags));
    let scale = 1.0 / (fan_in as f64).sqrt();
    (0..len)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_chars(text: &str) -> BTreeSet<char> {
        text.chars().collect()
    }

    #[test]
    fn embedding_extends_vocabulary_with_homoglyphs() {
        let table = HomoglyphTable::builtin();
        let emb =
            EmbeddingTable::generate(&base_chars("abc "), &table, 4, 7).unwrap();
        assert_eq!(emb.base_count(), 4);
        assert!(emb.len() > emb.base_count());
        for &glyph in table.replacements('a') {
            assert!(emb.contains(glyph));
        }
    }

    #[test]
    fn homoglyph_rows_stay_close_to_base() {
        let table = HomoglyphTable::builtin();
        let emb = EmbeddingTable::generate(&base_chars("a"), &table, 8, 11).unwrap();
        let base = emb.row(emb.token('a').unwrap()).to_vec();
        for &glyph in table.replacements('a') {
            let row = emb.row(emb.token(glyph).unwrap());
            let dist: f64 = base
                .iter()
                .zip(row)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            assert!(dist > 0.0 && dist < 0.1, "clone distance {dist}");
        }
    }

    #[test]
    fn unknown_character_names_the_offender() {
        let table = HomoglyphTable::builtin();
        let emb = EmbeddingTable::generate(&base_chars("ab"), &table, 4, 1).unwrap();
        match emb.encode(&['a', '▲']) {
            Err(VictimError::UnknownChar(c)) => assert_eq!(c, '▲'),
            other => panic!("expected unknown char, got {other:?}"),
        }
    }

    #[test]
    fn speaker_embeddings_are_unit_norm_and_deterministic() {
        let a = SpeakerEmbedding::seeded(32, 99, "spk");
        let b = SpeakerEmbedding::seeded(32, 99, "spk");
        assert_eq!(a, b);
        let norm: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_tiny_text_dimension() {
        let table = HomoglyphTable::builtin();
        assert!(matches!(
            EmbeddingTable::generate(&base_chars("ab"), &table, 1, 1),
            Err(VictimError::InvalidDims(_))
        ));
    }
}
