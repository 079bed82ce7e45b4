//! Victim generation: build the vocabulary from a probe corpus, draw
//! seeded weights, calibrate the AR stop bias, and persist.

use std::collections::BTreeSet;
use std::path::PathBuf;

use drawl_core::corpus::load_corpus;
use drawl_core::perturb::HomoglyphTable;
use drawl_core::seed::derive;
use drawl_core::victims::{
    calibrate_stop_bias, save_victim, ArDims, ArVictim, Calibration, EmbeddingTable, NarDims,
    NarVictim, SpeakerEmbedding, Victim, VictimKind,
};

use crate::CliError;

/// Default calibration band for the median clean stop step.
pub const CALIBRATION_BAND: (u32, u32) = (20, 200);

#[derive(Debug, Clone)]
pub struct GenVictimConfig {
    pub kind: VictimKind,
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub d_text: usize,
    pub d_spk: usize,
    pub d_h: usize,
    pub frames_per_step: u32,
    pub frames_per_unit: u32,
    pub max_steps: u32,
    pub limit: Option<usize>,
    pub homoglyphs: Option<PathBuf>,
}

impl GenVictimConfig {
    pub fn new(kind: VictimKind, corpus: PathBuf, out: PathBuf, seed: u64) -> Self {
        let ar = ArDims::default();
        let nar = NarDims::default();
        Self {
            kind,
            corpus,
            out,
            seed,
            d_text: ar.d_text,
            d_spk: ar.d_spk,
            d_h: ar.d_h,
            frames_per_step: ar.frames_per_step,
            frames_per_unit: nar.frames_per_unit,
            max_steps: ar.max_steps,
            limit: None,
            homoglyphs: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenSummary {
    pub kind: VictimKind,
    pub out: PathBuf,
    pub vocabulary: usize,
    pub base_vocabulary: usize,
    pub calibration: Option<Calibration>,
}

pub fn generate_victim(config: &GenVictimConfig) -> Result<GenSummary, CliError> {
    if !config.corpus.exists() {
        return Err(CliError::Config(format!(
            "--corpus path {} does not exist",
            config.corpus.display()
        )));
    }
    let table = match &config.homoglyphs {
        Some(path) => HomoglyphTable::load(path)
            .map_err(|e| CliError::Config(format!("loading homoglyph table: {e}")))?,
        None => HomoglyphTable::builtin(),
    };
    let corpus = load_corpus(&config.corpus)
        .map_err(|e| CliError::Config(format!("loading probe corpus: {e}")))?;
    let probe_corpus: Vec<_> = match config.limit {
        Some(limit) => corpus.into_iter().take(limit).collect(),
        None => corpus,
    };
    if probe_corpus.is_empty() {
        return Err(CliError::Config(
            "probe corpus is empty after applying --limit".to_string(),
        ));
    }

    let mut chars: BTreeSet<char> = BTreeSet::new();
    for utterance in &probe_corpus {
        chars.extend(utterance.chars.iter().copied());
    }
    let embedding = EmbeddingTable::generate(&chars, &table, config.d_text, config.seed)
        .map_err(|e| CliError::Config(format!("building embedding table: {e}")))?;

    let victim = match config.kind {
        VictimKind::Ar => {
            let dims = ArDims {
                d_text: config.d_text,
                d_spk: config.d_spk,
                d_h: config.d_h,
                frames_per_step: config.frames_per_step,
                max_steps: config.max_steps,
            };
            dims.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let mut victim = ArVictim::generate(embedding, dims, config.seed)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let probe: Vec<_> = probe_corpus
                .iter()
                .map(|utterance| {
                    let ids = victim
                        .embedding()
                        .encode(&utterance.chars)
                        .expect("vocabulary was built from this corpus");
                    let key = utterance
                        .speaker_ref
                        .clone()
                        .unwrap_or_else(|| utterance.id.clone());
                    let speaker = SpeakerEmbedding::seeded(
                        dims.d_spk,
                        derive(config.seed, &["spk", &key]),
                        &key,
                    );
                    (ids, speaker.values().to_vec())
                })
                .collect();
            calibrate_stop_bias(&mut victim, &probe, CALIBRATION_BAND)
                .map_err(|e| CliError::Runtime(anyhow::anyhow!("calibration failed: {e}")))?;
            Victim::Ar(victim)
        }
        VictimKind::Nar => {
            let dims = NarDims {
                d_text: config.d_text,
                d_spk: config.d_spk,
                d_h: config.d_h,
                frames_per_unit: config.frames_per_unit,
            };
            dims.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Victim::Nar(
                NarVictim::generate(embedding, dims, config.seed)
                    .map_err(|e| CliError::Config(e.to_string()))?,
            )
        }
    };

    save_victim(&victim, &config.out)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("saving victim: {e}")))?;
    Ok(GenSummary {
        kind: config.kind,
        out: config.out.clone(),
        vocabulary: victim.embedding().len(),
        base_vocabulary: victim.embedding().base_count(),
        calibration: match &victim {
            Victim::Ar(v) => v.calibration(),
            Victim::Nar(_) => None,
        },
    })
}

/// One-line human summary for the console.
pub fn summary_line(summary: &GenSummary) -> String {
    match summary.calibration {
        Some(cal) => format!(
            "generated {} victim at {} (vocabulary {} / base {}, calibrated b_stop {:.6}, median clean stop step {})",
            summary.kind,
            summary.out.display(),
            summary.vocabulary,
            summary.base_vocabulary,
            cal.b_stop,
            cal.median_step
        ),
        None => format!(
            "generated {} victim at {} (vocabulary {} / base {})",
            summary.kind,
            summary.out.display(),
            summary.vocabulary,
            summary.base_vocabulary
        ),
    }
}
