//! Campaign orchestration: clean evaluation plus every selected attack
//! for each utterance, over a worker pool, with deterministic
//! per-utterance seeding so results never depend on scheduling.

use rayon::prelude::*;

use drawl_core::attack::{
    attack_speaker, attack_text, baseline_speaker_gaussian, baseline_text_attack, AttackOutcome,
    EvalRecord, Norm, Perturbation,
};
use drawl_core::corpus::{load_corpus, Utterance};
use drawl_core::metrics::{aggregate, UtteranceOutcome};
use drawl_core::perturb::HomoglyphTable;
use drawl_core::report::{default_curve, KdeCurve, RunManifest, SkippedUtterance};
use drawl_core::seed::derive;
use drawl_core::victims::{load_victim, victim_fingerprint, SpeakerEmbedding, Victim};

use crate::config::{CampaignConfig, Method};
use crate::CliError;

/// Everything a finished campaign produces, ready for `emit`.
#[derive(Debug)]
pub struct CampaignResult {
    pub outcomes: Vec<UtteranceOutcome>,
    pub aggregates: Vec<drawl_core::metrics::CampaignAggregate>,
    pub kdes: Vec<(String, KdeCurve)>,
    pub manifest: RunManifest,
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult, CliError> {
    let victim = load_victim(&config.victim)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("loading victim: {e}")))?;
    let fingerprint = victim_fingerprint(&config.victim)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("fingerprinting victim: {e}")))?;
    let table = match &config.homoglyphs {
        Some(path) => HomoglyphTable::load(path)
            .map_err(|e| CliError::Config(format!("loading homoglyph table: {e}")))?,
        None => HomoglyphTable::builtin(),
    };
    let corpus = load_corpus(&config.corpus)
        .map_err(|e| CliError::Config(format!("loading corpus: {e}")))?;
    let limited: Vec<Utterance> = match config.limit {
        Some(limit) => corpus.into_iter().take(limit).collect(),
        None => corpus,
    };
    if limited.is_empty() {
        return Err(CliError::Config(
            "corpus is empty after applying --limit".to_string(),
        ));
    }

    // Utterances with characters outside the victim vocabulary are
    // skipped with a warning and accounted for in the manifest.
    let mut attackable = Vec::new();
    let mut skipped = Vec::new();
    for utterance in limited {
        match victim.embedding().encode(&utterance.chars) {
            Ok(_) => attackable.push(utterance),
            Err(e) => {
                eprintln!("warning: skipping utterance {}: {e}", utterance.id);
                skipped.push(SkippedUtterance {
                    id: utterance.id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    if attackable.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "every utterance was skipped; nothing to attack"
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("building worker pool: {e}")))?;
    let per_utterance: Result<Vec<Vec<UtteranceOutcome>>, CliError> = pool.install(|| {
        attackable
            .par_iter()
            .map(|utterance| attack_one(&victim, utterance, config, &table))
            .collect()
    });
    let mut outcomes: Vec<UtteranceOutcome> = per_utterance?.into_iter().flatten().collect();
    outcomes.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then_with(|| a.utterance_id.cmp(&b.utterance_id))
    });

    let aggregates =
        aggregate(&outcomes).map_err(|e| CliError::Runtime(anyhow::anyhow!("aggregating: {e}")))?;
    let kdes = aggregates
        .iter()
        .map(|row| {
            let values: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.method == row.method)
                .map(|o| o.adv_frames as f64)
                .collect();
            (row.method.clone(), default_curve(&values))
        })
        .collect();

    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        corpus: config.corpus.display().to_string(),
        victim_path: config.victim.display().to_string(),
        victim_kind: victim.kind().to_string(),
        victim_fingerprint: fingerprint,
        methods: config.methods.iter().map(|m| m.label().to_string()).collect(),
        iterations: config.iterations,
        beam: config.beam,
        alpha: config.alpha,
        eps_l2: config.eps_for(Norm::L2),
        eps_linf: config.eps_for(Norm::Linf),
        baseline_norm: config.norm.to_string(),
        ratio: config.ratio,
        candidates_per_strategy: config.candidates,
        target_y: 0.0,
        limit: config.limit,
        jobs: config.jobs,
        utterances_attacked: attackable.len(),
        skipped,
    };

    Ok(CampaignResult {
        outcomes,
        aggregates,
        kdes,
        manifest,
    })
}

fn attack_one(
    victim: &Victim,
    utterance: &Utterance,
    config: &CampaignConfig,
    table: &HomoglyphTable,
) -> Result<Vec<UtteranceOutcome>, CliError> {
    let ids = victim
        .embedding()
        .encode(&utterance.chars)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("utterance {}: {e}", utterance.id)))?;
    let speaker_key = utterance
        .speaker_ref
        .clone()
        .unwrap_or_else(|| utterance.id.clone());
    let speaker = SpeakerEmbedding::seeded(
        victim.d_spk(),
        derive(config.seed, &["spk", &speaker_key]),
        &speaker_key,
    );
    let utterance_seed = derive(config.seed, &["utt", &utterance.id]);

    let run = |method: Method| -> Result<AttackOutcome, CliError> {
        let method_seed = derive(utterance_seed, &[method.label()]);
        let outcome = match method {
            Method::Clean => {
                let (eval, ms) =
                    drawl_core::attack::timed_evaluate(victim, &ids, speaker.values(), 0.0)
                        .map_err(to_runtime(utterance, method))?;
                let record = EvalRecord {
                    frames: eval.frames,
                    loss: eval.loss,
                    mac_count: eval.mac_count,
                    forward_ms: ms,
                };
                AttackOutcome {
                    clean: record.clone(),
                    adv: record.clone(),
                    perturbation: Perturbation::None,
                    loss_trace: vec![record.loss],
                    iterations_run: 0,
                }
            }
            Method::SpkL2 => attack_speaker(
                victim,
                &ids,
                speaker.values(),
                &config.attack_config(Norm::L2, method_seed),
            )
            .map_err(to_runtime(utterance, method))?,
            Method::SpkLinf => attack_speaker(
                victim,
                &ids,
                speaker.values(),
                &config.attack_config(Norm::Linf, method_seed),
            )
            .map_err(to_runtime(utterance, method))?,
            Method::SpkBaseline => baseline_speaker_gaussian(
                victim,
                &ids,
                speaker.values(),
                &config.attack_config(config.norm, method_seed),
            )
            .map_err(to_runtime(utterance, method))?,
            Method::Text => attack_text(
                victim,
                &utterance.chars,
                speaker.values(),
                &config.attack_config(config.norm, method_seed),
                table,
            )
            .map_err(to_runtime(utterance, method))?,
            Method::TextBaseline => baseline_text_attack(
                victim,
                &utterance.chars,
                speaker.values(),
                &config.attack_config(config.norm, method_seed),
                table,
            )
            .map_err(to_runtime(utterance, method))?,
        };
        Ok(outcome)
    };

    config
        .methods
        .iter()
        .map(|&method| {
            let outcome = run(method)?;
            Ok(UtteranceOutcome::from_attack(
                &utterance.id,
                method.label(),
                &outcome,
            ))
        })
        .collect()
}

fn to_runtime<E: std::fmt::Display>(
    utterance: &Utterance,
    method: Method,
) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Runtime(anyhow::anyhow!("{method} on utterance {}: {e}", utterance.id))
}
