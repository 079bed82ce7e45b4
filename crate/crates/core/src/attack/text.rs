//! Gradient-guided text perturbation.
//!
//! Candidate edits are ranked by the first-order decrease of the attack
//! loss when one character's embedding row is swapped for another
//! (negated replacement increment). Each iteration proposes the
//! top-ranked single edits per strategy for every beam member, discards
//! candidates that exceed the replacement budget, evaluates the rest by
//! actual frame count, and keeps the global top `beam`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::perturb::{budget, CandidateText, HomoglyphTable, Strategy};
use crate::victims::{EmbeddingTable, Victim};

use super::{timed_evaluate, AttackConfig, AttackError, AttackOutcome, EvalRecord, Perturbation};

/// First-order change of the loss when replacing a position whose
/// gradient is `grad`: `sum_j (e_new - e_old)_j * grad_j`.
pub fn replacement_increment(grad: &[f64], e_old: &[f64], e_new: &[f64]) -> f64 {
    assert_eq!(grad.len(), e_old.len());
    assert_eq!(grad.len(), e_new.len());
    e_new
        .iter()
        .zip(e_old)
        .zip(grad)
        .map(|((n, o), g)| (n - o) * g)
        .sum()
}

/// A candidate single-character replacement with its score (first-order
/// loss decrease; higher is a more promising slowdown edit).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEdit {
    pub position: usize,
    pub replacement: char,
    pub score: f64,
}

fn score_replacements(
    embedding: &EmbeddingTable,
    chars: &[char],
    grads: &[Vec<f64>],
    strategy: Strategy,
    table: &HomoglyphTable,
) -> Vec<ScoredEdit> {
    let mut edits = Vec::new();
    for (position, &current) in chars.iter().enumerate() {
        let grad = &grads[position];
        let old_row = match embedding.token(current) {
            Ok(id) => embedding.row(id),
            Err(_) => continue,
        };
        let mut push = |replacement: char| {
            let id = match embedding.token(replacement) {
                Ok(id) => id,
                Err(_) => return,
            };
            let score = -replacement_increment(grad, old_row, embedding.row(id));
            edits.push(ScoredEdit {
                position,
                replacement,
                score,
            });
        };
        match strategy {
            Strategy::Char => {
                for &c in embedding.base_chars() {
                    if c != current {
                        push(c);
                    }
                }
            }
            Strategy::Homo => {
                for &glyph in table.replacements(current) {
                    if glyph != current {
                        push(glyph);
                    }
                }
            }
            Strategy::None => {}
        }
    }
    edits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.position.cmp(&b.position))
            .then(a.replacement.cmp(&b.replacement))
    });
    edits
}

/// Scores every admissible (position, replacement) pair for one
/// strategy, sorted by descending first-order loss decrease with
/// deterministic tie-breaking.
pub fn rank_replacements(
    victim: &Victim,
    chars: &[char],
    speaker: &[f64],
    target_y: f64,
    strategy: Strategy,
    table: &HomoglyphTable,
) -> Result<Vec<ScoredEdit>, AttackError> {
    let embedding = victim.embedding();
    let ids = embedding.encode(chars)?;
    let mut output = victim.forward(&ids, speaker, target_y)?;
    let grads = output.grad_text_embeddings()?;
    Ok(score_replacements(embedding, chars, &grads, strategy, table))
}

fn better_fitness(a: &(CandidateText, EvalRecord), b: &(CandidateText, EvalRecord)) -> Ordering {
    b.1.frames
        .cmp(&a.1.frames)
        .then(a.1.loss.partial_cmp(&b.1.loss).expect("finite loss"))
        .then_with(|| a.0.chars().cmp(b.0.chars()))
}

/// Beam-searched gradient-guided text attack with the replacement
/// budget `ceil(ratio * len)` (minimum one).
pub fn attack_text(
    victim: &Victim,
    chars: &[char],
    speaker: &[f64],
    config: &AttackConfig,
    table: &HomoglyphTable,
) -> Result<AttackOutcome, AttackError> {
    config.validate_loose()?;
    let limit = budget(chars.len(), config.ratio);
    beam_attack(victim, chars, speaker, config, table, limit)
}

/// The beam search with an explicit replacement budget.
pub(crate) fn beam_attack(
    victim: &Victim,
    chars: &[char],
    speaker: &[f64],
    config: &AttackConfig,
    table: &HomoglyphTable,
    budget: usize,
) -> Result<AttackOutcome, AttackError> {
    let embedding = victim.embedding();
    let original = CandidateText::original(chars.to_vec());
    let ids = embedding.encode(chars)?;
    let (clean_eval, clean_ms) = timed_evaluate(victim, &ids, speaker, config.target_y)?;
    let clean = EvalRecord::from_eval(&clean_eval, clean_ms);

    let mut fitness: HashMap<String, EvalRecord> = HashMap::new();
    fitness.insert(original.text(), clean.clone());
    // Gradients are a function of the member text alone, so surviving
    // members reuse their ranked edits across iterations.
    let mut ranked: HashMap<String, (Vec<ScoredEdit>, Vec<ScoredEdit>)> = HashMap::new();

    let mut beam: Vec<(CandidateText, EvalRecord)> = vec![(original, clean.clone())];
    let mut loss_trace = vec![clean.loss];
    let mut iterations_run = 0;

    for iteration in 1..=config.iterations {
        if budget == 0 || beam.iter().all(|(c, _)| c.edits().len() >= budget) {
            break;
        }
        iterations_run = iteration;

        let mut pool: BTreeMap<String, CandidateText> = BTreeMap::new();
        for (member, _) in &beam {
            let key = member.text();
            if !ranked.contains_key(&key) {
                let member_ids = embedding.encode(member.chars())?;
                let mut output = victim.forward(&member_ids, speaker, config.target_y)?;
                let grads = output.grad_text_embeddings()?;
                let char_edits =
                    score_replacements(embedding, member.chars(), &grads, Strategy::Char, table);
                let homo_edits =
                    score_replacements(embedding, member.chars(), &grads, Strategy::Homo, table);
                ranked.insert(key.clone(), (char_edits, homo_edits));
            }
            let (char_edits, homo_edits) = &ranked[&key];
            for (edits, strategy) in [(char_edits, Strategy::Char), (homo_edits, Strategy::Homo)] {
                for edit in edits.iter().take(config.candidates_per_strategy) {
                    let candidate = match member.with_edit(edit.position, edit.replacement, strategy)
                    {
                        Ok(c) => c,
                        Err(_) => continue,
                    };
                    if candidate.edits().len() > budget {
                        continue;
                    }
                    pool.entry(candidate.text()).or_insert(candidate);
                }
            }
        }
        for (member, _) in &beam {
            pool.remove(&member.text());
        }
        if pool.is_empty() {
            // No admissible candidate this iteration: carry the beam.
            loss_trace.push(beam[0].1.loss);
            continue;
        }

        let mut merged = beam.clone();
        for (key, candidate) in pool {
            let record = match fitness.get(&key) {
                Some(r) => r.clone(),
                None => {
                    let cand_ids = embedding.encode(candidate.chars())?;
                    let (eval, ms) =
                        timed_evaluate(victim, &cand_ids, speaker, config.target_y)?;
                    let r = EvalRecord::from_eval(&eval, ms);
                    fitness.insert(key, r.clone());
                    r
                }
            };
            merged.push((candidate, record));
        }
        merged.sort_by(better_fitness);
        merged.dedup_by(|a, b| a.0.chars() == b.0.chars());
        merged.truncate(config.beam);
        beam = merged;
        loss_trace.push(beam[0].1.loss);
    }

    let (best, record) = beam.swap_remove(0);
    Ok(AttackOutcome {
        clean,
        adv: record,
        perturbation: Perturbation::Text {
            text: best.text(),
            edits: best.edits().to_vec(),
        },
        loss_trace,
        iterations_run,
    })
}

/// Non-optimizing text baseline: replaces `ceil(ratio * len)` uniformly
/// chosen positions with uniformly chosen replacements, mixing the char
/// and homoglyph pools (homoglyph draws fall back to the char pool when
/// the table has no entry). Seeded and fully deterministic.
pub fn baseline_text_random(
    chars: &[char],
    config: &AttackConfig,
    table: &HomoglyphTable,
    embedding: &EmbeddingTable,
) -> Result<CandidateText, AttackError> {
    config.validate_loose()?;
    if chars.is_empty() {
        return Err(AttackError::Victim(
            crate::victims::VictimError::EmptyText,
        ));
    }
    let k = budget(chars.len(), config.ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut positions = sample(&mut rng, chars.len(), k.min(chars.len())).into_vec();
    positions.sort_unstable();

    let mut candidate = CandidateText::original(chars.to_vec());
    for position in positions {
        let current = candidate.chars()[position];
        let prefer_homo = rng.random_bool(0.5);
        let homo_pool: Vec<char> = table
            .replacements(current)
            .iter()
            .copied()
            .filter(|&g| g != current && embedding.contains(g))
            .collect();
        let char_pool: Vec<char> = embedding
            .base_chars()
            .iter()
            .copied()
            .filter(|&c| c != current)
            .collect();
        let (replacement, strategy) = if prefer_homo && !homo_pool.is_empty() {
            (
                homo_pool[rng.random_range(0..homo_pool.len())],
                Strategy::Homo,
            )
        } else if !char_pool.is_empty() {
            (
                char_pool[rng.random_range(0..char_pool.len())],
                Strategy::Char,
            )
        } else {
            continue;
        };
        candidate = candidate.with_edit(position, replacement, strategy)?;
    }
    Ok(candidate)
}

/// Runs the text baseline end to end: generate one random candidate and
/// evaluate it.
pub fn baseline_text_attack(
    victim: &Victim,
    chars: &[char],
    speaker: &[f64],
    config: &AttackConfig,
    table: &HomoglyphTable,
) -> Result<AttackOutcome, AttackError> {
    let embedding = victim.embedding();
    let ids = embedding.encode(chars)?;
    let (clean_eval, clean_ms) = timed_evaluate(victim, &ids, speaker, config.target_y)?;
    let clean = EvalRecord::from_eval(&clean_eval, clean_ms);

    let candidate = baseline_text_random(chars, config, table, embedding)?;
    let cand_ids = embedding.encode(candidate.chars())?;
    let (adv_eval, adv_ms) = timed_evaluate(victim, &cand_ids, speaker, config.target_y)?;
    let adv = EvalRecord::from_eval(&adv_eval, adv_ms);

    let loss_trace = vec![clean.loss, adv.loss];
    Ok(AttackOutcome {
        clean,
        adv,
        perturbation: Perturbation::Text {
            text: candidate.text(),
            edits: candidate.edits().to_vec(),
        },
        loss_trace,
        iterations_run: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victims::{NarDims, NarVictim, SpeakerEmbedding};
    use std::collections::BTreeSet;

    fn nar_victim_with_vocab(vocab: &str, seed: u64) -> NarVictim {
        let dims = NarDims {
            d_text: 4,
            d_spk: 6,
            d_h: 8,
            frames_per_unit: 64,
        };
        let chars: BTreeSet<char> = vocab.chars().collect();
        let emb =
            EmbeddingTable::generate(&chars, &HomoglyphTable::builtin(), 4, seed).unwrap();
        NarVictim::generate(emb, dims, seed).unwrap()
    }

    fn speaker() -> SpeakerEmbedding {
        SpeakerEmbedding::seeded(6, 17, "s")
    }

    #[test]
    fn increment_is_the_stated_dot_product() {
        let inc = replacement_increment(&[0.2, -0.3], &[1.0, 0.0], &[0.0, 1.0]);
        assert!((inc - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn identity_replacement_has_zero_increment() {
        let e = [0.4, -0.2, 0.9];
        assert_eq!(replacement_increment(&[1.0, 2.0, 3.0], &e, &e), 0.0);
    }

    #[test]
    fn increment_sign_predicts_actual_loss_change() {
        // Brute-force oracle: apply a 1e-3-scaled embedding step toward
        // the replacement row and re-evaluate the true loss.
        let victim = nar_victim_with_vocab("abc d", 23);
        let text: Vec<char> = "ab cd badc ab".chars().collect();
        let emb = victim.embedding().clone();
        let ids = emb.encode(&text).unwrap();
        let s = speaker();

        let mut output = victim.forward(&ids, s.values()).unwrap();
        let base_loss = output.loss();
        let grads = output.grad_text_embeddings().unwrap();

        let mut checked = 0;
        for (position, &current) in text.iter().enumerate() {
            let old_row = emb.row(emb.token(current).unwrap()).to_vec();
            for &replacement in emb.base_chars() {
                if replacement == current {
                    continue;
                }
                let new_row = emb.row(emb.token(replacement).unwrap());
                let inc = replacement_increment(&grads[position], &old_row, new_row);
                if inc.abs() < 1e-6 {
                    continue;
                }
                let mut rows: Vec<Vec<f64>> =
                    ids.iter().map(|&id| emb.row(id).to_vec()).collect();
                for (slot, (o, n)) in rows[position]
                    .iter_mut()
                    .zip(old_row.iter().zip(new_row))
                {
                    *slot = o + 1e-3 * (n - o);
                }
                let row_refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
                let moved = victim.evaluate_rows(&row_refs, s.values());
                let actual = moved.loss - base_loss;
                assert_eq!(
                    inc > 0.0,
                    actual > 0.0,
                    "sign mismatch at position {position} char {replacement:?}: \
                     inc {inc}, actual {actual}"
                );
                checked += 1;
            }
        }
        assert!(checked > 20, "oracle exercised only {checked} pairs");
    }

    #[test]
    fn zero_gradients_give_zero_scores_in_tie_break_order() {
        // Zero weights zero out every text gradient.
        let seeded = nar_victim_with_vocab("ab", 3);
        let dims = seeded.dims();
        let victim = NarVictim::from_parts(
            seeded.embedding().clone(),
            dims,
            vec![0.0; dims.d_h * (dims.d_text + dims.d_spk)],
            vec![0.0; dims.d_h],
            vec![0.0; dims.d_h],
            0.0,
            3,
        );
        let text: Vec<char> = "ab".chars().collect();
        let edits = rank_replacements(
            &Victim::Nar(victim),
            &text,
            speaker().values(),
            0.0,
            Strategy::Char,
            &HomoglyphTable::builtin(),
        )
        .unwrap();
        assert!(edits.iter().all(|e| e.score == 0.0));
        let mut sorted = edits.clone();
        sorted.sort_by(|a, b| {
            a.position
                .cmp(&b.position)
                .then(a.replacement.cmp(&b.replacement))
        });
        assert_eq!(edits, sorted);
    }

    #[test]
    fn ranking_matches_brute_force_over_all_pairs() {
        let victim = nar_victim_with_vocab("abcd", 31);
        let table = HomoglyphTable::builtin();
        let text: Vec<char> = "dcba".chars().collect();
        let s = speaker();
        let v = Victim::Nar(victim);
        let ranked = rank_replacements(&v, &text, s.values(), 0.0, Strategy::Char, &table).unwrap();

        let emb = v.embedding();
        let ids = emb.encode(&text).unwrap();
        let mut output = v.forward(&ids, s.values(), 0.0).unwrap();
        let grads = output.grad_text_embeddings().unwrap();
        let mut brute: Vec<ScoredEdit> = Vec::new();
        for (position, &current) in text.iter().enumerate() {
            let old_row = emb.row(emb.token(current).unwrap());
            for &c in emb.base_chars() {
                if c == current {
                    continue;
                }
                let new_row = emb.row(emb.token(c).unwrap());
                brute.push(ScoredEdit {
                    position,
                    replacement: c,
                    score: -replacement_increment(&grads[position], old_row, new_row),
                });
            }
        }
        brute.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.position.cmp(&b.position))
                .then(a.replacement.cmp(&b.replacement))
        });
        assert_eq!(ranked, brute);
    }

    #[test]
    fn homo_strategy_skips_uncovered_characters() {
        let victim = Victim::Nar(nar_victim_with_vocab("a▲", 7));
        let text: Vec<char> = "a▲".chars().collect();
        let edits = rank_replacements(
            &victim,
            &text,
            speaker().values(),
            0.0,
            Strategy::Homo,
            &HomoglyphTable::builtin(),
        )
        .unwrap();
        assert!(!edits.is_empty());
        assert!(edits.iter().all(|e| e.position == 0), "▲ has no homoglyphs");
    }

    #[test]
    fn homo_candidates_keep_the_visual_text() {
        let victim = Victim::Nar(nar_victim_with_vocab("I HAVEPUY", 13));
        let table = HomoglyphTable::builtin();
        let text: Vec<char> = "I HAVE A PUPPY".chars().collect();
        let edits = rank_replacements(
            &victim,
            &text,
            speaker().values(),
            0.0,
            Strategy::Homo,
            &table,
        )
        .unwrap();
        assert!(!edits.is_empty());
        for edit in &edits {
            let old = text[edit.position];
            assert!(table.replacements(old).contains(&edit.replacement));
            assert_ne!(old, ' ', "spaces have no homoglyphs");
        }
        // The paper-style swap exists: some candidate replaces the V.
        let v_pos = text.iter().position(|&c| c == 'V').unwrap();
        assert!(edits.iter().any(|e| e.position == v_pos));
    }

    #[test]
    fn zero_budget_returns_the_original_text() {
        let victim = Victim::Nar(nar_victim_with_vocab("abc", 5));
        let text: Vec<char> = "abc".chars().collect();
        let cfg = AttackConfig::default();
        let out = beam_attack(
            &victim,
            &text,
            speaker().values(),
            &cfg,
            &HomoglyphTable::builtin(),
            0,
        )
        .unwrap();
        match &out.perturbation {
            Perturbation::Text { text: adv, edits } => {
                assert_eq!(adv, "abc");
                assert!(edits.is_empty());
            }
            other => panic!("expected text perturbation, got {other:?}"),
        }
        assert_eq!(out.adv.frames, out.clean.frames);
        assert_eq!(out.iterations_run, 0);
    }

    #[test]
    fn single_character_text_has_one_admissible_char_edit() {
        let victim = Victim::Nar(nar_victim_with_vocab("ab", 19));
        let text = vec!['a'];
        let edits = rank_replacements(
            &victim,
            &text,
            speaker().values(),
            0.0,
            Strategy::Char,
            &HomoglyphTable::builtin(),
        )
        .unwrap();
        assert_eq!(edits.len(), 1);
        assert_eq!(edits[0].replacement, 'b');
    }

    #[test]
    fn attack_respects_budget_and_length() {
        let victim = Victim::Nar(nar_victim_with_vocab("abcdef ", 29));
        let text: Vec<char> = "fed abc def".chars().collect();
        let cfg = AttackConfig {
            iterations: 6,
            candidates_per_strategy: 10,
            ratio: 0.2,
            ..AttackConfig::default()
        };
        let out = attack_text(
            &victim,
            &text,
            speaker().values(),
            &cfg,
            &HomoglyphTable::builtin(),
        )
        .unwrap();
        let max_edits = budget(text.len(), cfg.ratio);
        match &out.perturbation {
            Perturbation::Text { text: adv, edits } => {
                let adv_chars: Vec<char> = adv.chars().collect();
                assert_eq!(adv_chars.len(), text.len());
                assert!(edits.len() <= max_edits);
                let diff = adv_chars
                    .iter()
                    .zip(&text)
                    .filter(|(a, b)| a != b)
                    .count();
                assert_eq!(diff, edits.len());
            }
            other => panic!("expected text perturbation, got {other:?}"),
        }
        assert!(out.adv.frames >= out.clean.frames);
    }

    #[test]
    fn baseline_replaces_exactly_the_budgeted_positions() {
        let victim = nar_victim_with_vocab("abcdefghij ", 37);
        let emb = victim.embedding();
        let table = HomoglyphTable::builtin();
        let cfg = AttackConfig {
            seed: 99,
            ..AttackConfig::default()
        };

        let twenty: Vec<char> = "abcdefghij abcdefghi".chars().collect();
        assert_eq!(twenty.len(), 20);
        let cand = baseline_text_random(&twenty, &cfg, &table, emb).unwrap();
        assert_eq!(cand.edits().len(), 1);

        let long: Vec<char> = twenty.iter().cycle().take(140).copied().collect();
        let cand = baseline_text_random(&long, &cfg, &table, emb).unwrap();
        assert_eq!(cand.edits().len(), 7);
        assert_eq!(cand.chars().len(), 140);

        let again = baseline_text_random(&long, &cfg, &table, emb).unwrap();
        assert_eq!(cand, again);
    }
}
