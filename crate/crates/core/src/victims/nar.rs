//! Non-autoregressive surrogate: a per-token duration head. Output
//! length is `frames_per_unit * sum(ceil(d_i))` and the attack loss is
//! the negated duration sum, so minimizing it stretches the output.

use crate::tensor::{softplus_value, Graph, Tensor};

use super::{
    dense_dot, dense_matvec, init_weight, EmbeddingTable, Evaluation, TokenId, VictimError,
    VictimOutput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NarDims {
    pub d_text: usize,
    pub d_spk: usize,
    pub d_h: usize,
    pub frames_per_unit: u32,
}

impl Default for NarDims {
    fn default() -> Self {
        Self {
            d_text: 16,
            d_spk: 32,
            d_h: 32,
            frames_per_unit: 256,
        }
    }
}

impl NarDims {
    pub fn validate(&self) -> Result<(), VictimError> {
        let checks = [
            (self.d_text >= 2, "d_text must be at least 2"),
            (self.d_spk >= 1, "d_spk must be positive"),
            (self.d_h >= 1, "d_h must be positive"),
            (self.frames_per_unit >= 1, "frames_per_unit must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(VictimError::InvalidDims(msg.to_string()));
            }
        }
        Ok(())
    }
}

/// Duration head: affine + tanh + affine + softplus over `[E(t_i); s]`.
#[derive(Debug, Clone)]
pub struct NarVictim {
    embedding: EmbeddingTable,
    dims: NarDims,
    hidden_weight: Vec<f64>,
    hidden_bias: Vec<f64>,
    out_weight: Vec<f64>,
    out_bias: f64,
    seed: u64,
}

impl NarVictim {
    pub fn generate(
        embedding: EmbeddingTable,
        dims: NarDims,
        seed: u64,
    ) -> Result<Self, VictimError> {
        dims.validate()?;
        if embedding.d_text() != dims.d_text {
            return Err(VictimError::InvalidDims(format!(
                "embedding d_text {} does not match victim d_text {}",
                embedding.d_text(),
                dims.d_text
            )));
        }
        let (dt, ds, dh) = (dims.d_text, dims.d_spk, dims.d_h);
        Ok(Self {
            embedding,
            dims,
            hidden_weight: init_weight(seed, &["nar", "hidden_weight"], dh * (dt + ds), dt + ds),
            hidden_bias: vec![0.0; dh],
            out_weight: init_weight(seed, &["nar", "out_weight"], dh, dh),
            out_bias: 0.0,
            seed,
        })
    }

    pub(crate) fn from_parts(
        embedding: EmbeddingTable,
        dims: NarDims,
        hidden_weight: Vec<f64>,
        hidden_bias: Vec<f64>,
        out_weight: Vec<f64>,
        out_bias: f64,
        seed: u64,
    ) -> Self {
        Self {
            embedding,
            dims,
            hidden_weight,
            hidden_bias,
            out_weight,
            out_bias,
            seed,
        }
    }

    pub fn embedding(&self) -> &EmbeddingTable {
        &self.embedding
    }

    pub fn dims(&self) -> NarDims {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn weights(&self) -> NarWeightsRef<'_> {
        NarWeightsRef {
            hidden_weight: &self.hidden_weight,
            hidden_bias: &self.hidden_bias,
            out_weight: &self.out_weight,
            out_bias: self.out_bias,
        }
    }

    /// Per-token head MACs times the token count; there is no constant
    /// phase.
    pub fn mac_count_for(&self, tokens: usize) -> u64 {
        let (dt, ds, dh) = (
            self.dims.d_text as u64,
            self.dims.d_spk as u64,
            self.dims.d_h as u64,
        );
        tokens as u64 * (dh * (dt + ds) + dh)
    }

    fn check_inputs(&self, ids: &[TokenId], speaker: &[f64]) -> Result<(), VictimError> {
        if ids.is_empty() {
            return Err(VictimError::EmptyText);
        }
        if speaker.len() != self.dims.d_spk {
            return Err(VictimError::SpeakerDimMismatch {
                expected: self.dims.d_spk,
                found: speaker.len(),
            });
        }
        Ok(())
    }

    fn frames_for(&self, durations: &[f64]) -> u64 {
        let units: u64 = durations.iter().map(|d| d.ceil() as u64).sum();
        self.dims.frames_per_unit as u64 * units
    }

    pub fn evaluate(&self, ids: &[TokenId], speaker: &[f64]) -> Result<Evaluation, VictimError> {
        self.check_inputs(ids, speaker)?;
        let rows: Vec<&[f64]> = ids.iter().map(|&id| self.embedding.row(id)).collect();
        Ok(self.evaluate_rows(&rows, speaker))
    }

    /// Dense forward over explicit embedding rows (also used by the
    /// finite-difference and first-order oracles).
    pub(crate) fn evaluate_rows(&self, rows: &[&[f64]], speaker: &[f64]) -> Evaluation {
        let dims = self.dims;
        let dh = dims.d_h;
        let mut durations = Vec::with_capacity(rows.len());
        let mut cat = vec![0.0; dims.d_text + dims.d_spk];
        let mut hidden = vec![0.0; dh];
        for row in rows {
            cat[..dims.d_text].copy_from_slice(row);
            cat[dims.d_text..].copy_from_slice(speaker);
            dense_matvec(
                &self.hidden_weight,
                dh,
                dims.d_text + dims.d_spk,
                &cat,
                &mut hidden,
            );
            for (h, b) in hidden.iter_mut().zip(&self.hidden_bias) {
                *h = (*h + b).tanh();
            }
            let logit = dense_dot(&self.out_weight, &hidden) + self.out_bias;
            durations.push(softplus_value(logit));
        }
        let mut loss = 0.0;
        for d in &durations {
            loss += d;
        }
        Evaluation {
            frames: self.frames_for(&durations),
            mac_count: self.mac_count_for(rows.len()),
            loss: -loss,
            steps_or_durations: durations,
        }
    }

    /// Differentiable forward pass; loss is the negated duration sum.
    pub fn forward(&self, ids: &[TokenId], speaker: &[f64]) -> Result<VictimOutput, VictimError> {
        self.check_inputs(ids, speaker)?;
        let dims = self.dims;
        let dh = dims.d_h;
        let mut g = Graph::new();

        let speaker_node = g.leaf(Tensor::vector(speaker.to_vec())?);
        let text_nodes: Vec<_> = ids
            .iter()
            .map(|&id| g.leaf(Tensor::vector(self.embedding.row(id).to_vec()).expect("finite row")))
            .collect();

        let hidden_w = g.leaf(Tensor::matrix(
            dh,
            dims.d_text + dims.d_spk,
            self.hidden_weight.clone(),
        )?);
        let hidden_b = g.leaf(Tensor::vector(self.hidden_bias.clone())?);
        let out_w = g.leaf(Tensor::matrix(1, dh, self.out_weight.clone())?);
        let out_b = g.leaf(Tensor::vector(vec![self.out_bias])?);

        let mut durations = Vec::with_capacity(ids.len());
        let mut sum = None;
        for &e in &text_nodes {
            let cat = g.concat(e, speaker_node)?;
            let pre = g.matvec(hidden_w, cat)?;
            let pre = g.add(pre, hidden_b)?;
            let hidden = g.tanh(pre);
            let logit_vec = g.matvec(out_w, hidden)?;
            let logit = g.add(logit_vec, out_b)?;
            let duration = g.softplus(logit);
            durations.push(g.value(duration).item());
            sum = Some(match sum {
                None => duration,
                Some(acc) => g.add(acc, duration)?,
            });
        }
        let loss = g.neg(sum.expect("nonempty text"));

        let frames = self.frames_for(&durations);
        let mac_count = self.mac_count_for(ids.len());
        Ok(VictimOutput::new(
            frames,
            durations,
            mac_count,
            g,
            loss,
            speaker_node,
            text_nodes,
        ))
    }
}

pub(crate) struct NarWeightsRef<'a> {
    pub hidden_weight: &'a [f64],
    pub hidden_bias: &'a [f64],
    pub out_weight: &'a [f64],
    pub out_bias: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::HomoglyphTable;
    use crate::victims::SpeakerEmbedding;
    use std::collections::BTreeSet;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn small_dims() -> NarDims {
        NarDims {
            d_text: 4,
            d_spk: 6,
            d_h: 8,
            frames_per_unit: 256,
        }
    }

    fn embedding(text: &str, d_text: usize, seed: u64) -> EmbeddingTable {
        let chars: BTreeSet<char> = text.chars().collect();
        EmbeddingTable::generate(&chars, &HomoglyphTable::builtin(), d_text, seed).unwrap()
    }

    fn zero_weight_victim() -> NarVictim {
        let dims = small_dims();
        let emb = embedding("abcd", dims.d_text, 1);
        let mut v = NarVictim::generate(emb, dims, 1).unwrap();
        v.hidden_weight.iter_mut().for_each(|w| *w = 0.0);
        v.out_weight.iter_mut().for_each(|w| *w = 0.0);
        v
    }

    #[test]
    fn zero_weights_give_ln2_durations() {
        let v = zero_weight_victim();
        let ids = v.embedding().encode(&['a', 'b', 'c', 'd']).unwrap();
        let s = vec![0.2; v.dims().d_spk];
        let eval = v.evaluate(&ids, &s).unwrap();
        for &d in &eval.steps_or_durations {
            assert!((d - LN_2).abs() < 1e-15);
        }
        // ceil(ln 2) = 1 per token: 4 tokens * 256 frames.
        assert_eq!(eval.frames, 4 * 256);
    }

    #[test]
    fn loss_is_negated_duration_sum() {
        let dims = small_dims();
        let emb = embedding("abcd", dims.d_text, 4);
        let v = NarVictim::generate(emb, dims, 4).unwrap();
        let ids = v.embedding().encode(&['a', 'b', 'c']).unwrap();
        let s = SpeakerEmbedding::seeded(dims.d_spk, 9, "s");
        let eval = v.evaluate(&ids, s.values()).unwrap();
        let sum: f64 = eval.steps_or_durations.iter().sum();
        assert!((eval.loss + sum).abs() < 1e-12);

        // The scalar form: durations (1, 2, 3) sum to a loss of -6.
        let durations = [1.0, 2.0, 3.0];
        let loss: f64 = -durations.iter().sum::<f64>();
        assert_eq!(loss, -6.0);
    }

    #[test]
    fn forward_and_evaluate_agree_bit_for_bit() {
        let dims = small_dims();
        let emb = embedding("abcd e", dims.d_text, 12);
        let v = NarVictim::generate(emb, dims, 12).unwrap();
        let ids = v.embedding().encode(&['a', 'b', ' ', 'e', 'd']).unwrap();
        let s = SpeakerEmbedding::seeded(dims.d_spk, 13, "s");
        let eval = v.evaluate(&ids, s.values()).unwrap();
        let fwd = v.forward(&ids, s.values()).unwrap();
        assert_eq!(eval.frames, fwd.frames());
        assert_eq!(eval.steps_or_durations, fwd.steps_or_durations());
        assert_eq!(eval.loss, fwd.loss());
        assert_eq!(eval.mac_count, fwd.mac_count());
    }

    #[test]
    fn raising_a_duration_never_lowers_frames() {
        let v = zero_weight_victim();
        let base = [0.3, 1.2, 2.0];
        let frames = v.frames_for(&base);
        for i in 0..base.len() {
            let mut bumped = base;
            bumped[i] += 1.0;
            assert!(v.frames_for(&bumped) >= frames);
        }
    }

    #[test]
    fn mac_count_scales_with_token_count() {
        let dims = small_dims();
        let emb = embedding("ab", dims.d_text, 3);
        let v = NarVictim::generate(emb, dims, 3).unwrap();
        let per_token = v.mac_count_for(1);
        assert_eq!(v.mac_count_for(7), 7 * per_token);
        let expected =
            dims.d_h as u64 * (dims.d_text as u64 + dims.d_spk as u64) + dims.d_h as u64;
        assert_eq!(per_token, expected);
    }

    #[test]
    fn durations_are_strictly_positive() {
        let dims = small_dims();
        let emb = embedding("abcd", dims.d_text, 21);
        let v = NarVictim::generate(emb, dims, 21).unwrap();
        for seed in 0..20 {
            let s = SpeakerEmbedding::seeded(dims.d_spk, seed, "s");
            let ids = v.embedding().encode(&['a', 'c', 'd']).unwrap();
            let eval = v.evaluate(&ids, s.values()).unwrap();
            assert!(eval.steps_or_durations.iter().all(|&d| d > 0.0));
        }
    }
}
