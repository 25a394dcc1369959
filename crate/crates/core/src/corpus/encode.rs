//! Fixed-extent integer encoding of samples, and batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, PAD};
use super::tokenize;
use crate::error::{Error, Result};

/// Fixed extents of an encoded sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    /// Maximum number of context utterances.
    pub max_utterances: usize,
    /// Maximum number of knowledge sentences.
    pub max_knowledge: usize,
    /// Tokens kept per utterance, sentence and candidate.
    pub max_tokens: usize,
    /// Candidates per sample.
    pub candidates: usize,
}

impl Limits {
    pub const PERSONA: Limits = Limits {
        max_utterances: 15,
        max_knowledge: 5,
        max_tokens: 20,
        candidates: 20,
    };

    pub const CMUDOG: Limits = Limits {
        max_utterances: 8,
        max_knowledge: 20,
        max_tokens: 40,
        candidates: 20,
    };

    pub fn validate(&self) -> Result<()> {
        if self.max_utterances == 0 || self.max_knowledge == 0 || self.max_tokens == 0 || self.candidates == 0 {
            return Err(Error::Config(format!("all limits must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One training/evaluation instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub context: Vec<String>,
    pub knowledge: Vec<String>,
    pub candidates: Vec<String>,
    pub label: usize,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.label >= self.candidates.len() {
            return Err(Error::LabelOutOfRange {
                label: self.label,
                n: self.candidates.len(),
            });
        }
        let truth = &self.candidates[self.label];
        if self.candidates.iter().filter(|c| *c == truth).count() != 1 {
            return Err(Error::InvalidData("true response appears more than once".into()));
        }
        Ok(())
    }
}

/// `rows × len` token ids; a position is real iff its id is not [`PAD`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub rows: usize,
    pub len: usize,
    pub ids: Vec<u32>,
}

impl TokenGrid {
    pub fn empty(rows: usize, len: usize) -> Self {
        Self {
            rows,
            len,
            ids: vec![PAD as u32; rows * len],
        }
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.len..(r + 1) * self.len]
    }

    pub fn row_mask(&self, r: usize) -> Vec<bool> {
        self.row(r).iter().map(|&i| i as usize != PAD).collect()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&i| i as usize != PAD).collect()
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.row(r).iter().filter(|&&i| i as usize != PAD).count()
    }

    pub fn is_real_row(&self, r: usize) -> bool {
        self.row_len(r) > 0
    }

    pub fn real_rows(&self) -> usize {
        (0..self.rows).filter(|&r| self.is_real_row(r)).count()
    }

    fn set_row(&mut self, r: usize, ids: &[u32]) {
        let len = self.len;
        self.ids[r * len..r * len + ids.len()].copy_from_slice(ids);
    }

    /// Same ids with the row length extended by `extra` PAD positions.
    pub fn padded_tokens(&self, extra: usize) -> TokenGrid {
        let mut out = TokenGrid::empty(self.rows, self.len + extra);
        for r in 0..self.rows {
            out.set_row(r, self.row(r));
        }
        out
    }

    /// Same ids with `extra` all-PAD rows appended.
    pub fn padded_rows(&self, extra: usize) -> TokenGrid {
        let mut out = self.clone();
        out.rows += extra;
        out.ids.extend(std::iter::repeat_n(PAD as u32, extra * self.len));
        out
    }
}

/// An encoded [`Sample`]: context `n_c × l`, knowledge `n_k × l`,
/// candidates `n × l`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub context: TokenGrid,
    pub knowledge: TokenGrid,
    pub candidates: TokenGrid,
    pub label: usize,
}

impl EncodedSample {
    pub fn context_len(&self) -> usize {
        self.context.real_rows()
    }
}

fn encode_text(text: &str, vocab: &Vocabulary, max_tokens: usize) -> Vec<u32> {
    let toks = tokenize(text);
    let start = toks.len().saturating_sub(max_tokens);
    toks[start..].iter().map(|t| vocab.id(t) as u32).collect()
}

/// Encode `sample` at fixed extents.
///
/// Sequences keep their last `max_tokens` tokens and are right-padded. The
/// context keeps its latest `max_utterances` utterances; knowledge keeps its
/// first `max_knowledge` sentences. Kept rows are packed from row 0.
pub fn encode_sample(sample: &Sample, vocab: &Vocabulary, limits: &Limits) -> Result<EncodedSample> {
    sample.validate()?;
    if sample.candidates.len() != limits.candidates {
        return Err(Error::InvalidData(format!(
            "sample has {} candidates, limits expect {}",
            sample.candidates.len(),
            limits.candidates
        )));
    }
    let l = limits.max_tokens;
    let mut context = TokenGrid::empty(limits.max_utterances, l);
    let skip = sample.context.len().saturating_sub(limits.max_utterances);
    for (r, u) in sample.context[skip..].iter().enumerate() {
        context.set_row(r, &encode_text(u, vocab, l));
    }
    let mut knowledge = TokenGrid::empty(limits.max_knowledge, l);
    for (r, k) in sample.knowledge.iter().take(limits.max_knowledge).enumerate() {
        knowledge.set_row(r, &encode_text(k, vocab, l));
    }
    let mut candidates = TokenGrid::empty(limits.candidates, l);
    for (r, c) in sample.candidates.iter().enumerate() {
        candidates.set_row(r, &encode_text(c, vocab, l));
    }
    Ok(EncodedSample {
        context,
        knowledge,
        candidates,
        label: sample.label,
    })
}

/// Token strings of one grid row, padding dropped.
pub fn decode_row(grid: &TokenGrid, r: usize, vocab: &Vocabulary) -> Vec<String> {
    grid.row(r)
        .iter()
        .filter(|&&i| i as usize != PAD)
        .map(|&i| vocab.token(i as usize).unwrap_or("<?>").to_string())
        .collect()
}

/// Decode every real row of a grid, joining tokens with spaces.
pub fn decode_grid(grid: &TokenGrid, vocab: &Vocabulary) -> Vec<String> {
    (0..grid.rows)
        .filter(|&r| grid.is_real_row(r))
        .map(|r| decode_row(grid, r, vocab).join(" "))
        .collect()
}

/// A batch of encoded samples sharing one set of [`Limits`].
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedBatch {
    pub limits: Limits,
    pub samples: Vec<EncodedSample>,
}

impl TokenizedBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Context ids stacked to `[batch, n_c, l]` (shape, flat ids).
    pub fn context_ids(&self) -> ([usize; 3], Vec<u32>) {
        self.stack(|s| &s.context, self.limits.max_utterances)
    }

    pub fn knowledge_ids(&self) -> ([usize; 3], Vec<u32>) {
        self.stack(|s| &s.knowledge, self.limits.max_knowledge)
    }

    pub fn candidate_ids(&self) -> ([usize; 3], Vec<u32>) {
        self.stack(|s| &s.candidates, self.limits.candidates)
    }

    fn stack(&self, f: impl Fn(&EncodedSample) -> &TokenGrid, rows: usize) -> ([usize; 3], Vec<u32>) {
        let mut ids = Vec::with_capacity(self.len() * rows * self.limits.max_tokens);
        for s in &self.samples {
            ids.extend_from_slice(&f(s).ids);
        }
        ([self.len(), rows, self.limits.max_tokens], ids)
    }
}

/// Seeded shuffle of `samples` into batches of `batch_size`; the final
/// partial batch is kept. Use a different seed per epoch.
pub fn make_batches(samples: &[EncodedSample], limits: Limits, batch_size: usize, seed: u64) -> Vec<TokenizedBatch> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks(batch_size.max(1))
        .map(|chunk| TokenizedBatch {
            limits,
            samples: chunk.iter().map(|&i| samples[i].clone()).collect(),
        })
        .collect()
}

/// Same as [`make_batches`] but yields sample indices only.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use proptest::prelude::*;

    fn words(n: usize, prefix: &str) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn vocab_for(texts: &[String]) -> Vocabulary {
        build_vocabulary(texts.iter().map(|t| tokenize(t)), 1)
    }

    fn sample(context: Vec<String>, knowledge: Vec<String>, n: usize) -> Sample {
        Sample {
            context,
            knowledge,
            candidates: (0..n).map(|i| format!("cand {i}")).collect(),
            label: 0,
        }
    }

    #[test]
    fn long_utterance_keeps_last_tokens() {
        let long = words(25, "w");
        let s = sample(vec![long.clone()], vec![], 2);
        let mut all = vec![long];
        all.extend(s.candidates.clone());
        let v = vocab_for(&all);
        let limits = Limits { max_utterances: 15, max_knowledge: 5, max_tokens: 20, candidates: 2 };
        let e = encode_sample(&s, &v, &limits).unwrap();
        assert_eq!(decode_row(&e.context, 0, &v), (5..25).map(|i| format!("w{i}")).collect::<Vec<_>>());
        assert_eq!(e.context.real_rows(), 1);
    }

    #[test]
    fn short_utterance_is_right_padded() {
        let s = sample(vec![words(5, "w")], vec![], 2);
        let v = vocab_for(&[words(5, "w")]);
        let e = encode_sample(&s, &v, &Limits { candidates: 2, ..Limits::PERSONA }).unwrap();
        assert_eq!(e.context.row_len(0), 5);
        assert_eq!(e.context.row_mask(0).iter().filter(|m| **m).count(), 5);
        assert!(e.context.row(0)[5..].iter().all(|&i| i as usize == PAD));
    }

    #[test]
    fn context_keeps_latest_knowledge_keeps_first() {
        let ctx: Vec<String> = (1..=18).map(|i| format!("utt{i}")).collect();
        let kn: Vec<String> = (1..=7).map(|i| format!("fact{i}")).collect();
        let mut all = ctx.clone();
        all.extend(kn.clone());
        let v = vocab_for(&all);
        let e = encode_sample(&sample(ctx, kn, 20), &v, &Limits::PERSONA).unwrap();
        let kept = decode_grid(&e.context, &v);
        assert_eq!(kept, (4..=18).map(|i| format!("utt{i}")).collect::<Vec<_>>());
        let kk = decode_grid(&e.knowledge, &v);
        assert_eq!(kk, (1..=5).map(|i| format!("fact{i}")).collect::<Vec<_>>());
    }

    #[test]
    fn empty_knowledge_is_all_pad() {
        let v = vocab_for(&["a".to_string()]);
        let e = encode_sample(&sample(vec!["a".into()], vec![], 20), &v, &Limits::PERSONA).unwrap();
        assert_eq!(e.knowledge.real_rows(), 0);
    }

    #[test]
    fn batches_of_twelve() {
        let v = vocab_for(&["a".to_string()]);
        let e = encode_sample(&sample(vec!["a".into()], vec!["a".into()], 20), &v, &Limits::PERSONA).unwrap();
        let samples = vec![e; 25];
        let b = make_batches(&samples, Limits::PERSONA, 12, 9);
        assert_eq!(b.iter().map(TokenizedBatch::len).collect::<Vec<_>>(), vec![12, 12, 1]);
        let (shape, ids) = b[0].context_ids();
        assert_eq!(shape, [12, 15, 20]);
        assert_eq!(ids.len(), 12 * 15 * 20);
        assert_eq!(batch_indices(25, 12, 4), batch_indices(25, 12, 4));
        assert_ne!(batch_indices(25, 12, 4), batch_indices(25, 12, 5));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            ctx in prop::collection::vec(prop::collection::vec("[a-e]{1,3}", 0..30), 1..20),
            kl in 1usize..8,
        ) {
            let context: Vec<String> = ctx.iter().map(|w| w.join(" ")).collect();
            let knowledge = context.iter().take(kl).cloned().collect::<Vec<_>>();
            let s = sample(context.clone(), knowledge.clone(), 3);
            let mut all = context.clone();
            all.extend(s.candidates.clone());
            let v = vocab_for(&all);
            let limits = Limits { max_utterances: 6, max_knowledge: 3, max_tokens: 7, candidates: 3 };
            let e = encode_sample(&s, &v, &limits).unwrap();

            let skip = context.len().saturating_sub(6);
            for (r, u) in context[skip..].iter().enumerate() {
                let toks = tokenize(u);
                let keep = &toks[toks.len().saturating_sub(7)..];
                prop_assert_eq!(decode_row(&e.context, r, &v), keep.to_vec());
            }
            for grid in [&e.context, &e.knowledge, &e.candidates] {
                for (id, m) in grid.ids.iter().zip(grid.mask()) {
                    prop_assert_eq!(m, *id as usize != PAD);
                }
            }
        }
    }
}
