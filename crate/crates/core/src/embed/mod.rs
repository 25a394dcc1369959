//! Token representations: frozen pretrained and corpus-trained tables plus
//! a trainable character convolution, concatenated per token.

mod charconv;
mod skipgram;
mod vectors;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use charconv::{
    bias_name, char_conv, char_id, char_ids, init_char_params, table_name, weight_name, CharConvConfig, ALPHABET_SIZE,
    PAD_CHAR, UNK_CHAR,
};
pub use skipgram::{train_skipgram, SkipGramConfig};
pub use vectors::{load_word_vectors, load_word_vectors_file, write_word_vectors, LoadStats};

use crate::corpus::{Vocabulary, PAD, UNK};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub pretrained_dim: usize,
    pub corpus_dim: usize,
    pub chars: CharConvConfig,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            pretrained_dim: 300,
            corpus_dim: 100,
            chars: CharConvConfig::default(),
        }
    }
}

impl EmbedConfig {
    pub fn dim(&self) -> usize {
        self.pretrained_dim + self.corpus_dim + self.chars.output_dim()
    }
}

/// Frozen word tables and the character spelling of every vocabulary id.
/// The tables never enter the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub config: EmbedConfig,
    pub pretrained: Tensor,
    pub corpus: Tensor,
    spellings: Vec<Vec<usize>>,
}

impl Embeddings {
    pub fn new(vocab: &Vocabulary, config: EmbedConfig, pretrained: Tensor, corpus: Tensor) -> Result<Self> {
        config.chars.validate()?;
        for (what, t, dim) in [
            ("pretrained", &pretrained, config.pretrained_dim),
            ("corpus", &corpus, config.corpus_dim),
        ] {
            if t.shape() != [vocab.len(), dim] {
                return Err(Error::shape(
                    "embeddings",
                    format!("{what} table is {:?}, expected [{}, {dim}]", t.shape(), vocab.len()),
                ));
            }
        }
        let spellings = (0..vocab.len())
            .map(|id| match id {
                PAD => Vec::new(),
                UNK => vec![UNK_CHAR],
                _ => char_ids(vocab.token(id).unwrap_or(""), config.chars.max_chars),
            })
            .collect();
        Ok(Self {
            config,
            pretrained,
            corpus,
            spellings,
        })
    }

    /// Random frozen tables with zero PAD rows; for synthetic setups.
    pub fn random<R: Rng>(vocab: &Vocabulary, config: EmbedConfig, bound: f64, rng: &mut R) -> Result<Self> {
        let mut tables = Vec::new();
        for dim in [config.pretrained_dim, config.corpus_dim] {
            let mut t = Tensor::uniform(&[vocab.len(), dim], bound, rng);
            t.data_mut()[..dim].iter_mut().for_each(|x| *x = 0.0);
            tables.push(t);
        }
        let corpus = tables.pop().expect("two tables");
        let pretrained = tables.pop().expect("two tables");
        Self::new(vocab, config, pretrained, corpus)
    }

    pub fn vocab_size(&self) -> usize {
        self.spellings.len()
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn spelling(&self, id: usize) -> &[usize] {
        &self.spellings[id]
    }
}

/// Embeddings of a set of distinct token ids, computed once and gathered
/// into as many sequences as needed.
pub struct TokenFeatures {
    pub features: Var,
    index: HashMap<u32, usize>,
}

impl TokenFeatures {
    pub fn build(g: &mut Graph, emb: &Embeddings, ids: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut unique: Vec<u32> = Vec::new();
        let mut index = HashMap::new();
        for id in ids {
            if id as usize == PAD || index.contains_key(&id) {
                continue;
            }
            if id as usize >= emb.vocab_size() {
                return Err(Error::IdOutOfRange {
                    id: id as usize,
                    size: emb.vocab_size(),
                });
            }
            index.insert(id, unique.len());
            unique.push(id);
        }
        let (dp, dc) = (emb.config.pretrained_dim, emb.config.corpus_dim);
        let mut parts = Vec::new();
        if dp + dc > 0 {
            let mut frozen = Vec::with_capacity(unique.len() * (dp + dc));
            for &id in &unique {
                frozen.extend_from_slice(emb.pretrained.row(id as usize));
                frozen.extend_from_slice(emb.corpus.row(id as usize));
            }
            parts.push(g.constant(Tensor::matrix(unique.len(), dp + dc, frozen)));
        }
        if emb.config.chars.output_dim() > 0 {
            let words: Vec<&[usize]> = unique.iter().map(|&id| emb.spelling(id as usize)).collect();
            parts.push(char_conv(g, &emb.config.chars, &words)?);
        }
        let features = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_cols(&parts)?
        };
        Ok(Self { features, index })
    }

    /// `ids.len() × d`; PAD positions are zero rows.
    pub fn lookup(&self, g: &mut Graph, ids: &[u32]) -> Result<Var> {
        let idx: Vec<Option<usize>> = ids
            .iter()
            .map(|id| {
                if *id as usize == PAD {
                    Ok(None)
                } else {
                    self.index
                        .get(id)
                        .map(|&i| Some(i))
                        .ok_or(Error::IdOutOfRange { id: *id as usize, size: self.index.len() })
                }
            })
            .collect::<Result<_>>()?;
        g.gather_rows(self.features, &idx)
    }
}

/// Embed one id sequence.
pub fn embed_tokens(g: &mut Graph, emb: &Embeddings, ids: &[u32]) -> Result<Var> {
    let feats = TokenFeatures::build(g, emb, ids.iter().copied())?;
    feats.lookup(g, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use crate::numerics::ParameterStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: EmbedConfig) -> (Vocabulary, Embeddings, ParameterStore) {
        let vocab = build_vocabulary([vec!["cat".to_string(), "dog".to_string()]], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = Embeddings::random(&vocab, cfg.clone(), 0.5, &mut rng).unwrap();
        let mut store = ParameterStore::new();
        init_char_params(&mut store, &cfg.chars, 0.2, &mut rng).unwrap();
        (vocab, emb, store)
    }

    #[test]
    fn full_width_and_zero_pad() {
        let (vocab, emb, store) = setup(EmbedConfig::default());
        let mut g = Graph::with_store(&store);
        let ids = [vocab.id("cat") as u32, PAD as u32, vocab.id("dog") as u32, PAD as u32];
        let out = embed_tokens(&mut g, &emb, &ids).unwrap();
        assert_eq!(g.dims(out), (4, 550));
        let t = g.value(out);
        assert!(t.row(1).iter().all(|x| *x == 0.0));
        assert!(t.row(3).iter().all(|x| *x == 0.0));
        assert_eq!(&t.row(0)[..300], emb.pretrained.row(vocab.id("cat")));
        assert_eq!(&t.row(2)[300..400], emb.corpus.row(vocab.id("dog")));
    }

    #[test]
    fn pretrained_only() {
        let cfg = EmbedConfig {
            pretrained_dim: 300,
            corpus_dim: 0,
            chars: CharConvConfig { filters: 0, ..Default::default() },
        };
        let (vocab, emb, store) = setup(cfg);
        let mut g = Graph::with_store(&store);
        let out = embed_tokens(&mut g, &emb, &[vocab.id("cat") as u32]).unwrap();
        assert_eq!(g.dims(out), (1, 300));
    }

    #[test]
    fn unknown_id_rejected() {
        let (_, emb, store) = setup(EmbedConfig::default());
        let mut g = Graph::with_store(&store);
        assert!(matches!(
            embed_tokens(&mut g, &emb, &[99]),
            Err(Error::IdOutOfRange { .. })
        ));
    }
}
