//! Character-level convolution producing one vector per word.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParameterStore, Tensor, Var};

pub const PAD_CHAR: usize = 0;
pub const UNK_CHAR: usize = 1;
/// PAD, UNK and the 95 printable ASCII characters.
pub const ALPHABET_SIZE: usize = 2 + 95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharConvConfig {
    pub char_dim: usize,
    pub filters: usize,
    pub windows: Vec<usize>,
    /// Longer words keep their first `max_chars` characters.
    pub max_chars: usize,
}

impl Default for CharConvConfig {
    fn default() -> Self {
        Self {
            char_dim: 16,
            filters: 50,
            windows: vec![3, 4, 5],
            max_chars: 30,
        }
    }
}

impl CharConvConfig {
    pub fn output_dim(&self) -> usize {
        self.filters * self.windows.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim() > 0 && (self.char_dim == 0 || self.windows.contains(&0) || self.max_chars == 0) {
            return Err(Error::Config("character convolution needs positive sizes".into()));
        }
        Ok(())
    }
}

pub fn char_id(c: char) -> usize {
    match c {
        ' '..='~' => 2 + (c as usize - ' ' as usize),
        _ => UNK_CHAR,
    }
}

pub fn char_ids(word: &str, max_chars: usize) -> Vec<usize> {
    word.chars().take(max_chars).map(char_id).collect()
}

pub fn table_name() -> &'static str {
    "char.table"
}

pub fn weight_name(w: usize) -> String {
    format!("char.w{w}")
}

pub fn bias_name(w: usize) -> String {
    format!("char.b{w}")
}

/// Insert the character table and per-window filters.
pub fn init_char_params<R: Rng>(store: &mut ParameterStore, cfg: &CharConvConfig, bound: f64, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    if cfg.output_dim() == 0 {
        return Ok(());
    }
    let mut table = Tensor::uniform(&[ALPHABET_SIZE, cfg.char_dim], bound, rng);
    table.data_mut()[..cfg.char_dim].iter_mut().for_each(|x| *x = 0.0);
    store.insert(table_name(), table)?;
    for &w in &cfg.windows {
        store.insert(weight_name(w), Tensor::uniform(&[w * cfg.char_dim, cfg.filters], bound, rng))?;
        store.insert(bias_name(w), Tensor::zeros(&[1, cfg.filters]))?;
    }
    Ok(())
}

/// One `filters × windows` row per word.
///
/// Words shorter than a window are left-padded with the PAD character up to
/// the window length. No activation; the max is taken over positions.
pub fn char_conv(g: &mut Graph, cfg: &CharConvConfig, words: &[&[usize]]) -> Result<Var> {
    let table = g.param(table_name())?;
    let mut per_window = Vec::with_capacity(cfg.windows.len());
    for &w in &cfg.windows {
        let mut idx = Vec::new();
        let mut segments: Vec<Range<usize>> = Vec::with_capacity(words.len());
        let mut start = 0;
        for word in words {
            let pad = w.saturating_sub(word.len());
            let padded: Vec<usize> = std::iter::repeat_n(PAD_CHAR, pad).chain(word.iter().copied()).collect();
            let positions = padded.len() + 1 - w;
            for p in 0..positions {
                idx.extend(padded[p..p + w].iter().map(|&c| Some(c)));
            }
            segments.push(start..start + positions);
            start += positions;
        }
        let chars = g.gather_rows(table, &idx)?;
        let windows = g.reshape(chars, start, w * cfg.char_dim)?;
        let weight = g.param(&weight_name(w))?;
        let bias = g.param(&bias_name(w))?;
        let conv = g.matmul(windows, weight)?;
        let conv = g.add(conv, bias)?;
        per_window.push(g.segment_max(conv, &segments)?);
    }
    g.concat_cols(&per_window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &CharConvConfig) -> ParameterStore {
        let mut store = ParameterStore::new();
        init_char_params(&mut store, cfg, 0.3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        store
    }

    #[test]
    fn alphabet_mapping() {
        assert_eq!(char_id(' '), 2);
        assert_eq!(char_id('~'), ALPHABET_SIZE - 1);
        assert_eq!(char_id('é'), UNK_CHAR);
        assert_eq!(char_ids("abcdef", 3).len(), 3);
    }

    /// Direct loop over windows as the reference.
    fn reference(store: &ParameterStore, cfg: &CharConvConfig, word: &[usize]) -> Vec<f64> {
        let table = store.get(table_name()).unwrap();
        let mut out = Vec::new();
        for &w in &cfg.windows {
            let weight = store.get(&weight_name(w)).unwrap();
            let bias = store.get(&bias_name(w)).unwrap();
            let mut padded = vec![PAD_CHAR; w.saturating_sub(word.len())];
            padded.extend_from_slice(word);
            let mut best = vec![f64::NEG_INFINITY; cfg.filters];
            for p in 0..=padded.len() - w {
                for f in 0..cfg.filters {
                    let mut acc = bias.at(0, f);
                    for k in 0..w {
                        for d in 0..cfg.char_dim {
                            acc += table.at(padded[p + k], d) * weight.at(k * cfg.char_dim + d, f);
                        }
                    }
                    best[f] = best[f].max(acc);
                }
            }
            out.extend(best);
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        let cfg = CharConvConfig { char_dim: 3, filters: 4, windows: vec![2, 3], max_chars: 10 };
        let store = setup(&cfg);
        let words = [char_ids("hello", 10), char_ids("a", 10), char_ids("xyz", 10)];
        let refs: Vec<&[usize]> = words.iter().map(|w| w.as_slice()).collect();
        let mut g = Graph::with_store(&store);
        let out = char_conv(&mut g, &cfg, &refs).unwrap();
        assert_eq!(g.dims(out), (3, 8));
        for (i, w) in words.iter().enumerate() {
            let want = reference(&store, &cfg, w);
            for (a, b) in g.value(out).row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_width_is_150() {
        let cfg = CharConvConfig::default();
        assert_eq!(cfg.output_dim(), 150);
        let store = setup(&cfg);
        let w = char_ids("x", 30);
        let mut g = Graph::with_store(&store);
        let out = char_conv(&mut g, &cfg, &[w.as_slice()]).unwrap();
        assert_eq!(g.dims(out), (1, 150));
    }

    #[test]
    fn order_of_characters_matters() {
        let cfg = CharConvConfig { char_dim: 3, filters: 4, windows: vec![2, 3], max_chars: 10 };
        let store = setup(&cfg);
        let (a, b) = (char_ids("stop", 10), char_ids("pots", 10));
        let mut g = Graph::with_store(&store);
        let out = char_conv(&mut g, &cfg, &[a.as_slice(), b.as_slice()]).unwrap();
        let t = g.value(out);
        assert!(t.row(0).iter().zip(t.row(1)).any(|(x, y)| x != y));
    }

    #[test]
    fn short_words_and_truncation() {
        let cfg = CharConvConfig { char_dim: 2, filters: 3, windows: vec![3, 5], max_chars: 6 };
        let store = setup(&cfg);
        // a one-character word is padded up to every window
        let short = char_ids("a", 6);
        let long = char_ids("abcdefghij", 6);
        assert_eq!(long.len(), 6);
        let mut g = Graph::with_store(&store);
        let out = char_conv(&mut g, &cfg, &[short.as_slice(), long.as_slice()]).unwrap();
        assert_eq!(g.dims(out), (2, 6));
        assert_eq!(g.value(out).row(0), reference(&store, &cfg, &short).as_slice());
    }

    proptest::proptest! {
        #[test]
        fn rows_do_not_depend_on_neighbours(words in proptest::collection::vec("[a-z]{1,9}", 1..5), probe in "[a-z]{1,9}") {
            let cfg = CharConvConfig { char_dim: 3, filters: 2, windows: vec![2, 4], max_chars: 8 };
            let store = setup(&cfg);
            let p = char_ids(&probe, 8);
            let mut g = Graph::with_store(&store);
            let alone = char_conv(&mut g, &cfg, &[p.as_slice()]).unwrap();
            let ids: Vec<Vec<usize>> = words.iter().map(|w| char_ids(w, 8)).collect();
            let mut refs: Vec<&[usize]> = ids.iter().map(|w| w.as_slice()).collect();
            let at = refs.len() / 2;
            refs.insert(at, p.as_slice());
            let batch = char_conv(&mut g, &cfg, &refs).unwrap();
            proptest::prop_assert_eq!(g.value(alone).row(0), g.value(batch).row(at));
        }
    }
}
