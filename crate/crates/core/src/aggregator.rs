//! From token-level matching features to the final matching vector.

use crate::encoder::{last_real, BiLstm};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// `[masked max ; last real row]` for every block of `len` rows of `states`.
/// Blocks without a real row give a zero vector.
pub fn pool_max_last(g: &mut Graph, states: Var, mask: &[bool], len: usize) -> Result<Var> {
    let blocks = mask.len() / len;
    let mut real = Vec::new();
    let mut segments = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let start = real.len();
        real.extend((b * len..(b + 1) * len).filter(|&r| mask[r]).map(Some));
        segments.push(start..real.len());
    }
    let compact = g.gather_rows(states, &real)?;
    let max = g.segment_max(compact, &segments)?;
    let last = g.gather_rows(states, &last_real(mask, len))?;
    g.concat_cols(&[max, last])
}

/// Sentence features `[B × 4h]` for `B` stacked token-feature blocks.
pub fn sentence_aggregate(g: &mut Graph, lstm: &BiLstm, feats: Var, mask: &[bool], len: usize) -> Result<Var> {
    let states = lstm.encode(g, feats, mask, len)?;
    pool_max_last(g, states, mask, len)
}

/// Session feature `M_c` per block of `n_c` utterance features.
pub fn session_aggregate(g: &mut Graph, lstm: &BiLstm, units: Var, unit_mask: &[bool], n_c: usize) -> Result<Var> {
    if unit_mask.chunks(n_c).any(|m| !m.iter().any(|x| *x)) {
        return Err(Error::EmptyContext);
    }
    sentence_aggregate(g, lstm, units, unit_mask, n_c)
}

pub struct PostSelection {
    /// `M_k [1 × D]`.
    pub m_k: Var,
    /// `γ [n_k × 1]`, zero at padded entries.
    pub gamma: Var,
}

/// `γ = softmax(K^s · M_r^c)` over real entries and `M_k = γᵀ K^s`. With
/// `mean_pool`, `γ` is uniform over real entries instead.
pub fn knowledge_post_select(
    g: &mut Graph,
    k_s: Var,
    entry_mask: &[bool],
    m_rc: Var,
    mean_pool: bool,
) -> Result<PostSelection> {
    let (n, d) = g.dims(k_s);
    if entry_mask.len() != n || g.dims(m_rc) != (1, d) {
        return Err(Error::shape(
            "knowledge_post_select",
            format!("K^s {n}x{d}, mask {}, M_r^c {:?}", entry_mask.len(), g.dims(m_rc)),
        ));
    }
    let real = entry_mask.iter().filter(|m| **m).count();
    if real == 0 {
        return Err(Error::EmptyKnowledge);
    }
    let gamma = if mean_pool {
        let w = entry_mask.iter().map(|&m| if m { 1.0 / real as f64 } else { 0.0 }).collect();
        g.constant(Tensor::matrix(n, 1, w))
    } else {
        let mt = g.transpose(m_rc);
        let logits = g.matmul(k_s, mt)?;
        g.masked_softmax(logits, entry_mask, 0, true)?
    };
    let gt = g.transpose(gamma);
    let m_k = g.matmul(gt, k_s)?;
    Ok(PostSelection { m_k, gamma })
}

/// `[M_c ; M_k ; M_r ; M_r^c]` as `B` rows of width `4·width`. Missing
/// parts (ablations) are zero blocks of the same width.
pub fn assemble_final(g: &mut Graph, parts: [Option<Var>; 4], rows: usize, width: usize) -> Result<Var> {
    let mut blocks = Vec::with_capacity(4);
    for p in parts {
        match p {
            Some(v) if g.dims(v) == (rows, width) => blocks.push(v),
            Some(v) => {
                return Err(Error::shape(
                    "assemble_final",
                    format!("part {:?}, expected {rows}x{width}", g.dims(v)),
                ))
            }
            None => blocks.push(g.constant(Tensor::zeros(&[rows, width]))),
        }
    }
    g.concat_cols(&blocks)
}
