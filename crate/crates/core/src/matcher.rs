//! Cross-attention between a long sequence (all context utterances, or all
//! knowledge sentences, back to back) and one response candidate.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// Units laid end to end: `states [n·len × w]`, one mask entry per row.
#[derive(Clone, Debug)]
pub struct LongSequence {
    pub states: Var,
    pub mask: Vec<bool>,
    pub unit_len: usize,
}

impl LongSequence {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn units(&self) -> usize {
        self.mask.len() / self.unit_len
    }

    /// Unit index of every row.
    pub fn segments(&self) -> Vec<usize> {
        (0..self.len()).map(|r| r / self.unit_len).collect()
    }
}

/// The stacked layout is already token order within and across units, so
/// flattening only records the bookkeeping.
pub fn flatten_units(g: &Graph, units: Var, mask: &[bool], unit_len: usize) -> Result<LongSequence> {
    let rows = g.dims(units).0;
    if mask.len() != rows || unit_len == 0 || !rows.is_multiple_of(unit_len) {
        return Err(Error::shape(
            "flatten_units",
            format!("{rows} rows, {} mask entries, unit length {unit_len}", mask.len()),
        ));
    }
    Ok(LongSequence {
        states: units,
        mask: mask.to_vec(),
        unit_len,
    })
}

pub struct CrossAttention {
    /// `E = X Rᵀ`, `[L × l_r]`.
    pub e: Var,
    /// Row softmax of `E` over real response tokens; zero rows at padded `x`.
    pub alpha: Var,
    /// Column softmax of `E` over real `x` tokens; zero columns at padded `r`.
    pub beta: Var,
    /// `α R`.
    pub x_hat: Var,
    /// `βᵀ X`.
    pub r_hat: Var,
}

pub fn cross_attend(g: &mut Graph, x: Var, x_mask: &[bool], r: Var, r_mask: &[bool]) -> Result<CrossAttention> {
    let (lx, w) = g.dims(x);
    let (lr, wr) = g.dims(r);
    if w != wr || x_mask.len() != lx || r_mask.len() != lr {
        return Err(Error::shape(
            "cross_attend",
            format!("x {lx}x{w} ({} mask), r {lr}x{wr} ({} mask)", x_mask.len(), r_mask.len()),
        ));
    }
    if !x_mask.iter().any(|m| *m) || !r_mask.iter().any(|m| *m) {
        return Err(Error::EmptySupport("cross_attend"));
    }
    let rt = g.transpose(r);
    let e = g.matmul(x, rt)?;
    let pair: Vec<bool> = x_mask
        .iter()
        .flat_map(|&a| r_mask.iter().map(move |&b| a && b))
        .collect();
    let alpha = g.masked_softmax(e, &pair, 1, false)?;
    let beta = g.masked_softmax(e, &pair, 0, false)?;
    let x_hat = g.matmul(alpha, r)?;
    let bt = g.transpose(beta);
    let r_hat = g.matmul(bt, x)?;
    Ok(CrossAttention {
        e,
        alpha,
        beta,
        x_hat,
        r_hat,
    })
}

/// `[X, X̂, X − X̂, X ∘ X̂]`.
pub fn enrich(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    if g.dims(x) != g.dims(x_hat) {
        return Err(Error::shape(
            "enrich",
            format!("{:?} against {:?}", g.dims(x), g.dims(x_hat)),
        ));
    }
    let diff = g.sub(x, x_hat)?;
    let prod = g.mul(x, x_hat)?;
    g.concat_cols(&[x, x_hat, diff, prod])
}

/// Enriched features for the long side and for the response.
pub fn match_pair(g: &mut Graph, side: &LongSequence, r: Var, r_mask: &[bool]) -> Result<(Var, Var)> {
    let att = cross_attend(g, side.states, &side.mask, r, r_mask)?;
    let side_feats = enrich(g, side.states, att.x_hat)?;
    let resp_feats = enrich(g, r, att.r_hat)?;
    Ok((side_feats, resp_feats))
}
