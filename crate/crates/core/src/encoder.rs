//! Bidirectional LSTM over padded, row-stacked sequences.
//!
//! Sequences are stacked as `B` blocks of `len` rows. Each direction runs
//! only over the real positions of a sequence (in order, or reversed), so
//! padding anywhere leaves the real outputs untouched. Padded rows of the
//! output are zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParameterStore, Tensor, Var};

/// Names of one direction's parameters: `U [d_in × 4h]`, `V [h × 4h]`,
/// `b [1 × 4h]`, gate blocks ordered i, f, o, g.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmNames {
    pub u: String,
    pub v: String,
    pub b: String,
}

impl LstmNames {
    fn new(prefix: &str) -> Self {
        Self {
            u: format!("{prefix}.U"),
            v: format!("{prefix}.V"),
            b: format!("{prefix}.b"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiLstm {
    pub input_dim: usize,
    pub hidden: usize,
    pub forward: LstmNames,
    pub backward: LstmNames,
}

impl BiLstm {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            forward: LstmNames::new(&format!("{prefix}.fw")),
            backward: LstmNames::new(&format!("{prefix}.bw")),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Weights uniform in ±`bound`, biases zero except the forget gate at 1.
    pub fn init<R: Rng>(&self, store: &mut ParameterStore, bound: f64, rng: &mut R) -> Result<()> {
        let h = self.hidden;
        for names in [&self.forward, &self.backward] {
            store.insert(&names.u, Tensor::uniform(&[self.input_dim, 4 * h], bound, rng))?;
            store.insert(&names.v, Tensor::uniform(&[h, 4 * h], bound, rng))?;
            let mut b = Tensor::zeros(&[1, 4 * h]);
            b.data_mut()[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
            store.insert(&names.b, b)?;
        }
        Ok(())
    }

    /// Encode `B = mask.len() / len` stacked sequences; `xs` is `[B·len × d_in]`.
    pub fn encode(&self, g: &mut Graph, xs: Var, mask: &[bool], len: usize) -> Result<Var> {
        let (rows, cols) = g.dims(xs);
        if cols != self.input_dim || mask.len() != rows || len == 0 || rows % len != 0 {
            return Err(Error::shape(
                "bilstm_encode",
                format!("input {rows}x{cols}, mask {}, len {len}, d_in {}", mask.len(), self.input_dim),
            ));
        }
        let batch = rows / len;
        let real: Vec<Vec<usize>> = (0..batch)
            .map(|s| (s * len..(s + 1) * len).filter(|&r| mask[r]).collect())
            .collect();
        let fw = self.run(g, xs, &self.forward, &real, false)?;
        let bw = self.run(g, xs, &self.backward, &real, true)?;
        g.concat_cols(&[fw, bw])
    }

    /// One direction; returns `[B·len × h]` with zero rows at padding.
    fn run(&self, g: &mut Graph, xs: Var, names: &LstmNames, real: &[Vec<usize>], reverse: bool) -> Result<Var> {
        let h = self.hidden;
        let batch = real.len();
        let rows = g.dims(xs).0;
        let steps = real.iter().map(Vec::len).max().unwrap_or(0);
        if steps == 0 {
            return Ok(g.constant(Tensor::zeros(&[rows, h])));
        }
        let u = g.param(&names.u)?;
        let v = g.param(&names.v)?;
        let b = g.param(&names.b)?;
        let xu = g.matmul(xs, u)?;
        let pre_x = g.add(xu, b)?;
        let mut state_h = g.constant(Tensor::zeros(&[batch, h]));
        let mut state_c = g.constant(Tensor::zeros(&[batch, h]));
        let mut outputs = Vec::with_capacity(steps);
        let mut source: Vec<Option<usize>> = vec![None; rows];
        for t in 0..steps {
            let idx: Vec<Option<usize>> = real
                .iter()
                .map(|pos| {
                    (t < pos.len()).then(|| if reverse { pos[pos.len() - 1 - t] } else { pos[t] })
                })
                .collect();
            for (s, r) in idx.iter().enumerate() {
                if let Some(r) = r {
                    source[*r] = Some(t * batch + s);
                }
            }
            let x_t = g.gather_rows(pre_x, &idx)?;
            let (h_t, c_t) = cell(g, x_t, state_h, state_c, v, h)?;
            outputs.push(h_t);
            state_h = h_t;
            state_c = c_t;
        }
        let all = g.concat_rows(&outputs)?;
        g.gather_rows(all, &source)
    }
}

/// Gates from `pre = xU + b` (already computed) and the previous state.
fn cell(g: &mut Graph, pre_x: Var, h_prev: Var, c_prev: Var, v: Var, h: usize) -> Result<(Var, Var)> {
    let batch = g.dims(pre_x).0;
    let hv = g.matmul(h_prev, v)?;
    let pre = g.add(pre_x, hv)?;
    let sig_part = g.slice(pre, 0..batch, 0..3 * h)?;
    let sig = g.sigmoid(sig_part);
    let cand_part = g.slice(pre, 0..batch, 3 * h..4 * h)?;
    let cand = g.tanh(cand_part);
    let i = g.slice(sig, 0..batch, 0..h)?;
    let f = g.slice(sig, 0..batch, h..2 * h)?;
    let o = g.slice(sig, 0..batch, 2 * h..3 * h)?;
    let ig = g.mul(i, cand)?;
    let fc = g.mul(f, c_prev)?;
    let c = g.add(ig, fc)?;
    let tc = g.tanh(c);
    let h_t = g.mul(o, tc)?;
    Ok((h_t, c))
}

/// A single LSTM step for a batch of inputs `x_t [B × d_in]`.
pub fn lstm_cell(g: &mut Graph, x_t: Var, h_prev: Var, c_prev: Var, names: &LstmNames) -> Result<(Var, Var)> {
    let u = g.param(&names.u)?;
    let v = g.param(&names.v)?;
    let b = g.param(&names.b)?;
    let h = g.dims(v).0;
    let xu = g.matmul(x_t, u)?;
    let pre_x = g.add(xu, b)?;
    cell(g, pre_x, h_prev, c_prev, v, h)
}

/// Row index of the last real position of each of the `B` blocks.
pub fn last_real(mask: &[bool], len: usize) -> Vec<Option<usize>> {
    mask.chunks(len)
        .enumerate()
        .map(|(s, m)| m.iter().rposition(|x| *x).map(|p| s * len + p))
        .collect()
}
