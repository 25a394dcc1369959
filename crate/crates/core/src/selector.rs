//! Pre-selection of context utterances and knowledge sentences.
//!
//! Units (utterances or sentences) are stacked as `n` blocks of `len` rows,
//! the same layout the encoder produces. A unit with no real token is
//! "padded": it is never attended, gets weight 0 and passes through the
//! reweighting unchanged.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParameterStore, Tensor, Var, LAYER_NORM_EPS};

/// `softmax(QKᵀ/√d_k)V` with masked keys at weight 0.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var, key_mask: &[bool]) -> Result<Var> {
    let (nq, dk) = g.dims(q);
    let nk = g.dims(k).0;
    if key_mask.len() != nk {
        return Err(Error::shape("scaled_dot_attention", format!("{} mask entries for {nk} keys", key_mask.len())));
    }
    if !key_mask.iter().any(|m| *m) {
        return Err(Error::EmptySupport("scaled_dot_attention"));
    }
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let mask: Vec<bool> = (0..nq).flat_map(|_| key_mask.iter().copied()).collect();
    let weights = g.masked_softmax(scores, &mask, 1, true)?;
    g.matmul(weights, v)
}

/// Multi-head attention followed by a position-wise feed-forward layer,
/// each wrapped in a residual connection and layer normalisation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionBlock {
    pub prefix: String,
    pub width: usize,
    pub heads: usize,
    pub inner: usize,
}

impl AttentionBlock {
    pub fn new(prefix: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide width {width}")));
        }
        Ok(Self {
            prefix: prefix.to_string(),
            width,
            heads,
            inner: 2 * width,
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<R: Rng>(&self, store: &mut ParameterStore, bound: f64, rng: &mut R) -> Result<()> {
        let w = self.width;
        for p in ["wq", "wk", "wv", "wo"] {
            store.insert(self.name(p), Tensor::uniform(&[w, w], bound, rng))?;
        }
        store.insert(self.name("ffn.w1"), Tensor::uniform(&[w, self.inner], bound, rng))?;
        store.insert(self.name("ffn.b1"), Tensor::zeros(&[1, self.inner]))?;
        store.insert(self.name("ffn.w2"), Tensor::uniform(&[self.inner, w], bound, rng))?;
        store.insert(self.name("ffn.b2"), Tensor::zeros(&[1, w]))?;
        for ln in ["ln1", "ln2"] {
            store.insert(self.name(&format!("{ln}.g")), Tensor::filled(&[1, w], 1.0))?;
            store.insert(self.name(&format!("{ln}.b")), Tensor::zeros(&[1, w]))?;
        }
        Ok(())
    }

    /// Transform `q` by attending over `kv`. Rows where `q_mask` is false
    /// come out as zero.
    pub fn apply(&self, g: &mut Graph, q: Var, q_mask: &[bool], kv: Var, kv_mask: &[bool]) -> Result<Var> {
        let nq = g.dims(q).0;
        if g.dims(q).1 != self.width || g.dims(kv).1 != self.width || q_mask.len() != nq {
            return Err(Error::shape(
                "attention_block",
                format!("query {:?}, keys {:?}, width {}", g.dims(q), g.dims(kv), self.width),
            ));
        }
        let nk = g.dims(kv).0;
        let dh = self.width / self.heads;
        let wq = g.param(&self.name("wq"))?;
        let wk = g.param(&self.name("wk"))?;
        let wv = g.param(&self.name("wv"))?;
        let pq = g.matmul(q, wq)?;
        let pk = g.matmul(kv, wk)?;
        let pv = g.matmul(kv, wv)?;
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = g.slice(pq, 0..nq, cols.clone())?;
            let kh = g.slice(pk, 0..nk, cols.clone())?;
            let vh = g.slice(pv, 0..nk, cols)?;
            heads.push(scaled_dot_attention(g, qh, kh, vh, kv_mask)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let wo = g.param(&self.name("wo"))?;
        let attended = g.matmul(joined, wo)?;
        let res = g.add(q, attended)?;
        let (g1, b1) = (g.param(&self.name("ln1.g"))?, g.param(&self.name("ln1.b"))?);
        let normed = g.layer_norm(res, g1, b1, LAYER_NORM_EPS)?;
        let w1 = g.param(&self.name("ffn.w1"))?;
        let bf1 = g.param(&self.name("ffn.b1"))?;
        let w2 = g.param(&self.name("ffn.w2"))?;
        let bf2 = g.param(&self.name("ffn.b2"))?;
        let hidden = g.matmul(normed, w1)?;
        let hidden = g.add(hidden, bf1)?;
        let hidden = g.relu(hidden);
        let ffn = g.matmul(hidden, w2)?;
        let ffn = g.add(ffn, bf2)?;
        let res2 = g.add(normed, ffn)?;
        let (g2, b2) = (g.param(&self.name("ln2.g"))?, g.param(&self.name("ln2.b"))?);
        let out = g.layer_norm(res2, g2, b2, LAYER_NORM_EPS)?;
        if q_mask.iter().all(|m| *m) {
            return Ok(out);
        }
        let keep = g.constant(Tensor::matrix(nq, 1, q_mask.iter().map(|&m| f64::from(u8::from(m))).collect()));
        g.mul(out, keep)
    }
}

pub fn self_attend(g: &mut Graph, block: &AttentionBlock, u: Var, mask: &[bool]) -> Result<Var> {
    block.apply(g, u, mask, u, mask)
}

/// Self-attend every real unit of a stack; padded units stay zero.
pub fn self_attend_units(g: &mut Graph, block: &AttentionBlock, units: Var, mask: &[bool], len: usize) -> Result<Var> {
    let n = mask.len() / len;
    let mut parts = Vec::with_capacity(n);
    for i in 0..n {
        let m = &mask[i * len..(i + 1) * len];
        if m.iter().any(|x| *x) {
            let rows = g.rows(units, i * len..(i + 1) * len)?;
            parts.push(self_attend(g, block, rows, m)?);
        } else {
            parts.push(g.constant(Tensor::zeros(&[len, block.width])));
        }
    }
    g.concat_rows(&parts)
}

/// Indices of units with at least one real token.
pub fn real_units(mask: &[bool], len: usize) -> Vec<usize> {
    mask.chunks(len)
        .enumerate()
        .filter(|(_, m)| m.iter().any(|x| *x))
        .map(|(i, _)| i)
        .collect()
}

/// Position-wise masked mean of the last `m` real units (fewer when fewer
/// exist). Returns the `[len × w]` query and its token mask.
pub fn hop_query(g: &mut Graph, units: Var, mask: &[bool], len: usize, m: usize) -> Result<(Var, Vec<bool>)> {
    let real = real_units(mask, len);
    if real.is_empty() {
        return Err(Error::EmptyContext);
    }
    let window = &real[real.len() - m.clamp(1, real.len())..];
    let counts: Vec<usize> = (0..len)
        .map(|p| window.iter().filter(|&&u| mask[u * len + p]).count())
        .collect();
    let mut total: Option<Var> = None;
    for &u in window {
        let weights: Vec<f64> = (0..len)
            .map(|p| if mask[u * len + p] { 1.0 / counts[p] as f64 } else { 0.0 })
            .collect();
        let rows = g.rows(units, u * len..(u + 1) * len)?;
        let w = g.constant(Tensor::matrix(len, 1, weights));
        let part = g.mul(rows, w)?;
        total = Some(match total {
            Some(t) => g.add(t, part)?,
            None => part,
        });
    }
    Ok((total.expect("non-empty window"), counts.iter().map(|&c| c > 0).collect()))
}

/// Distribution over units from a transformed query `q̂ [l_q × w]` and
/// transformed units `û [n·len × w]`; `[n × 1]`, zero at padded units.
pub fn unit_scores(
    g: &mut Graph,
    q_hat: Var,
    q_mask: &[bool],
    units_hat: Var,
    mask: &[bool],
    len: usize,
    alpha: Var,
) -> Result<Var> {
    let (lq, w) = g.dims(q_hat);
    let total = mask.len();
    let n = total / len;
    let ut = g.transpose(units_hat);
    let phi = g.matmul(q_hat, ut)?;
    let phi = g.scale(phi, 1.0 / (w as f64).sqrt());
    let pair_mask: Vec<bool> = (0..lq).flat_map(|i| mask.iter().map(move |&m| m && q_mask[i])).collect();
    let best = g.masked_max(phi, &pair_mask, 0)?;
    let per_unit = g.reshape(best, n, len)?;
    let s1 = g.masked_max(per_unit, mask, 1)?;
    let s2 = g.masked_mean(per_unit, mask, 1)?;
    let a1 = g.mul(s1, alpha)?;
    let one_minus = g.affine(alpha, -1.0, 1.0);
    let a2 = g.mul(s2, one_minus)?;
    let logits = g.add(a1, a2)?;
    let unit_mask: Vec<bool> = mask.chunks(len).map(|m| m.iter().any(|x| *x)).collect();
    g.masked_softmax(logits, &unit_mask, 0, true)
}

/// `s̄ = [s⁽¹⁾ … s⁽ᵐ⁾] π` for hop scores of shape `[n × 1]` and `π [m × 1]`.
pub fn fuse_hops(g: &mut Graph, hops: &[Var], pi: Var) -> Result<Var> {
    if hops.len() != g.dims(pi).0 || g.dims(pi).1 != 1 {
        return Err(Error::shape(
            "fuse_hops",
            format!("{} hops against π {:?}", hops.len(), g.dims(pi)),
        ));
    }
    let stacked = g.concat_cols(hops)?;
    g.matmul(stacked, pi)
}

/// `Ū_i = (1 + s̄(i)) · U_i`, with `s̄ [n × 1]` spread over each unit's rows.
pub fn reweight(g: &mut Graph, units: Var, s_bar: Var, len: usize) -> Result<Var> {
    let n = g.dims(s_bar).0;
    let idx: Vec<Option<usize>> = (0..n).flat_map(|i| std::iter::repeat_n(Some(i), len)).collect();
    let spread = g.gather_rows(s_bar, &idx)?;
    let factor = g.affine(spread, 1.0, 1.0);
    g.mul(units, factor)
}

/// Per-side fusion scalar α and hop weights π.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selector {
    pub prefix: String,
    pub hops: usize,
    /// Pass π through a softmax so that s̄ stays a distribution.
    pub renormalize: bool,
}

impl Selector {
    pub fn new(prefix: &str, hops: usize, renormalize: bool) -> Self {
        Self {
            prefix: prefix.to_string(),
            hops,
            renormalize,
        }
    }

    pub fn alpha_name(&self) -> String {
        format!("{}.alpha", self.prefix)
    }

    pub fn pi_name(&self) -> String {
        format!("{}.pi", self.prefix)
    }

    pub fn init(&self, store: &mut ParameterStore) -> Result<()> {
        store.insert(self.alpha_name(), Tensor::scalar(0.5))?;
        let pi = if self.renormalize { 0.0 } else { 1.0 / self.hops as f64 };
        store.insert(self.pi_name(), Tensor::filled(&[self.hops, 1], pi))?;
        Ok(())
    }
}

/// Transformed hop queries built from the context encoder states.
pub struct HopQueries {
    pub queries: Vec<(Var, Vec<bool>)>,
}

impl HopQueries {
    /// Hop `j` (1-based) pools the last `j` real utterances, then self-attends.
    pub fn build(
        g: &mut Graph,
        block: &AttentionBlock,
        context: Var,
        mask: &[bool],
        len: usize,
        hops: usize,
    ) -> Result<Self> {
        let mut queries = Vec::with_capacity(hops);
        for j in 1..=hops {
            let (q, q_mask) = hop_query(g, context, mask, len, j)?;
            let q_hat = self_attend(g, block, q, &q_mask)?;
            queries.push((q_hat, q_mask));
        }
        Ok(Self { queries })
    }
}

pub struct SelectionResult {
    /// `Ū`, same layout as the input units.
    pub reweighted: Var,
    /// `s̄ [n × 1]`.
    pub weights: Var,
    /// Per-hop distributions, each `[n × 1]`.
    pub hops: Vec<Var>,
}

/// Score the units against every hop query and reweight the original
/// encoder states `units`.
pub fn select_units(
    g: &mut Graph,
    block: &AttentionBlock,
    selector: &Selector,
    queries: &HopQueries,
    units: Var,
    mask: &[bool],
    len: usize,
) -> Result<SelectionResult> {
    if queries.queries.len() != selector.hops {
        return Err(Error::shape(
            "select_units",
            format!("{} queries for {} hops", queries.queries.len(), selector.hops),
        ));
    }
    let units_hat = self_attend_units(g, block, units, mask, len)?;
    let alpha = g.param(&selector.alpha_name())?;
    let mut hops = Vec::with_capacity(selector.hops);
    for (q_hat, q_mask) in &queries.queries {
        hops.push(unit_scores(g, *q_hat, q_mask, units_hat, mask, len, alpha)?);
    }
    let pi = g.param(&selector.pi_name())?;
    let pi = if selector.renormalize {
        let all = vec![true; selector.hops];
        g.masked_softmax(pi, &all, 0, true)?
    } else {
        pi
    };
    let weights = fuse_hops(g, &hops, pi)?;
    let reweighted = reweight(g, units, weights, len)?;
    Ok(SelectionResult {
        reweighted,
        weights,
        hops,
    })
}
