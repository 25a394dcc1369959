//! The assembled model: parameters, forward pass per sample, head and loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AggregatorSharing, HeadActivation, ModelConfig};
use crate::aggregator::{assemble_final, knowledge_post_select, pool_max_last, session_aggregate};
use crate::corpus::{EncodedSample, TokenGrid, Vocabulary};
use crate::embed::{init_char_params, table_name, Embeddings, TokenFeatures};
use crate::encoder::BiLstm;
use crate::error::{Error, Result};
use crate::matcher::{enrich, flatten_units, match_pair};
use crate::numerics::{Gradients, Graph, ParameterStore, Tensor, Var};
use crate::selector::{select_units, AttentionBlock, HopQueries, Selector};

pub const HEAD_W1: &str = "head.w1";
pub const HEAD_B1: &str = "head.b1";
pub const HEAD_W2: &str = "head.w2";
pub const HEAD_B2: &str = "head.b2";

/// Named sub-networks, derived from the config.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub encoder: BiLstm,
    pub attention: AttentionBlock,
    pub context_selector: Selector,
    pub knowledge_selector: Selector,
    /// Sentence aggregators for the context and knowledge sides; the same
    /// BiLSTM when sharing.
    pub aggregate_context: BiLstm,
    pub aggregate_knowledge: BiLstm,
    pub session: BiLstm,
}

impl Architecture {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let h = cfg.hidden;
        let w = cfg.width();
        let (agg_c, agg_k) = match cfg.aggregator_sharing {
            AggregatorSharing::Shared => ("agg", "agg"),
            AggregatorSharing::PerSide => ("agg_ctx", "agg_kn"),
        };
        Ok(Self {
            encoder: BiLstm::new("enc", cfg.embed_config().dim(), h),
            attention: AttentionBlock::new("att", w, cfg.heads)?,
            context_selector: Selector::new("ctx_sel", cfg.hops, cfg.selector_renormalize),
            knowledge_selector: Selector::new("kn_sel", cfg.hops, cfg.selector_renormalize),
            aggregate_context: BiLstm::new(agg_c, 4 * w, h),
            aggregate_knowledge: BiLstm::new(agg_k, 4 * w, h),
            session: BiLstm::new("sess", 2 * w, h),
        })
    }

    fn shared(&self) -> bool {
        self.aggregate_context.forward.u == self.aggregate_knowledge.forward.u
    }
}

/// Graph handles produced by one forward pass.
pub struct Forward {
    /// `[1 × n]` candidate logits.
    pub logits: Var,
    /// `[n × 16h]` = `[M_c ; M_k ; M_r ; M_r^c]` per candidate.
    pub final_features: Var,
    /// Fused context selection `s̄_c [n_c × 1]`, when the selector runs.
    pub context_weights: Option<Var>,
    pub context_hops: Vec<Var>,
    pub knowledge_weights: Option<Var>,
    pub knowledge_hops: Vec<Var>,
    /// Post-selection weights `γ [n_k × 1]` per candidate; empty without
    /// knowledge.
    pub gamma: Vec<Var>,
}

/// Loss, logits and parameter gradients of one sample.
pub struct SampleGradients {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub grads: Gradients,
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub embeddings: Embeddings,
    pub store: ParameterStore,
    pub arch: Architecture,
}

impl Model {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, embeddings: Embeddings) -> Result<Self> {
        config.validate()?;
        if embeddings.config != config.embed_config() || embeddings.vocab_size() != vocab.len() {
            return Err(Error::Config(format!(
                "embedding tables ({} ids, width {}) do not match the config / vocabulary ({} ids, width {})",
                embeddings.vocab_size(),
                embeddings.dim(),
                vocab.len(),
                config.embed_config().dim()
            )));
        }
        let arch = Architecture::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = config.init_bound;
        let mut store = ParameterStore::new();
        let chars = config.embed_config().chars;
        init_char_params(&mut store, &chars, bound, &mut rng)?;
        if !config.char_trainable && chars.output_dim() > 0 {
            let mut names = vec![table_name().to_string()];
            for &w in &chars.windows {
                names.push(crate::embed::weight_name(w));
                names.push(crate::embed::bias_name(w));
            }
            for n in names {
                if store.id(&n).is_some() {
                    store.set_trainable(&n, false)?;
                }
            }
        }
        arch.encoder.init(&mut store, bound, &mut rng)?;
        arch.attention.init(&mut store, bound, &mut rng)?;
        arch.context_selector.init(&mut store)?;
        arch.knowledge_selector.init(&mut store)?;
        arch.aggregate_context.init(&mut store, bound, &mut rng)?;
        if !arch.shared() {
            arch.aggregate_knowledge.init(&mut store, bound, &mut rng)?;
        }
        arch.session.init(&mut store, bound, &mut rng)?;
        let fw = 4 * config.feature_width();
        store.insert(HEAD_W1, Tensor::uniform(&[fw, config.mlp_hidden], bound, &mut rng))?;
        store.insert(HEAD_B1, Tensor::zeros(&[1, config.mlp_hidden]))?;
        store.insert(HEAD_W2, Tensor::uniform(&[config.mlp_hidden, 1], bound, &mut rng))?;
        store.insert(HEAD_B2, Tensor::zeros(&[1, 1]))?;
        Ok(Self {
            config,
            vocab,
            embeddings,
            store,
            arch,
        })
    }

    /// Rebuild from stored parameters (checkpoint load).
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        embeddings: Embeddings,
        store: ParameterStore,
    ) -> Result<Self> {
        let fresh = Self::new(config, vocab, embeddings)?;
        for (name, t) in fresh.store.iter() {
            match store.get(name) {
                Some(s) if s.shape() == t.shape() => {}
                Some(s) => {
                    return Err(Error::shape(
                        "from_parts",
                        format!("parameter {name} is {:?}, expected {:?}", s.shape(), t.shape()),
                    ))
                }
                None => return Err(Error::UnknownParameter(name.to_string())),
            }
        }
        if store.len() != fresh.store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, the config builds {}",
                store.len(),
                fresh.store.len()
            )));
        }
        let mut store = store;
        for name in fresh.store.names() {
            store.set_trainable(name, fresh.store.is_trainable(name))?;
        }
        Ok(Self { store, ..fresh })
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::with_store(&self.store)
    }

    /// Two-layer head over `[n × 16h]` features, giving `[1 × n]` logits.
    pub fn head(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let w1 = g.param(HEAD_W1)?;
        let b1 = g.param(HEAD_B1)?;
        let w2 = g.param(HEAD_W2)?;
        let b2 = g.param(HEAD_B2)?;
        let z = g.matmul(features, w1)?;
        let z = g.add(z, b1)?;
        let a = match self.config.head_activation {
            HeadActivation::Relu => g.relu(z),
            HeadActivation::Tanh => g.tanh(z),
        };
        let s = g.matmul(a, w2)?;
        let s = g.add(s, b2)?;
        Ok(g.transpose(s))
    }

    pub fn forward(&self, g: &mut Graph, s: &EncodedSample) -> Result<Forward> {
        let flags = self.config.ablation;
        let l = s.candidates.len;
        if s.context.len != l || s.knowledge.len != l {
            return Err(Error::shape(
                "forward",
                format!(
                    "token extents differ: context {}, knowledge {}, candidates {l}",
                    s.context.len, s.knowledge.len
                ),
            ));
        }
        let n = s.candidates.rows;
        if n == 0 {
            return Err(Error::InvalidData("sample has no candidates".into()));
        }
        if s.label >= n {
            return Err(Error::LabelOutOfRange { label: s.label, n });
        }
        let use_ctx = !flags.drop_context;
        let use_kn = !flags.drop_knowledge;
        if use_ctx && s.context.real_rows() == 0 {
            return Err(Error::EmptyContext);
        }
        if use_kn && s.knowledge.real_rows() == 0 {
            return Err(Error::EmptyKnowledge);
        }

        // Encoding: one BiLSTM call over every sequence the sample uses.
        let mut grids: Vec<&TokenGrid> = Vec::new();
        if use_ctx {
            grids.push(&s.context);
        }
        if use_kn {
            grids.push(&s.knowledge);
        }
        grids.push(&s.candidates);
        let ids: Vec<u32> = grids.iter().flat_map(|gr| gr.ids.iter().copied()).collect();
        let mask: Vec<bool> = grids.iter().flat_map(|gr| gr.mask()).collect();
        let tokens = TokenFeatures::build(g, &self.embeddings, ids.iter().copied())?;
        let x = tokens.lookup(g, &ids)?;
        let states = self.arch.encoder.encode(g, x, &mask, l)?;
        let mut at = 0;
        let mut take = |g: &mut Graph, grid: &TokenGrid| -> Result<Var> {
            let rows = grid.rows * l;
            let v = g.rows(states, at..at + rows)?;
            at += rows;
            Ok(v)
        };
        let u_c = if use_ctx { Some(take(g, &s.context)?) } else { None };
        let u_k = if use_kn { Some(take(g, &s.knowledge)?) } else { None };
        let u_r = take(g, &s.candidates)?;
        let c_mask = s.context.mask();
        let k_mask = s.knowledge.mask();

        // Pre-selection.
        let arch = &self.arch;
        let queries = match u_c {
            Some(u) if flags.context_selector() || flags.knowledge_selector() => Some(HopQueries::build(
                g,
                &arch.attention,
                u,
                &c_mask,
                l,
                self.config.hops,
            )?),
            _ => None,
        };
        let mut context_weights = None;
        let mut context_hops = Vec::new();
        let c_bar = match (u_c, &queries) {
            (Some(u), Some(q)) if flags.context_selector() => {
                let sel = select_units(g, &arch.attention, &arch.context_selector, q, u, &c_mask, l)?;
                context_weights = Some(sel.weights);
                context_hops = sel.hops;
                Some(sel.reweighted)
            }
            (u, _) => u,
        };
        let mut knowledge_weights = None;
        let mut knowledge_hops = Vec::new();
        let k_bar = match (u_k, &queries) {
            (Some(u), Some(q)) if flags.knowledge_selector() => {
                let sel = select_units(g, &arch.attention, &arch.knowledge_selector, q, u, &k_mask, l)?;
                knowledge_weights = Some(sel.weights);
                knowledge_hops = sel.hops;
                Some(sel.reweighted)
            }
            (u, _) => u,
        };

        // Matching, candidate by candidate.
        let w = self.config.width();
        let c_long = c_bar.map(|v| flatten_units(g, v, &c_mask, l)).transpose()?;
        let k_long = k_bar.map(|v| flatten_units(g, v, &k_mask, l)).transpose()?;
        let (mut cf, mut rf, mut kf, mut rkf) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut r_masks = Vec::with_capacity(n);
        for j in 0..n {
            let r = g.rows(u_r, j * l..(j + 1) * l)?;
            let r_mask = s.candidates.row_mask(j);
            let empty = !r_mask.iter().any(|m| *m);
            for (long, side_out, resp_out) in [(&c_long, &mut cf, &mut rf), (&k_long, &mut kf, &mut rkf)] {
                let Some(long) = long else { continue };
                if empty {
                    // Nothing to align with: the aligned views are zero.
                    let zero = g.constant(Tensor::zeros(&[long.len(), w]));
                    side_out.push(enrich(g, long.states, zero)?);
                    resp_out.push(g.constant(Tensor::zeros(&[l, 4 * w])));
                } else {
                    let (a, b) = match_pair(g, long, r, &r_mask)?;
                    side_out.push(a);
                    resp_out.push(b);
                }
            }
            r_masks.push(r_mask);
        }

        // Sentence-level aggregation, batched per BiLSTM.
        let n_c = s.context.rows;
        let n_k = s.knowledge.rows;
        let r_mask_all: Vec<bool> = r_masks.concat();
        let rep = |m: &[bool]| -> Vec<bool> { (0..n).flat_map(|_| m.iter().copied()).collect() };
        let mut ctx_group: Vec<(Vec<Var>, Vec<bool>)> = Vec::new();
        let mut kn_group: Vec<(Vec<Var>, Vec<bool>)> = Vec::new();
        if use_ctx {
            ctx_group.push((cf, rep(&c_mask)));
            ctx_group.push((rf, r_mask_all.clone()));
        }
        if use_kn {
            kn_group.push((kf, rep(&k_mask)));
            kn_group.push((rkf, r_mask_all));
        }
        let pooled: Vec<Var> = if arch.shared() {
            let all: Vec<_> = ctx_group.into_iter().chain(kn_group).collect();
            split_pooled(g, &arch.aggregate_context, all, l)?
        } else {
            let mut out = split_pooled(g, &arch.aggregate_context, ctx_group, l)?;
            out.extend(split_pooled(g, &arch.aggregate_knowledge, kn_group, l)?);
            out
        };
        let mut pooled = pooled.into_iter();
        let (mut m_c, mut m_r, mut m_k, mut m_rc) = (None, None, None, None);
        let mut gamma = Vec::new();
        if use_ctx {
            let u_s = pooled.next().expect("context block");
            m_r = pooled.next();
            let unit_mask: Vec<bool> = (0..n)
                .flat_map(|_| (0..n_c).map(|i| s.context.is_real_row(i)))
                .collect();
            m_c = Some(session_aggregate(g, &arch.session, u_s, &unit_mask, n_c)?);
        }
        if use_kn {
            let k_s = pooled.next().expect("knowledge block");
            let rc = pooled.next().expect("knowledge response block");
            let entry_mask: Vec<bool> = (0..n_k).map(|i| s.knowledge.is_real_row(i)).collect();
            let mut rows = Vec::with_capacity(n);
            for j in 0..n {
                let k_j = g.rows(k_s, j * n_k..(j + 1) * n_k)?;
                let rc_j = g.rows(rc, j..j + 1)?;
                let post = knowledge_post_select(g, k_j, &entry_mask, rc_j, flags.disable_post_selection)?;
                rows.push(post.m_k);
                gamma.push(post.gamma);
            }
            m_k = Some(g.concat_rows(&rows)?);
            m_rc = Some(rc);
        }
        let final_features = assemble_final(g, [m_c, m_k, m_r, m_rc], n, self.config.feature_width())?;
        let logits = self.head(g, final_features)?;
        Ok(Forward {
            logits,
            final_features,
            context_weights,
            context_hops,
            knowledge_weights,
            knowledge_hops,
            gamma,
        })
    }

    pub fn logits(&self, s: &EncodedSample) -> Result<Vec<f64>> {
        let mut g = self.graph();
        let f = self.forward(&mut g, s)?;
        Ok(g.value(f.logits).data().to_vec())
    }

    /// Cross-entropy of one sample and its gradients.
    pub fn sample_gradients(&self, s: &EncodedSample) -> Result<SampleGradients> {
        let mut g = self.graph();
        let f = self.forward(&mut g, s)?;
        let loss = g.softmax_cross_entropy(f.logits, s.label)?;
        let grads = g.backward(loss)?;
        Ok(SampleGradients {
            loss: g.value(loss).item(),
            logits: g.value(f.logits).data().to_vec(),
            grads,
        })
    }

    /// Mean loss and mean gradients over `samples`. Per-sample work runs in
    /// parallel; gradients are summed in sample order, so the result does
    /// not depend on the thread count.
    pub fn batch_gradients(&self, samples: &[&EncodedSample]) -> Result<(f64, Gradients, Vec<Vec<f64>>)> {
        let mut total = self.store.zero_gradients();
        let mut loss = 0.0;
        let mut logits = Vec::with_capacity(samples.len());
        for wave in samples.chunks(threads()) {
            let results = parallel_map(wave, |s| self.sample_gradients(s));
            for r in results {
                let r = r?;
                loss += r.loss;
                total.accumulate(&r.grads);
                logits.push(r.logits);
            }
        }
        let k = samples.len().max(1) as f64;
        total.scale(1.0 / k);
        Ok((loss / k, total, logits))
    }

    /// Logits of every sample, in order.
    pub fn predict(&self, samples: &[EncodedSample]) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&EncodedSample> = samples.iter().collect();
        let mut out = Vec::with_capacity(samples.len());
        for wave in refs.chunks(threads() * 8) {
            for r in parallel_map(wave, |s| self.logits(s)) {
                out.push(r?);
            }
        }
        Ok(out)
    }
}

/// Run each group's blocks through `lstm` in one call and return one
/// pooled `[blocks × 4h]` matrix per group.
fn split_pooled(g: &mut Graph, lstm: &BiLstm, groups: Vec<(Vec<Var>, Vec<bool>)>, l: usize) -> Result<Vec<Var>> {
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let mut parts = Vec::new();
    let mut mask = Vec::new();
    let mut counts = Vec::new();
    for (vars, m) in groups {
        counts.push(m.len() / l);
        parts.extend(vars);
        mask.extend(m);
    }
    let x = g.concat_rows(&parts)?;
    let states = lstm.encode(g, x, &mask, l)?;
    let pooled = pool_max_last(g, states, &mask, l)?;
    let mut out = Vec::with_capacity(counts.len());
    let mut at = 0;
    for c in counts {
        out.push(g.rows(pooled, at..at + c)?);
        at += c;
    }
    Ok(out)
}

/// Worker threads: `DCK_THREADS` when set, else the available cores.
pub fn threads() -> usize {
    std::env::var("DCK_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// `items.map(f)` with one scoped thread per item, results in input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = threads();
    if items.len() <= 1 || workers == 1 {
        return items.iter().map(&f).collect();
    }
    let per = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(per)
            .map(|chunk| scope.spawn(move || chunk.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
