//! The finite-difference suite run by `dck gradcheck`: every differentiable
//! primitive on a random fixture, then the full candidate loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ModelConfig;
use super::model::Model;
use super::synthetic::{copy_task, synthetic_model};
use crate::error::Result;
use crate::numerics::{gradient_check_sampled, Graph, ParameterStore, Tensor, Var, LAYER_NORM_EPS};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct OracleCase {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
    pub worst: Option<String>,
    pub passed: bool,
}

type Build = fn(&mut Graph) -> Result<Var>;

/// Weighted sum with fixed pseudo-random weights, so every output entry
/// carries a distinct upstream gradient.
fn reduce(g: &mut Graph, x: Var) -> Result<Var> {
    let (r, c) = g.dims(x);
    let w: Vec<f64> = (0..r * c).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 5.0 + 0.1).collect();
    let w = g.constant(Tensor::matrix(r, c, w));
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

fn p(g: &mut Graph, n: &str) -> Result<Var> {
    g.param(n)
}

const MASK: [bool; 12] = [
    true, false, true, true, true, true, false, false, true, true, true, false,
];

fn primitives() -> Vec<(&'static str, Build)> {
    vec![
        ("matmul", |g| {
            let (a, b) = (p(g, "a")?, p(g, "b")?);
            let bt = g.transpose(b);
            let y = g.matmul(a, bt)?;
            reduce(g, y)
        }),
        ("add_sub_broadcast", |g| {
            let (a, r, c) = (p(g, "a")?, p(g, "row")?, p(g, "col")?);
            let y = g.add(a, r)?;
            let y = g.sub(y, c)?;
            reduce(g, y)
        }),
        ("mul", |g| {
            let (a, b) = (p(g, "a")?, p(g, "b")?);
            let y = g.mul(a, b)?;
            reduce(g, y)
        }),
        ("affine_scale", |g| {
            let a = p(g, "a")?;
            let y = g.affine(a, -1.5, 0.3);
            let y = g.scale(y, 2.0);
            reduce(g, y)
        }),
        ("tanh_sigmoid_exp", |g| {
            let a = p(g, "a")?;
            let t = g.tanh(a);
            let s = g.sigmoid(a);
            let e = g.exp(a);
            let y = g.concat_cols(&[t, s, e])?;
            reduce(g, y)
        }),
        ("relu", |g| {
            let a = p(g, "a")?;
            let y = g.relu(a);
            reduce(g, y)
        }),
        ("concat_slice_rows_reshape", |g| {
            let (a, b) = (p(g, "a")?, p(g, "b")?);
            let y = g.concat_rows(&[a, b])?;
            let y = g.slice(y, 1..5, 1..3)?;
            let y = g.reshape(y, 2, 4)?;
            let z = g.rows(a, 0..2)?;
            let z = g.reshape(z, 3, 2)?;
            let (y, z) = (reduce(g, y)?, reduce(g, z)?);
            g.add(y, z)
        }),
        ("masked_softmax", |g| {
            let a = p(g, "a")?;
            let x = g.masked_softmax(a, &MASK, 1, false)?;
            let y = g.masked_softmax(a, &MASK, 0, false)?;
            let y = g.concat_cols(&[x, y])?;
            reduce(g, y)
        }),
        ("layer_norm", |g| {
            let (a, gain, bias) = (p(g, "a")?, p(g, "gain")?, p(g, "bias")?);
            let y = g.layer_norm(a, gain, bias, LAYER_NORM_EPS)?;
            reduce(g, y)
        }),
        ("masked_max_mean", |g| {
            let a = p(g, "a")?;
            let m0 = g.masked_max(a, &MASK, 0)?;
            let m1 = g.masked_max(a, &MASK, 1)?;
            let a0 = g.masked_mean(a, &MASK, 0)?;
            let a1 = g.masked_mean(a, &MASK, 1)?;
            let x = g.concat_cols(&[m0, a0])?;
            let y = g.concat_rows(&[m1, a1])?;
            let (x, y) = (reduce(g, x)?, reduce(g, y)?);
            g.add(x, y)
        }),
        ("gather_segment_max", |g| {
            let a = p(g, "a")?;
            let y = g.gather_rows(a, &[Some(3), None, Some(0), Some(3), Some(1)])?;
            let y = g.segment_max(y, &[0..2, 2..2, 2..5])?;
            reduce(g, y)
        }),
        ("softmax_cross_entropy", |g| {
            let a = p(g, "a")?;
            let r = g.rows(a, 1..2)?;
            g.softmax_cross_entropy(r, 2)
        }),
    ]
}

fn primitive_store(seed: u64) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParameterStore::new();
    let mut add = |name: &str, r: usize, c: usize, rng: &mut ChaCha8Rng| {
        s.insert(name, Tensor::uniform(&[r, c], 1.0, rng)).expect("fresh name");
    };
    add("a", 4, 3, &mut rng);
    add("b", 4, 3, &mut rng);
    add("row", 1, 3, &mut rng);
    add("col", 4, 1, &mut rng);
    add("bias", 1, 3, &mut rng);
    let gain: Vec<f64> = (0..3).map(|_| 1.0 + rng.gen_range(-0.5..0.5)).collect();
    s.insert("gain", Tensor::matrix(1, 3, gain)).expect("fresh name");
    s
}

fn case(name: &str, r: crate::numerics::GradCheckReport) -> OracleCase {
    OracleCase {
        name: name.to_string(),
        max_rel_error: r.max_rel_error,
        entries: r.entries_checked,
        worst: r.worst.map(|(n, k)| format!("{n}[{k}]")),
        passed: r.max_rel_error < TOLERANCE,
    }
}

/// Move layer-norm gains off the identity so that no max-pool sits on a
/// near-tie at the check point.
pub fn jitter_layer_norm(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = model
        .store
        .names()
        .filter(|n| n.contains(".ln") && n.ends_with(".g"))
        .map(str::to_string)
        .collect();
    for n in names {
        for v in model.store.get_mut(&n).expect("listed").data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
}

/// A model at `config`'s widths with a single small sample; limits are
/// shrunk to 2 utterances × 4 tokens, 2 knowledge entries, 3 candidates.
pub fn loss_fixture(config: &ModelConfig) -> Result<(Model, crate::corpus::EncodedSample)> {
    let mut cfg = config.clone();
    cfg.limits = ModelConfig::tiny().limits;
    let set = copy_task(1, &cfg.limits, cfg.seed)?;
    let mut model = synthetic_model(&cfg, &set)?;
    jitter_layer_norm(&mut model, cfg.seed);
    let sample = set.samples.into_iter().next().expect("one sample");
    Ok((model, sample))
}

/// Run every case. Parameters above 2000 entries are probed at 40 evenly
/// spaced entries each.
pub fn run_suite(config: &ModelConfig) -> Result<Vec<OracleCase>> {
    let mut out = Vec::new();
    let store = primitive_store(config.seed);
    for (name, build) in primitives() {
        out.push(case(name, gradient_check_sampled(build, &store, STEP, None)?));
    }
    let (model, sample) = loss_fixture(config)?;
    let cap = (model.store.num_values() > 2000).then_some(40);
    let report = gradient_check_sampled(
        |g| {
            let f = model.forward(g, &sample)?;
            g.softmax_cross_entropy(f.logits, sample.label)
        },
        &model.store,
        STEP,
        cap,
    )?;
    out.push(case("full_loss", report));
    Ok(out)
}
