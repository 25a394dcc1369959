//! Acceptance suite. Prints one PASS / FAIL / SKIP line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Criteria 7 and 10 need the real datasets under `$DCK_DATA_DIR` (or
//! `<workspace>/data`): `persona/{split}_self_original.txt` and
//! `cmudog/{split}.jsonl`. They are skipped when the files are absent.

#![allow(clippy::needless_range_loop)]

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dck_core::corpus::{corpus_stats, CorpusStats, Limits};
use dck_core::harness::data::{self, parse_split, preprocess, DataDir, PreprocessOptions};
use dck_core::harness::pipeline::train_from_dir;
use dck_core::harness::synthetic::{copy_task, random_task, synthetic_model, SyntheticSet};
use dck_core::harness::{
    checkpoint, evaluate_report, evaluate_samples, oracles, recall_at_n_k, train, AblationFlags, Dataset, History,
    MetricsReport, ModelConfig, TrainOptions,
};
use dck_core::aggregator::knowledge_post_select;
use dck_core::matcher::{cross_attend, enrich};
use dck_core::numerics::{Graph, ParameterStore, Tensor};
use dck_core::selector::{select_units, unit_scores, AttentionBlock, HopQueries, Selector};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<bool> {
    (0..n).map(|_| rng.gen_bool(p)).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, bound: f64) -> Tensor {
    Tensor::uniform(&[r, c], bound, rng)
}

/// Unit masks of `n` units of `len` tokens with at least one real unit;
/// some units fully padded.
fn unit_mask(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<bool> {
    loop {
        let mut m = Vec::with_capacity(n * len);
        for _ in 0..n {
            if rng.gen_bool(0.25) {
                m.extend(std::iter::repeat_n(false, len));
            } else {
                let real = rng.gen_range(1..=len);
                m.extend((0..len).map(|p| p < real));
            }
        }
        if m.iter().any(|x| *x) {
            return m;
        }
    }
}

fn is_distribution(v: &[f64], mask: &[bool]) -> bool {
    let sum: f64 = v.iter().sum();
    (sum - 1.0).abs() <= 1e-6
        && v.iter().zip(mask).all(|(x, m)| if *m { *x >= 0.0 } else { *x == 0.0 })
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cases = match oracles::run_suite(&ModelConfig::tiny()) {
        Ok(c) => c,
        Err(e) => return Fail(format!("suite error: {e}")),
    };
    let elapsed = start.elapsed();
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let entries: usize = cases.iter().map(|c| c.entries).sum();
    verdict(
        failed.is_empty() && worst < 1e-3 && elapsed < Duration::from_secs(120),
        format!(
            "{} cases, {entries} entries, max rel error {worst:.2e}, {:.1}s{}",
            cases.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut problems = Vec::new();
    let mut softmaxes = 0usize;
    for trial in 0..1000 {
        // masked softmax along either axis
        let (r, c) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let x = random_tensor(&mut rng, r, c, 5.0);
        let mask = random_mask(&mut rng, r * c, 0.6);
        for axis in 0..2 {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let s = g.masked_softmax(v, &mask, axis, false).expect("softmax");
            let t = g.value(s);
            let slices: Vec<Vec<usize>> = if axis == 1 {
                (0..r).map(|i| (0..c).map(|j| i * c + j).collect()).collect()
            } else {
                (0..c).map(|j| (0..r).map(|i| i * c + j).collect()).collect()
            };
            for idx in slices {
                let vals: Vec<f64> = idx.iter().map(|&k| t.data()[k]).collect();
                let m: Vec<bool> = idx.iter().map(|&k| mask[k]).collect();
                let ok = if m.iter().any(|b| *b) {
                    is_distribution(&vals, &m)
                } else {
                    vals.iter().all(|v| *v == 0.0)
                };
                softmaxes += 1;
                if !ok {
                    problems.push(format!("trial {trial}: softmax slice {vals:?}"));
                }
            }
        }

        // selector: per-hop scores, fused weights, reweighting
        let heads = rng.gen_range(1..3);
        let width = heads * rng.gen_range(1..4);
        let len = rng.gen_range(1..5);
        let (n_c, n_u) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let hops = rng.gen_range(1..4);
        let mut store = ParameterStore::new();
        let block = AttentionBlock::new("att", width, heads).expect("block");
        block.init(&mut store, 0.5, &mut rng).expect("init");
        let selector = Selector::new("sel", hops, rng.gen_bool(0.5));
        selector.init(&mut store).expect("init");
        store.get_mut("sel.alpha").expect("alpha").data_mut()[0] = rng.gen_range(0.0..1.0);
        for p in store.get_mut("sel.pi").expect("pi").data_mut() {
            *p = rng.gen_range(0.0..1.0);
        }
        let c_mask = unit_mask(&mut rng, n_c, len);
        let u_mask = unit_mask(&mut rng, n_u, len);
        let mut g = Graph::with_store(&store);
        let ctx = g.constant(random_tensor(&mut rng, n_c * len, width, 1.0));
        let units_t = random_tensor(&mut rng, n_u * len, width, 1.0);
        let units = g.constant(units_t.clone());
        let q = HopQueries::build(&mut g, &block, ctx, &c_mask, len, hops).expect("queries");
        let sel = select_units(&mut g, &block, &selector, &q, units, &u_mask, len).expect("select");
        let real: Vec<bool> = u_mask.chunks(len).map(|m| m.iter().any(|x| *x)).collect();
        for h in &sel.hops {
            if !is_distribution(g.value(*h).data(), &real) {
                problems.push(format!("trial {trial}: hop scores {:?}", g.value(*h).data()));
            }
        }
        if selector.renormalize && !is_distribution(g.value(sel.weights).data(), &real) {
            problems.push(format!("trial {trial}: renormalised s̄ {:?}", g.value(sel.weights).data()));
        }
        let s_bar = g.value(sel.weights).data().to_vec();
        let out = g.value(sel.reweighted);
        for row in 0..n_u * len {
            for col in 0..width {
                if out.at(row, col) != (1.0 + s_bar[row / len]) * units_t.at(row, col) {
                    problems.push(format!("trial {trial}: Ū[{row},{col}] differs"));
                }
            }
        }

        // post-selection γ
        let n_k = rng.gen_range(1..6);
        let d = rng.gen_range(1..5);
        let mut k_mask = random_mask(&mut rng, n_k, 0.7);
        k_mask[rng.gen_range(0..n_k)] = true;
        let mut g = Graph::new();
        let ks = g.constant(random_tensor(&mut rng, n_k, d, 3.0));
        let mrc = g.constant(random_tensor(&mut rng, 1, d, 3.0));
        let mean = rng.gen_bool(0.2);
        let post = knowledge_post_select(&mut g, ks, &k_mask, mrc, mean).expect("post-select");
        if !is_distribution(g.value(post.gamma).data(), &k_mask) {
            problems.push(format!("trial {trial}: γ {:?}", g.value(post.gamma).data()));
        }
    }
    verdict(
        problems.is_empty(),
        format!(
            "1000 trials, {softmaxes} softmax slices{}",
            problems.first().map(|p| format!(", first problem: {p}")).unwrap_or_default()
        ),
    )
}

fn unit_scores_oracle(q: &Tensor, q_mask: &[bool], u: &Tensor, mask: &[bool], len: usize, alpha: f64) -> Vec<f64> {
    let w = q.cols();
    let n = mask.len() / len;
    let mut logits = vec![f64::NEG_INFINITY; n];
    for unit in 0..n {
        let mut best = Vec::new();
        for p in 0..len {
            let t = unit * len + p;
            if !mask[t] {
                continue;
            }
            let mut m = f64::NEG_INFINITY;
            for i in 0..q.rows() {
                if q_mask[i] {
                    let dot: f64 = (0..w).map(|c| q.at(i, c) * u.at(t, c)).sum();
                    m = m.max(dot / (w as f64).sqrt());
                }
            }
            best.push(m);
        }
        if !best.is_empty() {
            let mx = best.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = best.iter().sum::<f64>() / best.len() as f64;
            logits[unit] = alpha * mx + (1.0 - alpha) * mean;
        }
    }
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| if l.is_finite() { (l - top).exp() } else { 0.0 }).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 200;
    let mut worst = [0.0f64; 3];
    let mut recall_mismatch = 0;
    for _ in 0..trials {
        // unit_scores
        let w = rng.gen_range(1..6);
        let len = rng.gen_range(1..5);
        let n = rng.gen_range(1..6);
        let lq = rng.gen_range(1..5);
        let mut q_mask = random_mask(&mut rng, lq, 0.7);
        q_mask[0] = true;
        let mask = unit_mask(&mut rng, n, len);
        let q = random_tensor(&mut rng, lq, w, 2.0);
        let u = random_tensor(&mut rng, n * len, w, 2.0);
        let alpha = rng.gen_range(0.0..1.0);
        let mut g = Graph::new();
        let (qv, uv, av) = (g.constant(q.clone()), g.constant(u.clone()), g.constant(Tensor::scalar(alpha)));
        let s = unit_scores(&mut g, qv, &q_mask, uv, &mask, len, av).expect("unit_scores");
        let want = unit_scores_oracle(&q, &q_mask, &u, &mask, len, alpha);
        worst[0] = worst[0].max(max_diff(g.value(s).data(), &want));

        // cross_attend: E, α, β, X̂, R̂
        let (lx, lr) = (rng.gen_range(1..7), rng.gen_range(1..5));
        let mut xm = random_mask(&mut rng, lx, 0.7);
        let mut rm = random_mask(&mut rng, lr, 0.7);
        xm[rng.gen_range(0..lx)] = true;
        rm[rng.gen_range(0..lr)] = true;
        let x = random_tensor(&mut rng, lx, w, 2.0);
        let r = random_tensor(&mut rng, lr, w, 2.0);
        let mut g = Graph::new();
        let (xv, rv) = (g.constant(x.clone()), g.constant(r.clone()));
        let ca = cross_attend(&mut g, xv, &xm, rv, &rm).expect("cross_attend");
        let e: Vec<f64> = (0..lx)
            .flat_map(|i| {
                let (x, r) = (&x, &r);
                (0..lr).map(move |j| (0..w).map(|c| x.at(i, c) * r.at(j, c)).sum::<f64>())
            })
            .collect();
        let mut alpha_m = vec![0.0; lx * lr];
        let mut beta_m = vec![0.0; lx * lr];
        for i in 0..lx {
            if !xm[i] {
                continue;
            }
            let z: f64 = (0..lr).filter(|&j| rm[j]).map(|j| e[i * lr + j].exp()).sum();
            for j in (0..lr).filter(|&j| rm[j]) {
                alpha_m[i * lr + j] = e[i * lr + j].exp() / z;
            }
        }
        for j in 0..lr {
            if !rm[j] {
                continue;
            }
            let z: f64 = (0..lx).filter(|&i| xm[i]).map(|i| e[i * lr + j].exp()).sum();
            for i in (0..lx).filter(|&i| xm[i]) {
                beta_m[i * lr + j] = e[i * lr + j].exp() / z;
            }
        }
        let mut x_hat = vec![0.0; lx * w];
        for i in 0..lx {
            for c in 0..w {
                x_hat[i * w + c] = (0..lr).map(|j| alpha_m[i * lr + j] * r.at(j, c)).sum();
            }
        }
        let mut r_hat = vec![0.0; lr * w];
        for j in 0..lr {
            for c in 0..w {
                r_hat[j * w + c] = (0..lx).map(|i| beta_m[i * lr + j] * x.at(i, c)).sum();
            }
        }
        for (got, want) in [
            (ca.e, &e),
            (ca.alpha, &alpha_m),
            (ca.beta, &beta_m),
            (ca.x_hat, &x_hat),
            (ca.r_hat, &r_hat),
        ] {
            worst[1] = worst[1].max(max_diff(g.value(got).data(), want));
        }

        // enrich
        let xh = g.constant(Tensor::matrix(lx, w, x_hat.clone()));
        let ev = enrich(&mut g, xv, xh).expect("enrich");
        let en = g.value(ev).clone();
        let mut want = Vec::with_capacity(lx * 4 * w);
        for i in 0..lx {
            let (a, b): (Vec<f64>, Vec<f64>) = (0..w).map(|c| (x.at(i, c), x_hat[i * w + c])).unzip();
            want.extend(&a);
            want.extend(&b);
            want.extend(a.iter().zip(&b).map(|(p, q)| p - q));
            want.extend(a.iter().zip(&b).map(|(p, q)| p * q));
        }
        worst[2] = worst[2].max(max_diff(en.data(), &want));

        // recall, exact; coarse values make ties common
        let n = rng.gen_range(5..21);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
        let label = rng.gen_range(0..n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
        let rank = order.iter().position(|&i| i == label).unwrap() + 1;
        for k in [1, 2, 5] {
            if recall_at_n_k(&logits, label, k) != u32::from(rank <= k) {
                recall_mismatch += 1;
            }
        }
    }
    verdict(
        worst.iter().all(|w| *w <= 1e-6) && recall_mismatch == 0,
        format!(
            "{trials} instances each: unit_scores {:.1e}, cross_attend {:.1e}, enrich {:.1e}, recall mismatches {recall_mismatch}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (i, flags) in ["", "drop_context", "drop_knowledge", "disable_post_selection", "disable_context_selector"]
        .iter()
        .enumerate()
    {
        let mut cfg = ModelConfig::tiny();
        cfg.ablation = AblationFlags::parse_list(flags).expect("flags");
        cfg.seed = 40 + i as u64;
        let set = copy_task(10, &cfg.limits, 400 + i as u64).expect("set");
        let model = synthetic_model(&cfg, &set).expect("model");
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        for s in &set.samples {
            let base = model.logits(s).expect("logits");
            let mut p = s.clone();
            // all grids share one token extent
            let extra = rng.gen_range(0..4);
            p.context = p.context.padded_rows(rng.gen_range(0..3)).padded_tokens(extra);
            p.knowledge = p.knowledge.padded_rows(rng.gen_range(1..3)).padded_tokens(extra);
            p.candidates = p.candidates.padded_tokens(extra);
            let padded = model.logits(&p).expect("logits");
            worst = worst.max(max_diff(&base, &padded));
            count += 1;
        }
    }
    verdict(worst <= 1e-8, format!("{count} samples over 5 configurations, max logit change {worst:.1e}"))
}

fn overfit_setup() -> (ModelConfig, SyntheticSet) {
    let mut cfg = ModelConfig::tiny();
    cfg.limits = Limits {
        max_utterances: 2,
        max_knowledge: 2,
        max_tokens: 4,
        candidates: 5,
    };
    cfg.max_epochs = 200;
    cfg.patience = 200;
    let set = copy_task(32, &cfg.limits, 5).expect("set");
    (cfg, set)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (cfg, set) = overfit_setup();
    let mut model = synthetic_model(&cfg, &set).expect("model");
    let opts = TrainOptions {
        target_r_at_1: Some(0.95),
    };
    let h = match train(&mut model, &set.samples, &set.samples, opts, |_| {}) {
        Ok(h) => h,
        Err(e) => return Fail(format!("training error: {e}")),
    };
    let elapsed = start.elapsed();
    let first = h.epochs[0].valid_loss;
    let ln5 = 5f64.ln();
    verdict(
        h.best_valid_r_at_1 >= 0.95 && first < ln5 && elapsed < Duration::from_secs(600),
        format!(
            "R_5@1 {:.3} at epoch {}, loss after epoch 1 {first:.4} (ln 5 = {ln5:.4}), {:.1}s",
            h.best_valid_r_at_1,
            h.best_epoch,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut cfg = ModelConfig::tiny();
    cfg.limits.candidates = 20;
    let set = random_task(1000, &cfg.limits, 6).expect("set");
    let model = synthetic_model(&cfg, &set).expect("model");
    let r = match evaluate_samples(&model, "random", &set.samples) {
        Ok(r) => r,
        Err(e) => return Fail(format!("evaluation error: {e}")),
    };
    verdict(
        (0.03..=0.07).contains(&r.r_at_1),
        format!("{} samples, 20 candidates, R_20@1 {:.3}", r.samples, r.r_at_1),
    )
}

fn data_root() -> PathBuf {
    std::env::var_os(data::DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn criterion_7() -> Outcome {
    let raw = data_root().join("persona");
    let ds = Dataset::PersonaOriginal;
    let missing: Vec<PathBuf> = data::SPLITS
        .iter()
        .map(|s| data::raw_split_path(ds, &raw, s))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Skip(format!("Persona-Chat not found ({} missing)", missing[0].display()));
    }
    let start = Instant::now();
    let mut cfg = ModelConfig::for_dataset(ds);
    cfg.hidden = 64;
    cfg.heads = 2;
    cfg.mlp_hidden = 64;
    cfg.max_epochs = 2;
    cfg.patience = 2;
    cfg.skipgram_epochs = 2;
    let vectors = std::env::var_os("DCK_VECTORS").map(PathBuf::from);
    if vectors.is_none() {
        cfg.pretrained_dim = 0;
    }
    let tmp = tempfile::tempdir().expect("tempdir");
    let opts = PreprocessOptions {
        config: cfg.clone(),
        vectors,
        max_dialogues: Some(1000),
    };
    let run = preprocess(&raw, tmp.path(), &opts)
        .and_then(|_| DataDir::open(tmp.path()))
        .and_then(|dir| {
            let run = train_from_dir(&cfg, &dir, TrainOptions::default(), |e| {
                eprintln!("  criterion 7 epoch {} valid R@1 {:.3} ({:.0}s)", e.epoch, e.valid_r_at_1, e.wall_time_secs)
            })?;
            let test = dir.samples("test", 0)?;
            evaluate_report(&run.model, "test", &test, false)
        });
    let elapsed = start.elapsed();
    match run {
        Ok(r) => verdict(
            r.r_at_1 >= 0.15 && elapsed < Duration::from_secs(45 * 60),
            format!("held-out R_20@1 {:.3} on {} samples, {:.0}s", r.r_at_1, r.samples, elapsed.as_secs_f64()),
        ),
        Err(e) => Fail(format!("pipeline error: {e}")),
    }
}

fn zero_slices(cfg: &ModelConfig, set: &SyntheticSet) -> Result<(), String> {
    let model = synthetic_model(cfg, set).map_err(|e| e.to_string())?;
    let w = cfg.feature_width();
    let a = &cfg.ablation;
    let forbidden = [
        a.drop_context,
        a.drop_knowledge,
        a.drop_context,
        a.drop_knowledge,
    ];
    for s in &set.samples {
        let mut g = model.graph();
        let f = model.forward(&mut g, s).map_err(|e| e.to_string())?;
        let t = g.value(f.final_features);
        for r in 0..t.rows() {
            for (part, &z) in forbidden.iter().enumerate() {
                let slice = &t.row(r)[part * w..(part + 1) * w];
                if z && slice.iter().any(|v| *v != 0.0) {
                    return Err(format!("slice {part} not zero"));
                }
                if !z && slice.iter().all(|v| *v == 0.0) {
                    return Err(format!("slice {part} unexpectedly zero"));
                }
            }
        }
        if (f.context_weights.is_some()) != a.context_selector() {
            return Err("context selector presence".into());
        }
        if (f.knowledge_weights.is_some()) != a.knowledge_selector() {
            return Err("knowledge selector presence".into());
        }
        if a.disable_post_selection {
            let real = s.knowledge.real_rows() as f64;
            for gm in &f.gamma {
                let ok = g
                    .value(*gm)
                    .data()
                    .iter()
                    .enumerate()
                    .all(|(i, v)| *v == if s.knowledge.is_real_row(i) { 1.0 / real } else { 0.0 });
                if !ok {
                    return Err("γ not uniform".into());
                }
            }
        }
    }
    Ok(())
}

fn fixed_run(cfg: &ModelConfig, set: &SyntheticSet, epochs: usize) -> Result<MetricsReport, String> {
    let mut cfg = cfg.clone();
    cfg.max_epochs = epochs;
    cfg.patience = epochs;
    let mut model = synthetic_model(&cfg, set).map_err(|e| e.to_string())?;
    train(&mut model, &set.samples, &set.samples, TrainOptions::default(), |_| {}).map_err(|e| e.to_string())?;
    evaluate_samples(&model, "train", &set.samples).map_err(|e| e.to_string())
}

fn criterion_8() -> Outcome {
    let (cfg, set) = overfit_setup();
    let full = match fixed_run(&cfg, &set, 10) {
        Ok(r) => r,
        Err(e) => return Fail(format!("full model: {e}")),
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for flag in AblationFlags::NAMES {
        let mut c = cfg.clone();
        c.ablation = AblationFlags::parse_list(flag).expect("flag");
        if let Err(e) = zero_slices(&c, &set) {
            ok = false;
            notes.push(format!("{flag}: {e}"));
            continue;
        }
        match fixed_run(&c, &set, 10) {
            Ok(r) => {
                let differs = (r.r_at_1, r.r_at_2, r.r_at_5, r.mean_loss)
                    != (full.r_at_1, full.r_at_2, full.r_at_5, full.mean_loss);
                ok &= differs;
                notes.push(format!("{flag} R@1 {:.3} loss {:.3}", r.r_at_1, r.mean_loss));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{flag}: {e}"));
            }
        }
    }
    verdict(
        ok,
        format!("full R@1 {:.3} loss {:.3}; {}", full.r_at_1, full.mean_loss, notes.join("; ")),
    )
}

fn seeded_run(cfg: &ModelConfig, set: &SyntheticSet) -> (History, MetricsReport, Vec<u8>) {
    let mut model = synthetic_model(cfg, set).expect("model");
    let h = train(&mut model, &set.samples, &set.samples, TrainOptions::default(), |_| {}).expect("train");
    let mut r = evaluate_samples(&model, "train", &set.samples).expect("eval");
    r.wall_time_secs = 0.0;
    let mut bytes = Vec::new();
    checkpoint::write_checkpoint(&mut bytes, &model).expect("checkpoint");
    (h, r, bytes)
}

fn criterion_9() -> Outcome {
    let (mut cfg, set) = overfit_setup();
    cfg.max_epochs = 5;
    cfg.seed = 9;
    let (ha, ra, ca) = seeded_run(&cfg, &set);
    let (hb, rb, cb) = seeded_run(&cfg, &set);
    let losses_equal = ha.batch_losses.len() == hb.batch_losses.len()
        && ha.batch_losses.iter().zip(&hb.batch_losses).all(|(a, b)| a.to_bits() == b.to_bits());
    let epochs_equal = ha
        .epochs
        .iter()
        .zip(&hb.epochs)
        .all(|(a, b)| a.valid_loss.to_bits() == b.valid_loss.to_bits() && a.valid_r_at_1 == b.valid_r_at_1);
    let metrics_equal = ra == rb;
    let ckpt_equal = ca == cb;
    verdict(
        losses_equal && epochs_equal && metrics_equal && ckpt_equal,
        format!(
            "{} batch losses; losses {losses_equal}, epochs {epochs_equal}, metrics {metrics_equal}, checkpoint bytes {ckpt_equal}",
            ha.batch_losses.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let root = data_root();
    let tables: [(Dataset, &str, [(usize, usize); 3]); 2] = [
        (Dataset::PersonaOriginal, "persona", [(8939, 65719), (1000, 7801), (968, 7512)]),
        (Dataset::Cmudog, "cmudog", [(2881, 36159), (196, 2425), (537, 6637)]),
    ];
    let mut checked = Vec::new();
    let mut mismatches = Vec::new();
    for (ds, sub, want) in tables {
        let dir = root.join(sub);
        if data::SPLITS.iter().any(|s| !data::raw_split_path(ds, &dir, s).exists()) {
            continue;
        }
        for (split, &(conv, turns)) in data::SPLITS.iter().zip(&want) {
            match parse_split(ds, &dir, split) {
                Ok(d) => {
                    let CorpusStats { conversations, turns: t } = corpus_stats(&d);
                    if (conversations, t) != (conv, turns) {
                        mismatches.push(format!("{ds} {split}: {conversations}/{t}, expected {conv}/{turns}"));
                    }
                }
                Err(e) => mismatches.push(format!("{ds} {split}: {e}")),
            }
        }
        checked.push(ds.name());
    }
    if checked.is_empty() {
        return Skip(format!("no dataset found under {}", root.display()));
    }
    verdict(
        mismatches.is_empty(),
        format!("checked {}{}", checked.join(", "), if mismatches.is_empty() { String::new() } else { format!("; {}", mismatches.join("; ")) }),
    )
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags; a filter that names no criterion
    // skips the whole suite.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if filter.iter().any(|f| !"acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient oracle", criterion_1),
        ("attention/selection invariants", criterion_2),
        ("oracle equivalence", criterion_3),
        ("deletion equivalence", criterion_4),
        ("overfit", criterion_5),
        ("random baseline", criterion_6),
        ("small-data learning signal", criterion_7),
        ("ablation structure", criterion_8),
        ("determinism", criterion_9),
        ("data statistics", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (tag, detail) = match run() {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!(
            "criterion {:>2} {tag} {name}: {detail} [{:.1}s]",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
