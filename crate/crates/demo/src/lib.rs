//! Browser demo: masked softmax, recall at k, and a tiny model trained on
//! the synthetic copy task whose selection weights can be inspected.
//!
//! The plain functions return JSON strings and are what the native tests
//! exercise; the `wasm_bindgen` exports wrap them.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dck_core::corpus::Limits;
use dck_core::harness::synthetic::{copy_task, synthetic_model, SyntheticSet};
use dck_core::harness::{evaluate_samples, export_selection_weights, rank_of, train, Model, ModelConfig, TrainOptions};
use dck_core::numerics::{masked_softmax, Tensor};

fn numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

/// `1`/`0` (or `x` for masked) per entry; empty means all real.
fn mask(text: &str, n: usize) -> Result<Vec<bool>, String> {
    let flags: Vec<char> = text.chars().filter(|c| !c.is_whitespace() && *c != ',').collect();
    if flags.is_empty() {
        return Ok(vec![true; n]);
    }
    if flags.len() != n {
        return Err(format!("mask has {} entries, logits have {n}", flags.len()));
    }
    flags
        .iter()
        .map(|c| match c {
            '1' => Ok(true),
            '0' | 'x' => Ok(false),
            _ => Err(format!("mask entries are 1 or 0, got {c:?}")),
        })
        .collect()
}

#[derive(Serialize)]
struct SoftmaxOut {
    probabilities: Vec<f64>,
    sum: f64,
}

pub fn softmax_json(logits: &str, mask_text: &str) -> Result<String, String> {
    let x = numbers(logits)?;
    if x.is_empty() {
        return Err("no logits".into());
    }
    let m = mask(mask_text, x.len())?;
    let p = masked_softmax(&Tensor::row_vector(x), &m, 1, true).map_err(|e| e.to_string())?;
    let probabilities = p.into_data();
    let sum = probabilities.iter().sum();
    Ok(serde_json::to_string(&SoftmaxOut { probabilities, sum }).expect("serializable"))
}

#[derive(Serialize)]
struct RecallOut {
    rank: usize,
    candidates: usize,
    r_at_1: bool,
    r_at_2: bool,
    r_at_5: bool,
}

pub fn recall_json(logits: &str, label: usize) -> Result<String, String> {
    let x = numbers(logits)?;
    if label >= x.len() {
        return Err(format!("label {label} out of range for {} candidates", x.len()));
    }
    let rank = rank_of(&x, label);
    Ok(serde_json::to_string(&RecallOut {
        rank,
        candidates: x.len(),
        r_at_1: rank <= 1,
        r_at_2: rank <= 2,
        r_at_5: rank <= 5,
    })
    .expect("serializable"))
}

#[derive(Serialize)]
struct EpochOut {
    epoch: usize,
    train_loss: f64,
    r_at_1: f64,
    mean_loss: f64,
}

/// A tiny model and its synthetic training set.
pub struct Session {
    model: Model,
    set: SyntheticSet,
    epochs: usize,
    seed: u64,
}

impl Session {
    pub fn new(dialogues: usize, seed: u64) -> Result<Self, String> {
        let mut cfg = ModelConfig::tiny();
        cfg.seed = seed;
        cfg.limits = Limits {
            max_utterances: 3,
            max_knowledge: 3,
            max_tokens: 5,
            candidates: 5,
        };
        let set = copy_task(dialogues.max(1), &cfg.limits, seed).map_err(|e| e.to_string())?;
        let model = synthetic_model(&cfg, &set).map_err(|e| e.to_string())?;
        Ok(Self {
            model,
            set,
            epochs: 0,
            seed,
        })
    }

    pub fn samples(&self) -> usize {
        self.set.samples.len()
    }

    /// Train `n` more epochs; returns one JSON record per epoch.
    pub fn train_json(&mut self, n: usize) -> Result<String, String> {
        let mut out = Vec::new();
        for _ in 0..n {
            self.epochs += 1;
            // a fresh shuffle every epoch
            self.model.config.seed = self.seed.wrapping_add(self.epochs as u64 * 7919);
            self.model.config.max_epochs = 1;
            let h = train(&mut self.model, &self.set.samples, &self.set.samples, TrainOptions::default(), |_| {})
                .map_err(|e| e.to_string())?;
            let r = evaluate_samples(&self.model, "train", &self.set.samples).map_err(|e| e.to_string())?;
            out.push(EpochOut {
                epoch: self.epochs,
                train_loss: h.epochs[0].train_loss,
                r_at_1: r.r_at_1,
                mean_loss: r.mean_loss,
            });
        }
        Ok(serde_json::to_string(&out).expect("serializable"))
    }

    /// Selection weights, post-selection weights and logits of one sample.
    pub fn inspect_json(&self, sample: usize) -> Result<String, String> {
        let enc = self
            .set
            .samples
            .get(sample)
            .ok_or_else(|| format!("sample {sample} out of range (0..{})", self.samples()))?;
        let rec = export_selection_weights(&self.model, sample, enc, self.set.raw.get(sample)).map_err(|e| e.to_string())?;
        Ok(serde_json::to_string(&rec).expect("serializable"))
    }
}

#[wasm_bindgen(js_name = maskedSoftmax)]
pub fn masked_softmax_js(logits: &str, mask: &str) -> Result<String, JsError> {
    softmax_json(logits, mask).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = recallAtK)]
pub fn recall_js(logits: &str, label: usize) -> Result<String, JsError> {
    recall_json(logits, label).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct DemoSession(Session);

#[wasm_bindgen]
impl DemoSession {
    #[wasm_bindgen(constructor)]
    pub fn new(dialogues: usize, seed: u32) -> Result<DemoSession, JsError> {
        Session::new(dialogues, seed as u64).map(DemoSession).map_err(|e| JsError::new(&e))
    }

    pub fn samples(&self) -> usize {
        self.0.samples()
    }

    pub fn train(&mut self, epochs: usize) -> Result<String, JsError> {
        self.0.train_json(epochs).map_err(|e| JsError::new(&e))
    }

    pub fn inspect(&self, sample: usize) -> Result<String, JsError> {
        self.0.inspect_json(sample).map_err(|e| JsError::new(&e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn softmax_masks_and_normalizes() {
        let v: Value = serde_json::from_str(&softmax_json("1, 2, 3", "101").unwrap()).unwrap();
        let p: Vec<f64> = v["probabilities"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(p[1], 0.0);
        assert!((p[0] + p[2] - 1.0).abs() < 1e-12);
        assert!((p[2] / p[0] - 2f64.exp()).abs() < 1e-9);
        assert!(softmax_json("1 2", "00").is_err());
        assert!(softmax_json("1 2", "1").is_err());
        assert!(softmax_json("a", "").is_err());
    }

    #[test]
    fn recall_ranks_with_ties() {
        let v: Value = serde_json::from_str(&recall_json("0.1 0.9 0.5 0.9", 3).unwrap()).unwrap();
        assert_eq!(v["rank"], 2);
        assert_eq!(v["r_at_1"], false);
        assert_eq!(v["r_at_2"], true);
        assert!(recall_json("1 2", 2).is_err());
    }

    #[test]
    fn session_trains_and_inspects() {
        let mut s = Session::new(12, 3).unwrap();
        assert_eq!(s.samples(), 12);
        let e: Value = serde_json::from_str(&s.train_json(3).unwrap()).unwrap();
        let e = e.as_array().unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e[2]["epoch"], 3);
        let first = e[0]["mean_loss"].as_f64().unwrap();
        let last = e[2]["mean_loss"].as_f64().unwrap();
        assert!(last < first, "{first} -> {last}");
        let rec: Value = serde_json::from_str(&s.inspect_json(0).unwrap()).unwrap();
        let gamma = rec["gamma"].as_array().unwrap();
        assert_eq!(gamma.len(), 5);
        let sum: f64 = gamma[0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(s.inspect_json(99).is_err());
    }
}
