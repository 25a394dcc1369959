//! Per-sample export of selection weights, post-selection weights and logits.

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::corpus::{decode_row, EncodedSample, Sample, TokenGrid};
use crate::error::Result;
use crate::numerics::{Graph, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub sample_id: usize,
    pub label: usize,
    pub ablation: Vec<String>,
    /// Real context utterances, oldest first.
    pub context: Vec<String>,
    /// Fused `s̄_c` per real utterance; absent when the selector is off.
    pub context_weights: Option<Vec<f64>>,
    pub context_hop_weights: Vec<Vec<f64>>,
    pub knowledge: Vec<String>,
    pub knowledge_weights: Option<Vec<f64>>,
    pub knowledge_hop_weights: Vec<Vec<f64>>,
    pub candidates: Vec<String>,
    pub logits: Vec<f64>,
    /// Post-selection `γ` over real knowledge entries, one row per candidate.
    pub gamma: Vec<Vec<f64>>,
}

fn real_rows(grid: &TokenGrid) -> Vec<usize> {
    (0..grid.rows).filter(|&r| grid.is_real_row(r)).collect()
}

fn pick(g: &Graph, v: Var, rows: &[usize]) -> Vec<f64> {
    let t = g.value(v);
    rows.iter().map(|&r| t.data()[r]).collect()
}

/// Texts of the real rows: the raw strings when given (the encoder keeps
/// the latest context utterances and the first knowledge sentences), the
/// decoded tokens otherwise.
fn texts(grid: &TokenGrid, rows: &[usize], raw: Option<&[String]>, keep_last: bool, model: &Model) -> Vec<String> {
    match raw {
        Some(raw) if raw.len() >= rows.len() => {
            let kept = raw.len().min(grid.rows);
            let skip = if keep_last { raw.len() - kept } else { 0 };
            rows.iter().map(|&r| raw[skip + r].clone()).collect()
        }
        _ => rows.iter().map(|&r| decode_row(grid, r, &model.vocab).join(" ")).collect(),
    }
}

pub fn export_selection_weights(
    model: &Model,
    sample_id: usize,
    sample: &EncodedSample,
    raw: Option<&Sample>,
) -> Result<SelectionRecord> {
    let mut g = model.graph();
    let f = model.forward(&mut g, sample)?;
    let c_rows = real_rows(&sample.context);
    let k_rows = real_rows(&sample.knowledge);
    let all: Vec<usize> = (0..sample.candidates.rows).collect();
    Ok(SelectionRecord {
        sample_id,
        label: sample.label,
        ablation: model.config.ablation.active().iter().map(|s| s.to_string()).collect(),
        context: texts(&sample.context, &c_rows, raw.map(|r| r.context.as_slice()), true, model),
        context_weights: f.context_weights.map(|v| pick(&g, v, &c_rows)),
        context_hop_weights: f.context_hops.iter().map(|&v| pick(&g, v, &c_rows)).collect(),
        knowledge: texts(&sample.knowledge, &k_rows, raw.map(|r| r.knowledge.as_slice()), false, model),
        knowledge_weights: f.knowledge_weights.map(|v| pick(&g, v, &k_rows)),
        knowledge_hop_weights: f.knowledge_hops.iter().map(|&v| pick(&g, v, &k_rows)).collect(),
        candidates: texts(&sample.candidates, &all, raw.map(|r| r.candidates.as_slice()), false, model),
        logits: g.value(f.logits).data().to_vec(),
        gamma: f.gamma.iter().map(|&v| pick(&g, v, &k_rows)).collect(),
    })
}
