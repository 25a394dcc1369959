//! Ranking metrics, the candidate loss, and length buckets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};

/// 1-based rank of `label` under descending logits; ties go to the lower
/// candidate index.
pub fn rank_of(logits: &[f64], label: usize) -> usize {
    let t = logits[label];
    1 + logits
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > t || (v == t && j < label))
        .count()
}

/// 1 iff the true candidate ranks within the top `k`.
pub fn recall_at_n_k(logits: &[f64], label: usize, k: usize) -> u32 {
    u32::from(rank_of(logits, label) <= k)
}

/// Mean over samples of `−log softmax(logits)[label]`.
pub fn batch_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::shape(
            "batch_loss",
            format!("{} logit rows, {} labels", logits.len(), labels.len()),
        ));
    }
    let mut g = Graph::new();
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let x = g.constant(Tensor::row_vector(row.clone()));
        let l = g.softmax_cross_entropy(x, y)?;
        total += g.value(l).item();
    }
    Ok(total / labels.len() as f64)
}

/// Inclusive real-utterance ranges; counts above the last range fall in it.
pub fn bucket_bounds(dataset: Dataset) -> [(usize, usize); 4] {
    if dataset.is_persona() {
        [(1, 3), (4, 7), (8, 11), (12, 15)]
    } else {
        [(1, 2), (3, 4), (5, 6), (7, 8)]
    }
}

pub fn bucket_index(bounds: &[(usize, usize)], utterances: usize) -> usize {
    bounds
        .iter()
        .position(|&(_, hi)| utterances <= hi)
        .unwrap_or(bounds.len() - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub samples: usize,
    pub r_at_1: f64,
    pub r_at_2: f64,
    pub r_at_5: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub candidates: usize,
    pub samples: usize,
    pub r_at_1: f64,
    pub r_at_2: f64,
    pub r_at_5: f64,
    pub mean_loss: f64,
    pub ablation: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub buckets: Option<Vec<BucketReport>>,
    pub config_hash: String,
    pub wall_time_secs: f64,
}

fn recalls(logits: &[&Vec<f64>], labels: &[usize]) -> [f64; 3] {
    let n = labels.len().max(1) as f64;
    let mut out = [0.0; 3];
    for (i, k) in [1, 2, 5].into_iter().enumerate() {
        let hits: u32 = logits.iter().zip(labels).map(|(l, &y)| recall_at_n_k(l, y, k)).sum();
        out[i] = f64::from(hits) / n;
    }
    out
}

impl MetricsReport {
    /// Metrics of per-sample logits. With `buckets`, samples are also
    /// grouped by their real-utterance count.
    pub fn from_logits(
        split: &str,
        logits: &[Vec<f64>],
        labels: &[usize],
        buckets: Option<(Dataset, &[usize])>,
    ) -> Result<Self> {
        let mean_loss = batch_loss(logits, labels)?;
        let candidates = logits[0].len();
        if logits.iter().any(|l| l.len() != candidates) {
            return Err(Error::shape("metrics", "samples have different candidate counts"));
        }
        let refs: Vec<&Vec<f64>> = logits.iter().collect();
        let [r1, r2, r5] = recalls(&refs, labels);
        let buckets = match buckets {
            None => None,
            Some((dataset, counts)) => {
                if counts.len() != labels.len() {
                    return Err(Error::shape("metrics", "one utterance count per sample expected"));
                }
                let bounds = bucket_bounds(dataset);
                let mut rows = Vec::new();
                for (b, &(lo, hi)) in bounds.iter().enumerate() {
                    let members: Vec<usize> = (0..labels.len())
                        .filter(|&i| bucket_index(&bounds, counts[i]) == b)
                        .collect();
                    let lg: Vec<&Vec<f64>> = members.iter().map(|&i| &logits[i]).collect();
                    let lb: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
                    let [a, c, d] = if members.is_empty() { [0.0; 3] } else { recalls(&lg, &lb) };
                    rows.push(BucketReport {
                        min_utterances: lo,
                        max_utterances: hi,
                        samples: members.len(),
                        r_at_1: a,
                        r_at_2: c,
                        r_at_5: d,
                    });
                }
                Some(rows)
            }
        };
        Ok(Self {
            split: split.to_string(),
            candidates,
            samples: labels.len(),
            r_at_1: r1,
            r_at_2: r2,
            r_at_5: r5,
            mean_loss,
            ablation: Vec::new(),
            buckets,
            config_hash: String::new(),
            wall_time_secs: 0.0,
        })
    }
}

/// Uniform random logits for every sample: the sanity baseline.
pub fn random_scores(samples: usize, candidates: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| (0..candidates).map(|_| rng.gen::<f64>()).collect())
        .collect()
}
