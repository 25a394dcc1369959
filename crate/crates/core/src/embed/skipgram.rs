//! Skip-gram with negative sampling over id sequences.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::numerics::{sigmoid, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

/// Train `vocab_size × dim` input vectors on `corpus` (training split only).
///
/// Every row starts at a small seeded random value, so tokens that never
/// occur still get a finite vector; the PAD row is forced to zero. Negatives
/// are drawn from the unigram distribution raised to 0.75 and the learning
/// rate decays linearly to 1e-4 of its start value.
pub fn train_skipgram(corpus: &[Vec<usize>], vocab_size: usize, cfg: &SkipGramConfig) -> Tensor {
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input: Vec<f64> = (0..vocab_size * dim)
        .map(|_| (rng.gen::<f64>() - 0.5) / dim.max(1) as f64)
        .collect();
    let mut output = vec![0.0; vocab_size * dim];

    let mut counts = vec![0.0f64; vocab_size];
    for seq in corpus {
        for &t in seq {
            if t != PAD && t < vocab_size {
                counts[t] += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 && dim > 0 {
        let weights: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
        let noise = WeightedIndex::new(&weights).expect("positive total");
        let planned = total * cfg.epochs as f64;
        let mut seen = 0.0;
        let mut grad = vec![0.0; dim];
        for _ in 0..cfg.epochs {
            for seq in corpus {
                let seq: Vec<usize> = seq.iter().copied().filter(|&t| t != PAD && t < vocab_size).collect();
                for (pos, &center) in seq.iter().enumerate() {
                    let lr = cfg.learning_rate * (1.0 - seen / planned).max(1e-4);
                    seen += 1.0;
                    let reach = rng.gen_range(1..=cfg.window.max(1));
                    let lo = pos.saturating_sub(reach);
                    let hi = (pos + reach).min(seq.len() - 1);
                    for ctx_pos in lo..=hi {
                        if ctx_pos == pos {
                            continue;
                        }
                        let target = seq[ctx_pos];
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        let v = center * dim;
                        for k in 0..=cfg.negatives {
                            let (word, label) = if k == 0 {
                                (target, 1.0)
                            } else {
                                let w = noise.sample(&mut rng);
                                if w == target {
                                    continue;
                                }
                                (w, 0.0)
                            };
                            let u = word * dim;
                            let dot: f64 = (0..dim).map(|d| input[v + d] * output[u + d]).sum();
                            let g = lr * (label - sigmoid(dot));
                            for d in 0..dim {
                                grad[d] += g * output[u + d];
                                output[u + d] += g * input[v + d];
                            }
                        }
                        for d in 0..dim {
                            input[v + d] += grad[d];
                        }
                    }
                }
            }
        }
    }
    if vocab_size > PAD {
        input[PAD * dim..(PAD + 1) * dim].iter_mut().for_each(|x| *x = 0.0);
    }
    Tensor::matrix(vocab_size, dim, input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(t: &Tensor, a: usize, b: usize) -> f64 {
        let (x, y) = (t.row(a), t.row(b));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx: f64 = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|p| p * p).sum::<f64>().sqrt();
        dot / (nx * ny)
    }

    /// ids: 2 = a, 3 = b, 4 = z, 5..=8 fillers shared by a and b, 9..=12 only near z
    fn toy_corpus() -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut out = Vec::new();
        for _ in 0..400 {
            let f1 = rng.gen_range(5..=8);
            let f2 = rng.gen_range(5..=8);
            out.push(vec![f1, 2, 3, f2]);
            out.push(vec![f2, 3, 2, f1]);
            let g1 = rng.gen_range(9..=12);
            let g2 = rng.gen_range(9..=12);
            out.push(vec![g1, 4, g2]);
        }
        out
    }

    #[test]
    fn neighbours_end_up_closer() {
        let cfg = SkipGramConfig { dim: 16, epochs: 3, ..Default::default() };
        let t = train_skipgram(&toy_corpus(), 13, &cfg);
        assert!(t.is_finite());
        let (ab, az) = (cosine(&t, 2, 3), cosine(&t, 2, 4));
        assert!(ab > az, "cos(a,b)={ab} cos(a,z)={az}");
    }

    #[test]
    fn deterministic_and_shaped() {
        let cfg = SkipGramConfig { dim: 100, epochs: 1, ..Default::default() };
        let a = train_skipgram(&toy_corpus(), 13, &cfg);
        let b = train_skipgram(&toy_corpus(), 13, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[13, 100]);
        assert!(a.row(PAD).iter().all(|x| *x == 0.0));
        assert!(a.row(1).iter().any(|x| *x != 0.0), "unseen tokens still get a vector");
    }
}
