//! Negative response sampling.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A deduplicated pool of responses to draw negatives from.
#[derive(Clone, Debug)]
pub struct NegativePool {
    responses: Vec<String>,
}

impl NegativePool {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in responses {
            let r = r.into();
            if seen.insert(r.clone()) {
                out.push(r);
            }
        }
        Self { responses: out }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// `n` candidates: `truth` once plus `n − 1` distinct negatives drawn
    /// uniformly without replacement, in a seeded shuffled order. Returns the
    /// candidates and the position of `truth`.
    pub fn sample(&self, truth: &str, n: usize, seed: u64) -> Result<(Vec<String>, usize)> {
        let contains_truth = self.responses.iter().any(|r| r == truth);
        let available = self.responses.len() - usize::from(contains_truth);
        let needed = n.saturating_sub(1);
        if available < needed {
            return Err(Error::InsufficientPool { needed, available });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<usize> = Vec::with_capacity(needed);
        if needed * 4 >= available {
            // Dense draw: shuffle the eligible indices.
            let mut eligible: Vec<usize> = (0..self.responses.len())
                .filter(|&i| self.responses[i] != truth)
                .collect();
            eligible.shuffle(&mut rng);
            chosen.extend_from_slice(&eligible[..needed]);
        } else {
            let mut taken = HashSet::with_capacity(needed);
            while chosen.len() < needed {
                let i = rng.gen_range(0..self.responses.len());
                if self.responses[i] != truth && taken.insert(i) {
                    chosen.push(i);
                }
            }
        }
        let mut cands: Vec<String> = chosen.iter().map(|&i| self.responses[i].clone()).collect();
        cands.push(truth.to_string());
        cands.shuffle(&mut rng);
        let label = cands.iter().position(|c| c == truth).expect("truth inserted");
        Ok((cands, label))
    }
}

/// Draw `n − 1` negatives for `truth` from `pool`; see [`NegativePool::sample`].
pub fn sample_negatives(truth: &str, pool: &[String], n: usize, seed: u64) -> Result<(Vec<String>, usize)> {
    NegativePool::new(pool.iter().cloned()).sample(truth, n, seed)
}

/// Seeded shuffle of an existing candidate list; returns the new label.
pub fn shuffle_candidates(mut candidates: Vec<String>, truth: &str, seed: u64) -> (Vec<String>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let label = candidates
        .iter()
        .position(|c| c == truth)
        .expect("truth must be among the candidates");
    (candidates, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn pool(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("resp {i}")).collect()
    }

    #[test]
    fn twenty_candidates_with_truth_once() {
        let p = pool(100);
        let (c, label) = sample_negatives("resp 7", &p, 20, 3).unwrap();
        assert_eq!(c.len(), 20);
        assert_eq!(c[label], "resp 7");
        assert_eq!(c.iter().filter(|x| *x == "resp 7").count(), 1);
        let distinct: HashSet<_> = c.iter().collect();
        assert_eq!(distinct.len(), 20);
    }

    #[test]
    fn deterministic_under_seed() {
        let p = pool(50);
        assert_eq!(
            sample_negatives("x", &p, 20, 11).unwrap(),
            sample_negatives("x", &p, 20, 11).unwrap()
        );
        assert_ne!(
            sample_negatives("x", &p, 20, 11).unwrap(),
            sample_negatives("x", &p, 20, 12).unwrap()
        );
    }

    #[test]
    fn insufficient_pool() {
        let mut p = pool(19);
        p.push("truth".into());
        p.push("resp 0".into());
        assert!(matches!(
            sample_negatives("truth", &p, 21, 0),
            Err(Error::InsufficientPool { needed: 20, available: 19 })
        ));
        assert!(sample_negatives("truth", &p, 20, 0).is_ok());
    }

    /// Pool of 25 = truth + 24 distinct negatives, 19 drawn per sample:
    /// each negative's inclusion is Bernoulli(19/24).
    #[test]
    fn inclusion_frequency_is_uniform() {
        let mut p = pool(24);
        p.push("truth".into());
        let draws = 10_000;
        let mut counts: HashMap<String, usize> = HashMap::new();
        let sampler = NegativePool::new(p.clone());
        let mut first_label = vec![0usize; 20];
        for s in 0..draws {
            let (c, label) = sampler.sample("truth", 20, s as u64).unwrap();
            first_label[label] += 1;
            for x in c.into_iter().filter(|x| x != "truth") {
                *counts.entry(x).or_default() += 1;
            }
        }
        let prob = 19.0 / 24.0;
        let mean = draws as f64 * prob;
        let sd = (draws as f64 * prob * (1.0 - prob)).sqrt();
        assert_eq!(counts.len(), 24);
        for (k, c) in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{k}: {c} vs {mean}±{sd}");
        }
        // label position should be uniform over 20 slots as well
        let lm = draws as f64 / 20.0;
        let lsd = (draws as f64 * 0.05 * 0.95).sqrt();
        for c in first_label {
            assert!((c as f64 - lm).abs() <= 4.0 * lsd);
        }
    }
}
