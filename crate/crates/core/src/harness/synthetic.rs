//! Generated datasets for the overfit, baseline and oracle suites.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::model::Model;
use crate::corpus::{build_vocabulary, encode_sample, tokenize, EncodedSample, Limits, Sample, Vocabulary};
use crate::embed::Embeddings;
use crate::error::Result;

/// Raw samples, their vocabulary and encodings.
pub struct SyntheticSet {
    pub vocab: Vocabulary,
    pub raw: Vec<Sample>,
    pub samples: Vec<EncodedSample>,
}

fn word(rng: &mut ChaCha8Rng, words: usize) -> String {
    format!("w{}", rng.gen_range(0..words))
}

fn sentence(rng: &mut ChaCha8Rng, words: usize, len: usize) -> String {
    (0..len).map(|_| word(rng, words)).collect::<Vec<_>>().join(" ")
}

fn finish(raw: Vec<Sample>, limits: &Limits) -> Result<SyntheticSet> {
    let texts = raw
        .iter()
        .flat_map(|s| s.context.iter().chain(&s.knowledge).chain(&s.candidates))
        .map(|t| tokenize(t));
    let vocab = build_vocabulary(texts, 1);
    let samples = raw
        .iter()
        .map(|s| encode_sample(s, &vocab, limits))
        .collect::<Result<_>>()?;
    Ok(SyntheticSet { vocab, raw, samples })
}

/// Distinct candidates: the truth first, then fresh draws.
fn candidates(rng: &mut ChaCha8Rng, truth: String, n: usize, mut draw: impl FnMut(&mut ChaCha8Rng) -> String) -> (Vec<String>, usize) {
    let mut c = vec![truth];
    while c.len() < n {
        let s = draw(rng);
        if !c.contains(&s) {
            c.push(s);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let label = order.iter().position(|&i| i == 0).expect("truth present");
    (order.into_iter().map(|i| c[i].clone()).collect(), label)
}

/// Dialogues whose true response reuses words of the last utterance and
/// of one knowledge sentence; negatives are random word strings.
pub fn copy_task(dialogues: usize, limits: &Limits, seed: u64) -> Result<SyntheticSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = 40;
    let l = limits.max_tokens;
    let mut raw = Vec::with_capacity(dialogues);
    for _ in 0..dialogues {
        let n_c = rng.gen_range(1..=limits.max_utterances);
        let n_k = rng.gen_range(1..=limits.max_knowledge);
        let context: Vec<String> = (0..n_c)
            .map(|_| {
                let len = rng.gen_range(1..=l);
                sentence(&mut rng, words, len)
            })
            .collect();
        let knowledge: Vec<String> = (0..n_k)
            .map(|_| {
                let len = rng.gen_range(1..=l);
                sentence(&mut rng, words, len)
            })
            .collect();
        let last = tokenize(context.last().expect("n_c ≥ 1"));
        let fact = tokenize(&knowledge[rng.gen_range(0..n_k)]);
        let mut truth: Vec<String> = last.iter().take(l.div_ceil(2)).cloned().collect();
        truth.extend(fact.iter().take(l - truth.len()).cloned());
        let (cands, label) = candidates(&mut rng, truth.join(" "), limits.candidates, |r| {
            let len = r.gen_range(1..=l);
            sentence(r, words, len)
        });
        raw.push(Sample {
            context,
            knowledge,
            candidates: cands,
            label,
        });
    }
    finish(raw, limits)
}

/// Every text drawn independently from one distribution, so candidates are
/// exchangeable and any fixed scorer ranks the truth first with
/// probability `1/n`.
pub fn random_task(samples: usize, limits: &Limits, seed: u64) -> Result<SyntheticSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = 200;
    let l = limits.max_tokens;
    let mut raw = Vec::with_capacity(samples);
    for _ in 0..samples {
        let draw = |r: &mut ChaCha8Rng| {
            let len = r.gen_range(1..=l);
            sentence(r, words, len)
        };
        let n_c = rng.gen_range(1..=limits.max_utterances);
        let n_k = rng.gen_range(1..=limits.max_knowledge);
        let context = (0..n_c).map(|_| draw(&mut rng)).collect();
        let knowledge = (0..n_k).map(|_| draw(&mut rng)).collect();
        let truth = draw(&mut rng);
        let (cands, label) = candidates(&mut rng, truth, limits.candidates, draw);
        raw.push(Sample {
            context,
            knowledge,
            candidates: cands,
            label,
        });
    }
    finish(raw, limits)
}

/// A model over `set.vocab` with random frozen tables, both drawn from
/// `config.seed`.
pub fn synthetic_model(config: &ModelConfig, set: &SyntheticSet) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_7AB1E);
    let emb = Embeddings::random(&set.vocab, config.embed_config(), 1.0, &mut rng)?;
    Model::new(config.clone(), set.vocab.clone(), emb)
}

/// Write `{train,valid,test}_self_original.txt` in the Persona-Chat text
/// format: `dialogues` episodes per split, four knowledge lines, five turns,
/// twenty candidates per turn with the truth last.
pub fn write_persona_files(dir: &Path, dialogues: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir)?;
    for split in ["train", "valid", "test"] {
        let mut out = String::new();
        for _ in 0..dialogues {
            let mut line = 1;
            for _ in 0..4 {
                let len = rng.gen_range(3..=6);
                out += &format!("{line} your persona: {} .\n", sentence(&mut rng, 60, len));
                line += 1;
            }
            for _ in 0..5 {
                let len = rng.gen_range(2..=7);
                let query = sentence(&mut rng, 60, len);
                let len = rng.gen_range(2..=7);
                let reply = sentence(&mut rng, 60, len);
                let mut cands: Vec<String> = (0..19)
                    .map(|_| {
                        let len = rng.gen_range(2..=7);
                        sentence(&mut rng, 60, len)
                    })
                    .collect();
                cands.push(reply.clone());
                out += &format!("{line} {query}\t{reply}\t\t{}\n", cands.join("|"));
                line += 1;
            }
        }
        std::fs::write(dir.join(format!("{split}_self_original.txt")), out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PAD;

    #[test]
    fn copy_task_shapes_and_truth() {
        let limits = Limits {
            max_utterances: 3,
            max_knowledge: 2,
            max_tokens: 4,
            candidates: 5,
        };
        let set = copy_task(20, &limits, 3).unwrap();
        assert_eq!(set.samples.len(), 20);
        for (raw, enc) in set.raw.iter().zip(&set.samples) {
            raw.validate().unwrap();
            assert_eq!(enc.candidates.rows, 5);
            let truth = tokenize(&raw.candidates[raw.label]);
            let last = tokenize(raw.context.last().unwrap());
            assert_eq!(truth[0], last[0]);
            assert!(enc.context.real_rows() >= 1 && enc.knowledge.real_rows() >= 1);
            assert!(enc.candidates.ids.chunks(4).all(|r| r[0] as usize != PAD));
        }
        let again = copy_task(20, &limits, 3).unwrap();
        assert_eq!(again.raw, set.raw);
    }

    #[test]
    fn random_task_labels_spread() {
        let set = random_task(400, &Limits::PERSONA, 9).unwrap();
        let mut counts = [0usize; 20];
        for s in &set.raw {
            counts[s.label] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
    }
}
