//! Turning dialogues into ranked-candidate samples.

use super::dialogue::Dialogue;
use super::encode::Sample;
use super::negatives::{shuffle_candidates, NegativePool};
use super::tokenize::split_sentences;
use crate::error::{Error, Result};

/// Deterministic per-turn seed.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One sample per Persona-Chat exchange. The context is the full history
/// up to and including the partner's utterance; knowledge is the persona.
/// Published candidate lists are reused (seeded shuffle); turns without a
/// list draw `n − 1` negatives from the responses of the same split.
pub fn persona_samples(dialogues: &[Dialogue], n: usize, seed: u64) -> Result<Vec<Sample>> {
    let pool = NegativePool::new(
        dialogues
            .iter()
            .flat_map(|d| d.turns.iter().filter_map(|t| t.response.clone())),
    );
    let mut out = Vec::new();
    for (di, d) in dialogues.iter().enumerate() {
        let mut history: Vec<String> = Vec::new();
        for (ti, turn) in d.turns.iter().enumerate() {
            let truth = turn.response.clone().ok_or_else(|| {
                Error::InvalidData(format!("persona dialogue {} turn {ti} has no response", d.id))
            })?;
            history.push(turn.text.clone());
            let s = mix_seed(seed, di as u64, ti as u64);
            let (candidates, label) = if turn.candidates.is_empty() {
                pool.sample(&truth, n, s)?
            } else {
                if !turn.candidates.contains(&truth) {
                    return Err(Error::InvalidData(format!(
                        "dialogue {} turn {ti}: response missing from candidate list",
                        d.id
                    )));
                }
                // Shorter candidate settings keep the truth and the first
                // negatives in file order.
                let mut kept = vec![truth.clone()];
                kept.extend(turn.candidates.iter().filter(|c| **c != truth).take(n.saturating_sub(1)).cloned());
                if kept.len() < n {
                    return Err(Error::InvalidData(format!(
                        "dialogue {} turn {ti}: {} candidates, need {n}",
                        d.id,
                        kept.len()
                    )));
                }
                shuffle_candidates(kept, &truth, s)
            };
            out.push(Sample {
                context: history.clone(),
                knowledge: d.knowledge.clone(),
                candidates,
                label,
            });
            history.push(truth);
        }
    }
    Ok(out)
}

/// One sample per CMUDoG turn after the first. The context is every earlier
/// utterance; knowledge is the document section tagged on the response
/// turn, split into sentences; negatives come from all utterances of the
/// same split.
pub fn cmudog_samples(dialogues: &[Dialogue], n: usize, seed: u64) -> Result<Vec<Sample>> {
    let pool = NegativePool::new(dialogues.iter().flat_map(|d| d.turns.iter().map(|t| t.text.clone())));
    let mut out = Vec::new();
    for (di, d) in dialogues.iter().enumerate() {
        for ti in 1..d.turns.len() {
            let turn = &d.turns[ti];
            let section = turn.section.unwrap_or(0);
            let knowledge = d
                .knowledge
                .get(section)
                .map(|s| split_sentences(s))
                .unwrap_or_default();
            let (candidates, label) = pool.sample(&turn.text, n, mix_seed(seed, di as u64, ti as u64))?;
            out.push(Sample {
                context: d.turns[..ti].iter().map(|t| t.text.clone()).collect(),
                knowledge,
                candidates,
                label,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_cmudog, parse_persona_chat};

    #[test]
    fn persona_history_grows() {
        let cands = |t: &str| {
            let mut c: Vec<String> = (0..4).map(|i| format!("n{i}")).collect();
            c.push(t.into());
            c.join("|")
        };
        let text = format!(
            "1 your persona: p1.\n2 q0\tr0\t\t{}\n3 q1\tr1\t\t{}\n",
            cands("r0"),
            cands("r1")
        );
        let ds = parse_persona_chat(text.as_bytes()).unwrap();
        let s = persona_samples(&ds, 5, 1).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].context, vec!["q0", "r0", "q1"]);
        assert_eq!(s[1].candidates[s[1].label], "r1");
        assert_eq!(s[0].knowledge, vec!["p1."]);
    }

    #[test]
    fn cmudog_one_sample_per_later_turn() {
        let turns: Vec<String> = (0..5)
            .map(|t| format!(r#"{{"speaker":"u","text":"utterance {t}","section":{}}}"#, t / 3))
            .collect();
        let line = format!(
            r#"{{"document":["A first. A second.","B only"],"turns":[{}]}}"#,
            turns.join(",")
        );
        let ds = parse_cmudog(line.as_bytes()).unwrap();
        let s = cmudog_samples(&ds, 4, 0).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s[0].knowledge, vec!["A first.", "A second."]);
        assert_eq!(s[3].knowledge, vec!["B only"]);
        assert_eq!(s[3].context.len(), 4);
        assert_eq!(s[3].candidates[s[3].label], "utterance 4");
    }
}
