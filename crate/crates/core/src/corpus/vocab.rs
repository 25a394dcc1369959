use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id mapping. Ids 0 and 1 are reserved for padding and unknown
/// tokens; the rest are ordered by descending frequency, ties broken
/// lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_sorted(entries: Vec<(String, u64)>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut freqs = vec![0, 0];
        for (t, f) in entries {
            tokens.push(t);
            freqs.push(f);
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, freqs, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// `token<TAB>freq` per line, reserved entries included.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (t, f) in self.tokens.iter().zip(&self.freqs) {
            writeln!(w, "{t}\t{f}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let (t, f) = line.rsplit_once('\t').ok_or_else(|| Error::MalformedLine {
                line: i + 1,
                reason: "expected token<TAB>freq".into(),
            })?;
            let f: u64 = f.parse().map_err(|_| Error::MalformedLine {
                line: i + 1,
                reason: format!("bad frequency `{f}`"),
            })?;
            if i < 2 {
                let expect = if i == 0 { PAD_TOKEN } else { UNK_TOKEN };
                if t != expect {
                    return Err(Error::MalformedLine {
                        line: i + 1,
                        reason: format!("reserved entry must be {expect}"),
                    });
                }
                continue;
            }
            entries.push((t.to_string(), f));
        }
        Ok(Self::from_sorted(entries))
    }
}

/// Count tokens over `corpus` (training split only) and keep those seen at
/// least `min_freq` times.
pub fn build_vocabulary<I, S>(corpus: I, min_freq: u64) -> Vocabulary
where
    I: IntoIterator<Item = S>,
    S: AsRef<[String]>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for seq in corpus {
        for t in seq.as_ref() {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(t, f)| *f >= min_freq && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_sorted(entries)
}
