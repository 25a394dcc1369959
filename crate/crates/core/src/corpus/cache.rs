//! Line-delimited integer cache of encoded samples.
//!
//! ```text
//! DCKCACHE 1
//! limits <n_c> <n_k> <l> <n>
//! vocab <sha256 hex>
//! samples <count>
//! label <y>
//! c <l ids>        × n_c
//! k <l ids>        × n_k
//! r <l ids>        × n
//! ...
//! ```

use std::io::{BufRead, Write};

use super::encode::{EncodedSample, Limits, TokenGrid};
use crate::error::{Error, Result};

pub const CACHE_VERSION: u32 = 1;

pub fn write_cache<W: Write>(mut w: W, limits: &Limits, vocab_hash: &str, samples: &[EncodedSample]) -> Result<()> {
    writeln!(w, "DCKCACHE {CACHE_VERSION}")?;
    writeln!(
        w,
        "limits {} {} {} {}",
        limits.max_utterances, limits.max_knowledge, limits.max_tokens, limits.candidates
    )?;
    writeln!(w, "vocab {vocab_hash}")?;
    writeln!(w, "samples {}", samples.len())?;
    for s in samples {
        writeln!(w, "label {}", s.label)?;
        for (tag, grid) in [("c", &s.context), ("k", &s.knowledge), ("r", &s.candidates)] {
            for r in 0..grid.rows {
                write!(w, "{tag}")?;
                for id in grid.row(r) {
                    write!(w, " {id}")?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    n: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.n += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of cache")),
        }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::MalformedLine {
            line: self.n,
            reason: reason.into(),
        }
    }

    fn tagged(&mut self, tag: &str) -> Result<Vec<String>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(self.err(format!("expected `{tag}`")));
        }
        Ok(parts.map(str::to_string).collect())
    }

    fn numbers<T: std::str::FromStr>(&mut self, tag: &str) -> Result<Vec<T>> {
        let parts = self.tagged(tag)?;
        parts
            .iter()
            .map(|p| p.parse().map_err(|_| self.err(format!("bad number `{p}`"))))
            .collect()
    }
}

/// Read a cache, refusing it when `expected_vocab_hash` is given and differs
/// from the embedded hash.
pub fn read_cache<R: BufRead>(r: R, expected_vocab_hash: Option<&str>) -> Result<(Limits, Vec<EncodedSample>)> {
    let mut lines = Lines { inner: r.lines(), n: 0 };
    let version: Vec<u32> = lines.numbers("DCKCACHE")?;
    if version != [CACHE_VERSION] {
        return Err(Error::InvalidData(format!("unsupported cache version {version:?}")));
    }
    let l: Vec<usize> = lines.numbers("limits")?;
    if l.len() != 4 {
        return Err(lines.err("limits needs four values"));
    }
    let limits = Limits {
        max_utterances: l[0],
        max_knowledge: l[1],
        max_tokens: l[2],
        candidates: l[3],
    };
    limits.validate()?;
    let hash = lines.tagged("vocab")?.join("");
    if let Some(expected) = expected_vocab_hash {
        if expected != hash {
            return Err(Error::HashMismatch {
                expected: expected.to_string(),
                found: hash,
            });
        }
    }
    let count: Vec<usize> = lines.numbers("samples")?;
    let count = *count.first().ok_or_else(|| lines.err("missing sample count"))?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let label: Vec<usize> = lines.numbers("label")?;
        let label = *label.first().ok_or_else(|| lines.err("missing label"))?;
        let mut grids = Vec::with_capacity(3);
        for (tag, rows) in [("c", limits.max_utterances), ("k", limits.max_knowledge), ("r", limits.candidates)] {
            let mut grid = TokenGrid::empty(rows, limits.max_tokens);
            for row in 0..rows {
                let ids: Vec<u32> = lines.numbers(tag)?;
                if ids.len() != limits.max_tokens {
                    return Err(lines.err(format!("row has {} ids, expected {}", ids.len(), limits.max_tokens)));
                }
                grid.ids[row * limits.max_tokens..(row + 1) * limits.max_tokens].copy_from_slice(&ids);
            }
            grids.push(grid);
        }
        let candidates = grids.pop().expect("three grids");
        let knowledge = grids.pop().expect("three grids");
        let context = grids.pop().expect("three grids");
        if label >= limits.candidates {
            return Err(Error::LabelOutOfRange { label, n: limits.candidates });
        }
        samples.push(EncodedSample {
            context,
            knowledge,
            candidates,
            label,
        });
    }
    Ok((limits, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Limits, Vec<EncodedSample>) {
        let limits = Limits { max_utterances: 2, max_knowledge: 1, max_tokens: 3, candidates: 2 };
        let grid = |rows: usize, seed: u32| TokenGrid {
            rows,
            len: 3,
            ids: (0..rows as u32 * 3).map(|i| (i * 7 + seed) % 5).collect(),
        };
        let s = EncodedSample {
            context: grid(2, 1),
            knowledge: grid(1, 2),
            candidates: grid(2, 3),
            label: 1,
        };
        (limits, vec![s.clone(), s])
    }

    #[test]
    fn round_trip() {
        let (limits, samples) = fixture();
        let mut buf = Vec::new();
        write_cache(&mut buf, &limits, "abc", &samples).unwrap();
        let (l2, s2) = read_cache(buf.as_slice(), Some("abc")).unwrap();
        assert_eq!(l2, limits);
        assert_eq!(s2, samples);
    }

    #[test]
    fn refuses_mismatched_hash() {
        let (limits, samples) = fixture();
        let mut buf = Vec::new();
        write_cache(&mut buf, &limits, "abc", &samples).unwrap();
        assert!(matches!(
            read_cache(buf.as_slice(), Some("def")),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn rejects_truncated_file() {
        let (limits, samples) = fixture();
        let mut buf = Vec::new();
        write_cache(&mut buf, &limits, "abc", &samples).unwrap();
        buf.truncate(buf.len() - 10);
        assert!(read_cache(buf.as_slice(), None).is_err());
    }
}
