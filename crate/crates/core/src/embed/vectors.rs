//! Textual word-vector files: `token v1 v2 ... vd` per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// What happened while filling a table from a vector file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Vocabulary rows filled from the file.
    pub filled: usize,
    /// Lines skipped because they did not carry exactly `dim` numbers.
    pub malformed: usize,
}

/// Fill a `vocab × dim` table from a vector stream. Tokens missing from the
/// file keep a zero row, and so does PAD.
pub fn load_word_vectors<R: BufRead>(input: R, vocab: &Vocabulary, dim: usize) -> Result<(Tensor, LoadStats)> {
    let mut table = Tensor::zeros(&[vocab.len(), dim]);
    let mut stats = LoadStats::default();
    for line in input.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = match values {
            Ok(v) if v.len() == dim => v,
            _ => {
                stats.malformed += 1;
                continue;
            }
        };
        if let Some(id) = vocab.get(token) {
            if id == PAD {
                continue;
            }
            table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
            stats.filled += 1;
        }
    }
    Ok((table, stats))
}

pub fn load_word_vectors_file(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<(Tensor, LoadStats)> {
    let f = File::open(path).map_err(|source| Error::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    load_word_vectors(BufReader::new(f), vocab, dim)
}

/// Write every non-reserved row in the same textual format.
pub fn write_word_vectors<W: Write>(mut w: W, vocab: &Vocabulary, table: &Tensor) -> Result<()> {
    for id in 2..vocab.len() {
        write!(w, "{}", vocab.token(id).expect("id in range"))?;
        for v in table.row(id) {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
