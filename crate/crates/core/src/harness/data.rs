//! Raw dataset ingestion and the preprocessed data directory.
//!
//! Raw inputs:
//!
//! * Persona-Chat: `{train,valid,test}_self_{original,revised}.txt`
//! * CMUDoG: `{train,valid,test}.jsonl`
//!
//! A preprocessed directory holds `vocab.tsv`, `corpus_vectors.txt`,
//! optionally `pretrained_vectors.txt`, and per split a `<split>.cache`
//! (encoded ids) and `<split>.jsonl` (raw samples), plus `meta.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Dataset, ModelConfig};
use crate::corpus::{
    build_vocabulary, cmudog_samples, corpus_stats, encode_sample, parse_cmudog, parse_persona_chat, persona_samples,
    read_cache, tokenize, write_cache, CorpusStats, Dialogue, EncodedSample, Limits, Sample, Vocabulary,
};
use crate::embed::{load_word_vectors_file, train_skipgram, write_word_vectors, Embeddings};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];
pub const DATA_ENV: &str = "DCK_DATA_DIR";

/// `$DCK_DATA_DIR`, or `data` when unset.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

/// Default raw input directory of a dataset under the data root.
pub fn raw_dir(dataset: Dataset) -> PathBuf {
    data_root().join(if dataset.is_persona() { "persona" } else { "cmudog" })
}

/// Default preprocessed directory of a dataset under the data root.
pub fn processed_dir(dataset: Dataset) -> PathBuf {
    data_root().join("processed").join(dataset.name())
}

pub fn raw_split_path(dataset: Dataset, dir: &Path, split: &str) -> PathBuf {
    match dataset {
        Dataset::PersonaOriginal => dir.join(format!("{split}_self_original.txt")),
        Dataset::PersonaRevised => dir.join(format!("{split}_self_revised.txt")),
        Dataset::Cmudog => dir.join(format!("{split}.jsonl")),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_split(dataset: Dataset, dir: &Path, split: &str) -> Result<Vec<Dialogue>> {
    let r = open(&raw_split_path(dataset, dir, split))?;
    if dataset.is_persona() {
        parse_persona_chat(r)
    } else {
        parse_cmudog(r)
    }
}

pub fn make_samples(dataset: Dataset, dialogues: &[Dialogue], candidates: usize, seed: u64) -> Result<Vec<Sample>> {
    if dataset.is_persona() {
        persona_samples(dialogues, candidates, seed)
    } else {
        cmudog_samples(dialogues, candidates, seed)
    }
}

/// Token sequences of a split, each text once: knowledge, utterances and
/// responses.
pub fn split_texts(dialogues: &[Dialogue]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for d in dialogues {
        out.extend(d.knowledge.iter().map(|k| tokenize(k)));
        for t in &d.turns {
            out.push(tokenize(&t.text));
            if let Some(r) = &t.response {
                out.push(tokenize(r));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub split: String,
    pub conversations: usize,
    pub turns: usize,
    pub samples: usize,
    /// Samples dropped for an empty context or knowledge collection.
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub dataset: Dataset,
    pub limits: Limits,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub pretrained_dim: usize,
    pub pretrained_filled: usize,
    pub corpus_dim: usize,
    pub seed: u64,
    pub splits: Vec<SplitMeta>,
}

/// Everything `preprocess` needs besides the input and output directories.
#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub config: ModelConfig,
    /// Pretrained `token v1 … vd` file; without it the pretrained part is
    /// absent (`pretrained_dim = 0`).
    pub vectors: Option<PathBuf>,
    /// Keep only the first `n` dialogues of each split.
    pub max_dialogues: Option<usize>,
}

/// Parse, build the vocabulary on train, train corpus vectors, encode and
/// write every split.
pub fn preprocess(input: &Path, output: &Path, opts: &PreprocessOptions) -> Result<DataMeta> {
    let cfg = &opts.config;
    let dataset = cfg.dataset;
    let mut dialogues = Vec::new();
    for split in SPLITS {
        let mut d = parse_split(dataset, input, split)?;
        if let Some(n) = opts.max_dialogues {
            d.truncate(n);
        }
        dialogues.push(d);
    }
    let vocab = build_vocabulary(split_texts(&dialogues[0]), cfg.min_freq);
    fs::create_dir_all(output)?;
    vocab.write(BufWriter::new(File::create(output.join("vocab.tsv"))?))?;

    let ids: Vec<Vec<usize>> = split_texts(&dialogues[0])
        .iter()
        .map(|s| s.iter().map(|t| vocab.id(t)).collect())
        .collect();
    let corpus = train_skipgram(&ids, vocab.len(), &cfg.skipgram());
    write_word_vectors(BufWriter::new(File::create(output.join("corpus_vectors.txt"))?), &vocab, &corpus)?;

    let (pretrained_dim, pretrained_filled) = match &opts.vectors {
        Some(path) => {
            let (table, stats) = load_word_vectors_file(path, &vocab, cfg.pretrained_dim)?;
            if stats.filled == 0 {
                return Err(Error::InvalidData(format!(
                    "no {}-dimensional vector in {} matched the vocabulary",
                    cfg.pretrained_dim,
                    path.display()
                )));
            }
            write_word_vectors(
                BufWriter::new(File::create(output.join("pretrained_vectors.txt"))?),
                &vocab,
                &table,
            )?;
            (cfg.pretrained_dim, stats.filled)
        }
        None => (0, 0),
    };

    let mut splits = Vec::new();
    for (split, d) in SPLITS.iter().zip(&dialogues) {
        let CorpusStats { conversations, turns } = corpus_stats(d);
        let raw = make_samples(dataset, d, cfg.limits.candidates, cfg.seed)?;
        let total = raw.len();
        let mut kept_raw = Vec::new();
        let mut kept = Vec::new();
        for s in raw {
            let e = encode_sample(&s, &vocab, &cfg.limits)?;
            if e.context.real_rows() == 0 || e.knowledge.real_rows() == 0 {
                continue;
            }
            kept.push(e);
            kept_raw.push(s);
        }
        let dropped = total - kept.len();
        write_cache(
            BufWriter::new(File::create(output.join(format!("{split}.cache")))?),
            &cfg.limits,
            &vocab.hash(),
            &kept,
        )?;
        let mut w = BufWriter::new(File::create(output.join(format!("{split}.jsonl")))?);
        for s in &kept_raw {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)?;
        }
        w.flush()?;
        splits.push(SplitMeta {
            split: split.to_string(),
            conversations,
            turns,
            samples: kept.len(),
            dropped,
        });
    }
    let meta = DataMeta {
        dataset,
        limits: cfg.limits,
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
        pretrained_dim,
        pretrained_filled,
        corpus_dim: cfg.corpus_dim,
        seed: cfg.seed,
        splits,
    };
    fs::write(output.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

/// A preprocessed directory.
pub struct DataDir {
    pub path: PathBuf,
    pub meta: DataMeta,
    pub vocab: Vocabulary,
}

impl DataDir {
    pub fn open(path: &Path) -> Result<Self> {
        let meta_path = path.join("meta.json");
        let meta: DataMeta = serde_json::from_reader(open(&meta_path)?)?;
        let vocab = Vocabulary::read(open(&path.join("vocab.tsv"))?)?;
        if vocab.hash() != meta.vocab_hash {
            return Err(Error::HashMismatch {
                expected: meta.vocab_hash,
                found: vocab.hash(),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            meta,
            vocab,
        })
    }

    /// The directory named by the config, or the default under the data root.
    pub fn for_config(cfg: &ModelConfig) -> Result<Self> {
        let path = if cfg.data_dir.is_empty() {
            processed_dir(cfg.dataset)
        } else {
            PathBuf::from(&cfg.data_dir)
        };
        Self::open(&path)
    }

    /// Check that `cfg` can run on this directory.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if cfg.dataset != self.meta.dataset {
            return Err(Error::Config(format!(
                "config dataset {} but data was preprocessed for {}",
                cfg.dataset, self.meta.dataset
            )));
        }
        if cfg.limits != self.meta.limits {
            return Err(Error::Config(format!(
                "config limits {:?} differ from preprocessed limits {:?}",
                cfg.limits, self.meta.limits
            )));
        }
        if cfg.pretrained_dim != self.meta.pretrained_dim {
            return Err(Error::Config(format!(
                "pretrained_dim = {} but the data directory has {} (preprocess with --vectors, or set pretrained_dim = {})",
                cfg.pretrained_dim, self.meta.pretrained_dim, self.meta.pretrained_dim
            )));
        }
        if cfg.corpus_dim != self.meta.corpus_dim {
            return Err(Error::Config(format!(
                "corpus_dim = {} but the data directory has {}",
                cfg.corpus_dim, self.meta.corpus_dim
            )));
        }
        Ok(())
    }

    pub fn embeddings(&self, cfg: &ModelConfig) -> Result<Embeddings> {
        self.check(cfg)?;
        let table = |name: &str, dim: usize| -> Result<Tensor> {
            if dim == 0 {
                return Ok(Tensor::zeros(&[self.vocab.len(), 0]));
            }
            Ok(load_word_vectors_file(&self.path.join(name), &self.vocab, dim)?.0)
        };
        let pre = table("pretrained_vectors.txt", cfg.pretrained_dim)?;
        let corp = table("corpus_vectors.txt", cfg.corpus_dim)?;
        Embeddings::new(&self.vocab, cfg.embed_config(), pre, corp)
    }

    /// Encoded samples of `split`, at most `limit` when non-zero.
    pub fn samples(&self, split: &str, limit: usize) -> Result<Vec<EncodedSample>> {
        let (limits, mut s) = read_cache(open(&self.path.join(format!("{split}.cache")))?, Some(&self.meta.vocab_hash))?;
        if limits != self.meta.limits {
            return Err(Error::InvalidData(format!("{split}.cache limits differ from meta.json")));
        }
        if limit > 0 {
            s.truncate(limit);
        }
        Ok(s)
    }

    pub fn raw_samples(&self, split: &str) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for (i, line) in open(&self.path.join(format!("{split}.jsonl")))?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                record: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::write_persona_files;

    fn opts(vectors: Option<PathBuf>) -> PreprocessOptions {
        let mut config = ModelConfig::tiny();
        config.skipgram_epochs = 1;
        PreprocessOptions {
            config,
            vectors,
            max_dialogues: None,
        }
    }

    #[test]
    fn preprocess_then_reload() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        write_persona_files(&raw, 3, 4).unwrap();
        let vec_path = tmp.path().join("vectors.txt");
        std::fs::write(&vec_path, "w1 0.1 0.2 0.3 0.4\nw2 1 2 3 4\nnot-a-word 9 9 9 9\n").unwrap();
        let out = tmp.path().join("out");
        let o = opts(Some(vec_path));
        let meta = preprocess(&raw, &out, &o).unwrap();
        assert_eq!(meta.splits.len(), 3);
        for s in &meta.splits {
            assert_eq!((s.conversations, s.turns, s.samples, s.dropped), (3, 15, 15, 0));
        }
        assert_eq!(meta.pretrained_dim, 4);
        assert_eq!(meta.pretrained_filled, 2);

        let dir = DataDir::open(&out).unwrap();
        assert_eq!(dir.meta, meta);
        let emb = dir.embeddings(&o.config).unwrap();
        assert_eq!(emb.vocab_size(), dir.vocab.len());
        let enc = dir.samples("valid", 0).unwrap();
        let raw_s = dir.raw_samples("valid").unwrap();
        assert_eq!(enc.len(), 15);
        for (e, r) in enc.iter().zip(&raw_s) {
            assert_eq!(&encode_sample(r, &dir.vocab, &o.config.limits).unwrap(), e);
            assert_eq!(r.candidates.len(), 3);
        }
        assert_eq!(dir.samples("train", 4).unwrap().len(), 4);

        let mut wrong = o.config.clone();
        wrong.pretrained_dim = 0;
        assert!(matches!(dir.check(&wrong), Err(Error::Config(_))));
        wrong = o.config.clone();
        wrong.limits.candidates = 4;
        assert!(matches!(dir.check(&wrong), Err(Error::Config(_))));
    }

    #[test]
    fn preprocess_is_deterministic_without_vectors() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        write_persona_files(&raw, 2, 7).unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        let m = preprocess(&raw, &a, &opts(None)).unwrap();
        preprocess(&raw, &b, &opts(None)).unwrap();
        assert_eq!(m.pretrained_dim, 0);
        assert!(!a.join("pretrained_vectors.txt").exists());
        for f in ["vocab.tsv", "corpus_vectors.txt", "train.cache", "test.jsonl", "meta.json"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn missing_input_names_the_file() {
        let tmp = tempfile::tempdir().unwrap();
        let err = preprocess(tmp.path(), &tmp.path().join("o"), &opts(None)).unwrap_err();
        assert!(matches!(err, Error::FileUnreadable { ref path, .. } if path.ends_with("train_self_original.txt")));
    }
}
