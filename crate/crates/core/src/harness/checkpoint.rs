//! Binary checkpoints.
//!
//! ```text
//! b"DCKCKPT1"
//! u64 LE   header length
//! JSON     header: config text + hash, vocabulary + hash, tensor list
//! f64 LE   parameter values in header order, then the frozen tables
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Model;
use crate::corpus::Vocabulary;
use crate::embed::Embeddings;
use crate::error::{Error, Result};
use crate::numerics::{ParameterStore, Tensor};

pub const MAGIC: &[u8; 8] = b"DCKCKPT1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Header {
    pub config: String,
    pub config_hash: String,
    pub vocab: String,
    pub vocab_hash: String,
    pub tensors: Vec<TensorEntry>,
    pub tables: Vec<TensorEntry>,
}

fn entry(name: &str, t: &Tensor, trainable: bool) -> TensorEntry {
    TensorEntry {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        trainable,
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<()> {
    let mut vocab = Vec::new();
    model.vocab.write(&mut vocab)?;
    let header = Header {
        config: model.config.to_text(),
        config_hash: model.config.hash(),
        vocab: String::from_utf8(vocab).map_err(|e| Error::InvalidData(e.to_string()))?,
        vocab_hash: model.vocab.hash(),
        tensors: model
            .store
            .iter()
            .map(|(n, t)| entry(n, t, model.store.is_trainable(n)))
            .collect(),
        tables: vec![
            entry("pretrained", &model.embeddings.pretrained, false),
            entry("corpus", &model.embeddings.corpus, false),
        ],
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let tensors = model
        .store
        .iter()
        .map(|(_, t)| t)
        .chain([&model.embeddings.pretrained, &model.embeddings.corpus]);
    for t in tensors {
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R, e: &TensorEntry) -> Result<Tensor> {
    let n: usize = e.shape.iter().product();
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::InvalidData(format!("checkpoint truncated in `{}`", e.name)))?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(e.shape.clone(), data)
}

pub fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::InvalidData("not a checkpoint (too short)".into()))?;
    if &magic != MAGIC {
        return Err(Error::InvalidData("not a checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|_| Error::InvalidData("checkpoint header truncated".into()))?;
    Ok(serde_json::from_slice(&json)?)
}

/// Read a checkpoint, verifying the config and vocabulary hashes.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let header = read_header(&mut r)?;
    let config = ModelConfig::parse(&header.config)?;
    let found = config.hash();
    if found != header.config_hash {
        return Err(Error::HashMismatch {
            expected: header.config_hash,
            found,
        });
    }
    let vocab = Vocabulary::read(header.vocab.as_bytes())?;
    let found = vocab.hash();
    if found != header.vocab_hash {
        return Err(Error::HashMismatch {
            expected: header.vocab_hash,
            found,
        });
    }
    let mut items = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        items.push((e.name.clone(), read_tensor(&mut r, e)?));
    }
    let mut store = ParameterStore::from_snapshot(items)?;
    for e in &header.tensors {
        store.set_trainable(&e.name, e.trainable)?;
    }
    let [pre, corp] = match header.tables.as_slice() {
        [a, b] => [read_tensor(&mut r, a)?, read_tensor(&mut r, b)?],
        _ => return Err(Error::InvalidData("checkpoint must hold two frozen tables".into())),
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::InvalidData(format!("{} trailing bytes in checkpoint", rest.len())));
    }
    let embeddings = Embeddings::new(&vocab, config.embed_config(), pre, corp)?;
    Model::from_parts(config, vocab, embeddings, store)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let f = std::fs::File::open(path).map_err(|source| Error::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(std::io::BufReader::new(f))
}
