//! Glue between a preprocessed data directory, training and run outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint;
use super::config::ModelConfig;
use super::data::DataDir;
use super::metrics::MetricsReport;
use super::model::Model;
use super::train::{evaluate_report, train, EpochRecord, History, TrainOptions};
use crate::error::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.dck";
pub const HISTORY_FILE: &str = "history.json";
pub const VALID_METRICS_FILE: &str = "valid_metrics.json";
pub const CONFIG_FILE: &str = "config.conf";

pub struct TrainedRun {
    pub model: Model,
    pub history: History,
    pub valid: MetricsReport,
}

/// Train on `train` and validate on `valid` of `dir` as `cfg` says.
pub fn train_from_dir(
    cfg: &ModelConfig,
    dir: &DataDir,
    opts: TrainOptions,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedRun> {
    let emb = dir.embeddings(cfg)?;
    let train_set = dir.samples("train", cfg.max_train_samples)?;
    let valid_set = dir.samples("valid", cfg.max_valid_samples)?;
    let mut model = Model::new(cfg.clone(), dir.vocab.clone(), emb)?;
    let history = train(&mut model, &train_set, &valid_set, opts, on_epoch)?;
    let valid = evaluate_report(&model, "valid", &valid_set, false)?;
    Ok(TrainedRun { model, history, valid })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Write checkpoint, history, validation metrics and the config into `out`.
pub fn write_run(out: &Path, run: &TrainedRun) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&run.model, &ckpt)?;
    write_json(&out.join(HISTORY_FILE), &run.history)?;
    write_json(&out.join(VALID_METRICS_FILE), &run.valid)?;
    fs::write(out.join(CONFIG_FILE), run.model.config.to_text())?;
    Ok(ckpt)
}

/// The data directory a checkpointed model was trained on, or `over`.
/// Fails with `HashMismatch` when its vocabulary differs from the model's.
pub fn data_for_model(model: &Model, over: Option<&Path>) -> Result<DataDir> {
    let dir = match over {
        Some(p) => DataDir::open(p)?,
        None => DataDir::for_config(&model.config)?,
    };
    if dir.meta.vocab_hash != model.vocab.hash() {
        return Err(Error::HashMismatch {
            expected: model.vocab.hash(),
            found: dir.meta.vocab_hash.clone(),
        });
    }
    dir.check(&model.config)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{preprocess, PreprocessOptions};
    use crate::harness::synthetic::write_persona_files;

    #[test]
    fn train_save_load_evaluate() {
        let tmp = tempfile::tempdir().unwrap();
        write_persona_files(&tmp.path().join("raw"), 2, 1).unwrap();
        let mut cfg = ModelConfig::tiny();
        cfg.pretrained_dim = 0;
        cfg.max_epochs = 1;
        cfg.skipgram_epochs = 1;
        cfg.data_dir = tmp.path().join("data").display().to_string();
        let opts = PreprocessOptions {
            config: cfg.clone(),
            vectors: None,
            max_dialogues: None,
        };
        preprocess(&tmp.path().join("raw"), Path::new(&cfg.data_dir), &opts).unwrap();
        let dir = DataDir::for_config(&cfg).unwrap();
        let run = train_from_dir(&cfg, &dir, TrainOptions::default(), |_| {}).unwrap();
        assert_eq!(run.history.epochs.len(), 1);
        let ckpt = write_run(&tmp.path().join("run"), &run).unwrap();
        let back = checkpoint::load(&ckpt).unwrap();
        let dir = data_for_model(&back, None).unwrap();
        let test = dir.samples("test", 0).unwrap();
        let a = evaluate_report(&run.model, "test", &test, true).unwrap();
        let b = evaluate_report(&back, "test", &test, true).unwrap();
        assert_eq!((a.r_at_1, a.mean_loss, a.buckets.clone()), (b.r_at_1, b.mean_loss, b.buckets));
        assert_eq!(a.buckets.unwrap().iter().map(|r| r.samples).sum::<usize>(), test.len());

        // a different vocabulary is refused
        let other = tmp.path().join("other");
        write_persona_files(&tmp.path().join("raw2"), 2, 99).unwrap();
        preprocess(&tmp.path().join("raw2"), &other, &opts).unwrap();
        assert!(matches!(data_for_model(&back, Some(&other)), Err(Error::HashMismatch { .. })));
    }
}
