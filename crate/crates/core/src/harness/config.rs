//! Line-oriented `key = value` model configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional in the
//! file (defaults come from the dataset); unknown keys and duplicates are
//! errors. [`ModelConfig::to_text`] writes every key in a fixed order, and
//! the config hash is the SHA-256 of that text.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Limits;
use crate::embed::{CharConvConfig, EmbedConfig, SkipGramConfig};
use crate::error::{Error, Result};
use crate::numerics::AdamHyper;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dataset {
    PersonaOriginal,
    PersonaRevised,
    Cmudog,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::PersonaOriginal => "persona_original",
            Dataset::PersonaRevised => "persona_revised",
            Dataset::Cmudog => "cmudog",
        }
    }

    pub fn is_persona(self) -> bool {
        !matches!(self, Dataset::Cmudog)
    }

    pub fn limits(self) -> Limits {
        if self.is_persona() {
            Limits::PERSONA
        } else {
            Limits::CMUDOG
        }
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persona_original" => Ok(Dataset::PersonaOriginal),
            "persona_revised" => Ok(Dataset::PersonaRevised),
            "cmudog" => Ok(Dataset::Cmudog),
            _ => Err(Error::Config(format!(
                "unknown dataset `{s}` (persona_original, persona_revised, cmudog)"
            ))),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadActivation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregatorSharing {
    /// One sentence-level BiLSTM for all four feature sequences.
    Shared,
    /// One for the context side (and its response view), one for knowledge.
    PerSide,
}

/// Structural switches of the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub disable_context_selector: bool,
    pub disable_knowledge_selector: bool,
    /// Mean pooling over knowledge entries instead of post-selection.
    pub disable_post_selection: bool,
    pub drop_context: bool,
    pub drop_knowledge: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 5] = [
        "disable_context_selector",
        "disable_knowledge_selector",
        "disable_post_selection",
        "drop_context",
        "drop_knowledge",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.drop_context && self.drop_knowledge {
            return Err(Error::Config("drop_context and drop_knowledge cannot both be set".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, name: &str, value: bool) -> Result<()> {
        let slot = match name {
            "disable_context_selector" => &mut self.disable_context_selector,
            "disable_knowledge_selector" => &mut self.disable_knowledge_selector,
            "disable_post_selection" => &mut self.disable_post_selection,
            "drop_context" => &mut self.drop_context,
            "drop_knowledge" => &mut self.drop_knowledge,
            _ => return Err(Error::Config(format!("unknown ablation flag `{name}`"))),
        };
        *slot = value;
        Ok(())
    }

    /// Parse a comma-separated flag list, e.g. `drop_knowledge,disable_post_selection`.
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut f = Self::default();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            f.set(name, true)?;
        }
        f.validate()?;
        Ok(f)
    }

    /// Names of the flags that are set.
    pub fn active(&self) -> Vec<&'static str> {
        let vals = [
            self.disable_context_selector,
            self.disable_knowledge_selector,
            self.disable_post_selection,
            self.drop_context,
            self.drop_knowledge,
        ];
        Self::NAMES.iter().zip(vals).filter(|(_, v)| *v).map(|(n, _)| *n).collect()
    }

    /// The context selector runs (it needs the context).
    pub fn context_selector(&self) -> bool {
        !self.drop_context && !self.disable_context_selector
    }

    /// The knowledge selector runs. Its hop queries come from the context,
    /// so dropping the context disables it too.
    pub fn knowledge_selector(&self) -> bool {
        !self.drop_context && !self.drop_knowledge && !self.disable_knowledge_selector
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dataset: Dataset,
    pub pretrained_dim: usize,
    pub corpus_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_windows: Vec<usize>,
    pub max_word_chars: usize,
    pub char_trainable: bool,
    /// Hidden size of every BiLSTM; encoder states are `2·hidden` wide.
    pub hidden: usize,
    pub heads: usize,
    pub hops: usize,
    pub mlp_hidden: usize,
    pub head_activation: HeadActivation,
    pub selector_renormalize: bool,
    pub aggregator_sharing: AggregatorSharing,
    pub limits: Limits,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub init_bound: f64,
    pub seed: u64,
    pub min_freq: u64,
    pub skipgram_window: usize,
    pub skipgram_negatives: usize,
    pub skipgram_epochs: usize,
    pub skipgram_learning_rate: f64,
    /// Cap on training / validation samples; 0 keeps all.
    pub max_train_samples: usize,
    pub max_valid_samples: usize,
    pub ablation: AblationFlags,
    /// Preprocessed data directory; empty means `$DCK_DATA_DIR/<dataset>`.
    pub data_dir: String,
    pub output_dir: String,
}

impl ModelConfig {
    pub fn for_dataset(dataset: Dataset) -> Self {
        let persona = dataset.is_persona();
        Self {
            dataset,
            pretrained_dim: 300,
            corpus_dim: 100,
            char_dim: 16,
            char_filters: 50,
            char_windows: vec![3, 4, 5],
            max_word_chars: 30,
            char_trainable: true,
            hidden: 300,
            heads: 3,
            hops: 3,
            mlp_hidden: 256,
            head_activation: HeadActivation::Relu,
            selector_renormalize: false,
            aggregator_sharing: AggregatorSharing::Shared,
            limits: dataset.limits(),
            learning_rate: if persona { 0.00025 } else { 0.0001 },
            batch_size: if persona { 12 } else { 6 },
            max_epochs: 20,
            patience: 3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            init_bound: 0.08,
            seed: 1,
            min_freq: 1,
            skipgram_window: 5,
            skipgram_negatives: 5,
            skipgram_epochs: 5,
            skipgram_learning_rate: 0.025,
            max_train_samples: 0,
            max_valid_samples: 0,
            ablation: AblationFlags::default(),
            data_dir: String::new(),
            output_dir: "runs".into(),
        }
    }

    /// The small configuration used by the oracle suites: embeddings of
    /// width 12 (4 + 2 + 3 windows × 2 filters), hidden 4.
    pub fn tiny() -> Self {
        Self {
            pretrained_dim: 4,
            corpus_dim: 2,
            char_dim: 3,
            char_filters: 2,
            char_windows: vec![3, 4, 5],
            max_word_chars: 8,
            hidden: 4,
            heads: 2,
            hops: 2,
            mlp_hidden: 8,
            limits: Limits {
                max_utterances: 2,
                max_knowledge: 2,
                max_tokens: 4,
                candidates: 3,
            },
            learning_rate: 0.01,
            batch_size: 4,
            init_bound: 0.3,
            ..Self::for_dataset(Dataset::PersonaOriginal)
        }
    }

    pub fn embed_config(&self) -> EmbedConfig {
        EmbedConfig {
            pretrained_dim: self.pretrained_dim,
            corpus_dim: self.corpus_dim,
            chars: CharConvConfig {
                char_dim: self.char_dim,
                filters: self.char_filters,
                windows: self.char_windows.clone(),
                max_chars: self.max_word_chars,
            },
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn skipgram(&self) -> SkipGramConfig {
        SkipGramConfig {
            dim: self.corpus_dim,
            window: self.skipgram_window,
            negatives: self.skipgram_negatives,
            epochs: self.skipgram_epochs,
            learning_rate: self.skipgram_learning_rate,
            seed: self.seed,
        }
    }

    /// Width of the encoder states.
    pub fn width(&self) -> usize {
        2 * self.hidden
    }

    /// Width of one sentence / session feature.
    pub fn feature_width(&self) -> usize {
        4 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        self.embed_config().chars.validate()?;
        self.limits.validate()?;
        self.adam().validate()?;
        self.ablation.validate()?;
        let positive = [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("hops", self.hops),
            ("mlp_hidden", self.mlp_hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !self.width().is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads ({}) must divide the encoder width 2·hidden ({})",
                self.heads,
                self.width()
            )));
        }
        if self.embed_config().dim() == 0 {
            return Err(Error::Config("token embedding width is zero".into()));
        }
        if !(self.init_bound > 0.0) {
            return Err(Error::Config("init_bound must be positive".into()));
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn to_text(&self) -> String {
        let b = |v: bool| if v { "true" } else { "false" }.to_string();
        let windows = self
            .char_windows
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let a = &self.ablation;
        let pairs: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.name().into()),
            ("pretrained_dim", self.pretrained_dim.to_string()),
            ("corpus_dim", self.corpus_dim.to_string()),
            ("char_dim", self.char_dim.to_string()),
            ("char_filters", self.char_filters.to_string()),
            ("char_windows", windows),
            ("max_word_chars", self.max_word_chars.to_string()),
            ("char_trainable", b(self.char_trainable)),
            ("hidden", self.hidden.to_string()),
            ("heads", self.heads.to_string()),
            ("hops", self.hops.to_string()),
            ("mlp_hidden", self.mlp_hidden.to_string()),
            (
                "head_activation",
                match self.head_activation {
                    HeadActivation::Relu => "relu",
                    HeadActivation::Tanh => "tanh",
                }
                .into(),
            ),
            ("selector_renormalize", b(self.selector_renormalize)),
            (
                "aggregator_sharing",
                match self.aggregator_sharing {
                    AggregatorSharing::Shared => "shared",
                    AggregatorSharing::PerSide => "per_side",
                }
                .into(),
            ),
            ("max_utterances", self.limits.max_utterances.to_string()),
            ("max_knowledge", self.limits.max_knowledge.to_string()),
            ("max_tokens", self.limits.max_tokens.to_string()),
            ("candidates", self.limits.candidates.to_string()),
            ("learning_rate", fmt_f64(self.learning_rate)),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("adam_beta1", fmt_f64(self.adam_beta1)),
            ("adam_beta2", fmt_f64(self.adam_beta2)),
            ("adam_epsilon", fmt_f64(self.adam_epsilon)),
            ("init_bound", fmt_f64(self.init_bound)),
            ("seed", self.seed.to_string()),
            ("min_freq", self.min_freq.to_string()),
            ("skipgram_window", self.skipgram_window.to_string()),
            ("skipgram_negatives", self.skipgram_negatives.to_string()),
            ("skipgram_epochs", self.skipgram_epochs.to_string()),
            ("skipgram_learning_rate", fmt_f64(self.skipgram_learning_rate)),
            ("max_train_samples", self.max_train_samples.to_string()),
            ("max_valid_samples", self.max_valid_samples.to_string()),
            ("disable_context_selector", b(a.disable_context_selector)),
            ("disable_knowledge_selector", b(a.disable_knowledge_selector)),
            ("disable_post_selection", b(a.disable_post_selection)),
            ("drop_context", b(a.drop_context)),
            ("drop_knowledge", b(a.drop_knowledge)),
            ("data_dir", self.data_dir.clone()),
            ("output_dir", self.output_dir.clone()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Parse config text. A `dataset` line (anywhere) selects the defaults
    /// the other keys override.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            entries.push((i + 1, k.to_string(), v.to_string()));
        }
        let dataset = match entries.iter().find(|(_, k, _)| k == "dataset") {
            Some((_, _, v)) => v.parse()?,
            None => Dataset::PersonaOriginal,
        };
        let mut cfg = Self::for_dataset(dataset);
        for (line, k, v) in &entries {
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {line}: {}", strip_prefix(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::FileUnreadable {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.parse()?,
            "pretrained_dim" => self.pretrained_dim = num(key, value)?,
            "corpus_dim" => self.corpus_dim = num(key, value)?,
            "char_dim" => self.char_dim = num(key, value)?,
            "char_filters" => self.char_filters = num(key, value)?,
            "char_windows" => {
                self.char_windows = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "max_word_chars" => self.max_word_chars = num(key, value)?,
            "char_trainable" => self.char_trainable = boolean(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "hops" => self.hops = num(key, value)?,
            "mlp_hidden" => self.mlp_hidden = num(key, value)?,
            "head_activation" => {
                self.head_activation = match value {
                    "relu" => HeadActivation::Relu,
                    "tanh" => HeadActivation::Tanh,
                    _ => return Err(Error::Config(format!("head_activation must be relu or tanh, got `{value}`"))),
                }
            }
            "selector_renormalize" => self.selector_renormalize = boolean(key, value)?,
            "aggregator_sharing" => {
                self.aggregator_sharing = match value {
                    "shared" => AggregatorSharing::Shared,
                    "per_side" => AggregatorSharing::PerSide,
                    _ => {
                        return Err(Error::Config(format!(
                            "aggregator_sharing must be shared or per_side, got `{value}`"
                        )))
                    }
                }
            }
            "max_utterances" => self.limits.max_utterances = num(key, value)?,
            "max_knowledge" => self.limits.max_knowledge = num(key, value)?,
            "max_tokens" => self.limits.max_tokens = num(key, value)?,
            "candidates" => self.limits.candidates = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_epsilon" => self.adam_epsilon = num(key, value)?,
            "init_bound" => self.init_bound = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "min_freq" => self.min_freq = num(key, value)?,
            "skipgram_window" => self.skipgram_window = num(key, value)?,
            "skipgram_negatives" => self.skipgram_negatives = num(key, value)?,
            "skipgram_epochs" => self.skipgram_epochs = num(key, value)?,
            "skipgram_learning_rate" => self.skipgram_learning_rate = num(key, value)?,
            "max_train_samples" => self.max_train_samples = num(key, value)?,
            "max_valid_samples" => self.max_valid_samples = num(key, value)?,
            "data_dir" => self.data_dir = value.to_string(),
            "output_dir" => self.output_dir = value.to_string(),
            _ if AblationFlags::NAMES.contains(&key) => self.ablation.set(key, boolean(key, value)?)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Shortest text that parses back to the same value.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}
