//! Run configuration: one TOML file per run directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use advae::corpus::{SyntheticSpec, DEFAULT_MAX_LEN};
use advae::eval::InfluenceKind;
use advae::model::{LayerMode, ModelConfig};
use advae::roles::RoleSet;
use advae::training::TrainConfig;

/// Environment variable that relative run directories are resolved against.
pub const RUN_ROOT_ENV: &str = "ADVAE_RUN_ROOT";

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// One training run per seed; `report` aggregates over them.
    pub seeds: Vec<u64>,
    /// Rescale the reconstruction and annealing phases to the corpus size.
    pub scale_schedule: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![0],
            scale_schedule: true,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            corpus: CorpusConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Synthetic sentences written by `gen-corpus`.
    pub n_train: usize,
    pub n_test: usize,
    pub min_freq: usize,
    pub max_len: usize,
    pub grammar: SyntheticSpec,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_train: 2000,
            n_test: 200,
            min_freq: 1,
            max_len: DEFAULT_MAX_LEN,
            grammar: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Prior samples for decoder influence.
    pub t_dec: usize,
    /// Test sentences for encoder influence (0 = all).
    pub t_enc: usize,
    /// `all_mean` or `layer_<k>`.
    pub layer_mode: String,
    /// Role specs such as `verb`, `subj=nsubj`.
    pub roles: Vec<String>,
    pub ppl_samples: usize,
    pub seed: u64,
    /// Matrix that binds roles to variables for resample/swap.
    pub map_source: InfluenceKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            t_dec: 2000,
            t_enc: 0,
            layer_mode: "all_mean".into(),
            roles: ["verb", "subj=nsubj", "dobj", "pobj"].map(String::from).to_vec(),
            ppl_samples: 10,
            seed: 0,
            map_source: InfluenceKind::Enc,
        }
    }
}

/// Paths relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train_corpus: PathBuf,
    pub test_corpus: PathBuf,
    pub train_parses: PathBuf,
    pub test_parses: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            train_corpus: "corpus/train.txt".into(),
            test_corpus: "corpus/test.txt".into(),
            train_parses: "corpus/train.conllu".into(),
            test_parses: "corpus/test.conllu".into(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            bail!("seeds contain duplicates");
        }
        // vocab_size is filled in from the corpus at training time
        let mut model = self.model.clone();
        if model.vocab_size == 0 {
            model.vocab_size = 8;
        }
        model.validate()?;
        self.train.validate()?;
        self.layer_mode()?;
        self.role_set()?;
        if self.eval.t_dec == 0 {
            bail!("eval.t_dec must be positive");
        }
        if self.eval.ppl_samples == 0 {
            bail!("eval.ppl_samples must be positive");
        }
        if matches!(self.eval.map_source, InfluenceKind::Pb | InfluenceKind::Struct) {
            bail!("eval.map_source must be `enc` or `dec`");
        }
        if self.corpus.max_len == 0 || self.corpus.max_len > self.model.max_len {
            bail!("corpus.max_len must lie in 1..={}", self.model.max_len);
        }
        Ok(())
    }

    pub fn layer_mode(&self) -> Result<LayerMode> {
        let mode: LayerMode = self.eval.layer_mode.parse()?;
        if let LayerMode::Layer(k) = mode {
            if k >= self.model.n_layers {
                bail!("eval.layer_mode {mode} but the model has {} layers", self.model.n_layers);
            }
        }
        Ok(mode)
    }

    pub fn role_set(&self) -> Result<RoleSet> {
        Ok(RoleSet::parse(&self.eval.roles)?)
    }

    /// Training config for one seed, with the schedule scaled if requested.
    pub fn train_for(&self, seed: u64, n_sentences: usize) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = seed;
        if self.scale_schedule {
            t = t.scaled_to_corpus(n_sentences);
        }
        t
    }
}

/// Resolves a run directory: relative paths are joined onto the run root
/// from the environment when it is set.
pub fn resolve_run_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}
