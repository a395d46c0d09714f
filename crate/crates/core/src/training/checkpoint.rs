//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "ADVAECKP"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen bytes of UTF-8 JSON: model config, vocabulary, tensor
//!          names/shapes, optional training state (step, epoch, optimizer
//!          scalars, RNG positions)
//! payload  f64 values, row-major: every parameter tensor in header order,
//!          then (with training state) every Adam first moment, then every
//!          second moment
//! ```

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig, Trainer};
use crate::autodiff::{Matrix, ParamStore};
use crate::corpus::Vocab;
use crate::model::{Model, ModelConfig};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ADVAECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn decode(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }

    pub fn restore(&self) -> ChaCha8Rng {
        self.decode().expect("rng state validated on load")
    }
}

/// Everything besides parameters needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSnapshot {
    pub config: TrainConfig,
    pub step: usize,
    pub epoch: usize,
    pub adam: Adam,
    pub rng_data: RngState,
    pub rng_dropout: RngState,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainHeader {
    config: TrainConfig,
    step: usize,
    epoch: usize,
    adam_t: u64,
    adam_lr: f64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    rng_data: RngState,
    rng_dropout: RngState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorMeta>,
    train: Option<TrainHeader>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocab,
    pub train: Option<TrainSnapshot>,
}

impl Checkpoint {
    pub fn from_model(model: Model, vocab: Vocab) -> Self {
        Checkpoint {
            model,
            vocab,
            train: None,
        }
    }

    pub fn from_trainer(trainer: &Trainer, vocab: &Vocab) -> Self {
        Checkpoint {
            model: trainer.model.clone(),
            vocab: vocab.clone(),
            train: Some(trainer.snapshot()),
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        let snap = self
            .train
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
        Trainer::restore(self.model, snap)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let header = Header {
            model: self.model.config().clone(),
            vocab: self.vocab.clone(),
            tensors: params
                .ids()
                .map(|id| {
                    let (rows, cols) = params.get(id).dim();
                    TensorMeta {
                        name: params.name(id).to_string(),
                        rows,
                        cols,
                    }
                })
                .collect(),
            train: self.train.as_ref().map(|s| TrainHeader {
                config: s.config.clone(),
                step: s.step,
                epoch: s.epoch,
                adam_t: s.adam.t,
                adam_lr: s.adam.lr,
                adam_beta1: s.adam.beta1,
                adam_beta2: s.adam.beta2,
                adam_eps: s.adam.eps,
                rng_data: s.rng_data.clone(),
                rng_dropout: s.rng_dropout.clone(),
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 20 + params.numel() * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |m: &Matrix| {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        params.values().iter().for_each(&mut put);
        if let Some(s) = &self.train {
            s.adam.m.iter().for_each(&mut put);
            s.adam.v.iter().for_each(&mut put);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated header"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let mut data = body[hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        if (body.len() - hlen) % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let mut take = |rows: usize, cols: usize| -> Result<Matrix> {
            let vals: Vec<f64> = data.by_ref().take(rows * cols).collect();
            if vals.len() != rows * cols {
                return Err(bad("truncated payload"));
            }
            Ok(Matrix::from_shape_vec((rows, cols), vals).expect("sized above"))
        };
        let mut store = ParamStore::new();
        for t in &header.tensors {
            let m = take(t.rows, t.cols)?;
            store.add(t.name.clone(), m);
        }
        let model = Model::with_params(header.model, store)?;
        let train = match header.train {
            None => None,
            Some(h) => {
                let mut adam = Adam::new(model.params(), h.adam_lr);
                adam.t = h.adam_t;
                adam.beta1 = h.adam_beta1;
                adam.beta2 = h.adam_beta2;
                adam.eps = h.adam_eps;
                for slot in adam.m.iter_mut().chain(adam.v.iter_mut()) {
                    let (r, c) = slot.dim();
                    *slot = take(r, c)?;
                }
                h.rng_data.decode()?;
                h.rng_dropout.decode()?;
                Some(TrainSnapshot {
                    config: h.config,
                    step: h.step,
                    epoch: h.epoch,
                    adam,
                    rng_data: h.rng_data,
                    rng_dropout: h.rng_dropout,
                })
            }
        };
        if data.next().is_some() {
            return Err(bad("trailing payload data"));
        }
        Ok(Checkpoint {
            model,
            vocab: header.vocab,
            train,
        })
    }

    /// Writes to a sibling temporary file, then renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let bytes = self.to_bytes()?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
