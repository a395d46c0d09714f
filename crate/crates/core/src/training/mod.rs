//! β-VAE objective, KL annealing, Adam and the training loop.

mod checkpoint;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, Matrix, ParamStore, Tape};
use crate::corpus::{frame, make_batches, word_dropout};
use crate::model::nn::Ctx;
use crate::model::{teacher_forcing, Model};
use crate::{Error, Result};

pub use checkpoint::{Checkpoint, RngState, TrainSnapshot, CHECKPOINT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta_final: f64,
    pub recon_steps: usize,
    pub anneal_steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub word_dropout: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps (0 = run all epochs).
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta_final: 0.3,
            recon_steps: 3000,
            anneal_steps: 3000,
            lr: 2e-4,
            batch_size: 128,
            epochs: 20,
            word_dropout: 0.1,
            seed: 0,
            max_steps: 0,
        }
    }
}

/// Size of the corpus the default schedule was tuned for, in sentences.
pub const REFERENCE_CORPUS: usize = 90_000;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.beta_final >= 0.0) {
            return fail("beta_final must be non-negative");
        }
        if !(self.lr >= 0.0) {
            return fail("lr must be non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.word_dropout) {
            return fail("word_dropout must lie in [0, 1]");
        }
        Ok(())
    }

    /// Rescales the reconstruction and annealing phases so they cover the
    /// same fraction of training (in epochs) as the defaults do on the
    /// reference corpus with the default batch size.
    pub fn scaled_to_corpus(mut self, n_sentences: usize) -> Self {
        let d = TrainConfig::default();
        let ref_steps_per_epoch = REFERENCE_CORPUS as f64 / d.batch_size as f64;
        let steps_per_epoch = n_sentences.div_ceil(self.batch_size) as f64;
        let scale = |steps: usize| ((steps as f64 / ref_steps_per_epoch) * steps_per_epoch).round() as usize;
        self.recon_steps = scale(d.recon_steps);
        self.anneal_steps = scale(d.anneal_steps);
        self
    }
}

/// KL weight at `step`: zero through the reconstruction phase, a linear ramp
/// over the annealing phase, then `beta_final`.
pub fn beta_at_step(step: usize, cfg: &TrainConfig) -> f64 {
    let end = cfg.recon_steps + cfg.anneal_steps;
    if step >= end {
        cfg.beta_final
    } else if step <= cfg.recon_steps {
        0.0
    } else {
        cfg.beta_final * (step - cfg.recon_steps) as f64 / cfg.anneal_steps as f64
    }
}

/// Per-sentence ELBO terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// Evaluates the objective on framed-free `rows` without updating anything.
/// With `noise`, one reparameterized sample per sentence; otherwise the
/// posterior mean.
pub fn elbo_terms(model: &Model, rows: &[&[usize]], beta: f64, noise: Option<&mut ChaCha8Rng>) -> ElboTerms {
    let framed: Vec<Vec<usize>> = rows.iter().map(|r| frame(r)).collect();
    let (inputs, targets) = teacher_forcing(&framed);
    let mut t = Tape::new(model.params());
    let e = model.elbo_vars(&mut t, rows, &inputs, &targets, noise, &mut Ctx::eval());
    let n = rows.len() as f64;
    let recon = t.scalar(e.recon) / n;
    let kl = t.scalar(e.kl) / n;
    ElboTerms {
        recon,
        kl,
        total: recon + beta * kl,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = || params.values().iter().map(|p| Matrix::zeros(p.dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (id, g) in grads.iter() {
            let Some(g) = g else { continue };
            let k = id.index();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = params.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub beta: f64,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// Owns a model plus all mutable training state.
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub adam: Adam,
    pub step: usize,
    pub epoch: usize,
    /// Shuffling, word dropout and latent noise.
    pub rng_data: ChaCha8Rng,
    /// Dropout masks.
    pub rng_dropout: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.params(), cfg.lr);
        let mut rng_data = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_data.set_stream(1);
        let mut rng_dropout = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_dropout.set_stream(2);
        Ok(Trainer {
            model,
            cfg,
            adam,
            step: 0,
            epoch: 0,
            rng_data,
            rng_dropout,
        })
    }

    pub fn done(&self) -> bool {
        self.epoch >= self.cfg.epochs || (self.cfg.max_steps > 0 && self.step >= self.cfg.max_steps)
    }

    /// One optimizer step on `rows` (unframed ids).
    pub fn train_step(&mut self, rows: &[&[usize]]) -> Result<StepLog> {
        let beta = beta_at_step(self.step, &self.cfg);
        let framed: Vec<Vec<usize>> = rows.iter().map(|r| frame(r)).collect();
        let (_, targets) = teacher_forcing(&framed);
        let dropped: Vec<Vec<usize>> = framed
            .iter()
            .map(|f| word_dropout(&f[..f.len() - 1], self.cfg.word_dropout, &mut self.rng_data))
            .collect();
        let inputs: Vec<&[usize]> = dropped.iter().map(Vec::as_slice).collect();
        let n = rows.len() as f64;

        let (grads, recon, kl, total) = {
            let mut t = Tape::new(self.model.params());
            let mut ctx = Ctx::train(self.model.config().dropout, &mut self.rng_dropout);
            let e = self
                .model
                .elbo_vars(&mut t, rows, &inputs, &targets, Some(&mut self.rng_data), &mut ctx);
            let weighted = t.scale(e.kl, beta);
            let sum = t.add(e.recon, weighted);
            let loss = t.scale(sum, 1.0 / n);
            let total = t.scalar(loss);
            let (recon, kl) = (t.scalar(e.recon) / n, t.scalar(e.kl) / n);
            if !total.is_finite() {
                return Err(Error::Divergence {
                    step: self.step,
                    detail: format!("loss {total} (recon {recon}, kl {kl})"),
                });
            }
            (t.backward(loss), recon, kl, total)
        };
        if !grads.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                detail: "non-finite gradient".into(),
            });
        }
        self.adam.step(self.model.params_mut(), &grads);
        let log = StepLog {
            step: self.step,
            epoch: self.epoch,
            beta,
            recon,
            kl,
            total,
        };
        self.step += 1;
        Ok(log)
    }

    /// Runs one shuffled pass over `data`, stopping early at `max_steps`.
    pub fn run_epoch(&mut self, data: &[Vec<usize>], mut on_step: impl FnMut(&StepLog)) -> Result<()> {
        let batches = make_batches(data, self.cfg.batch_size, Some(&mut self.rng_data));
        for b in &batches {
            if self.cfg.max_steps > 0 && self.step >= self.cfg.max_steps {
                break;
            }
            let log = self.train_step(&b.rows())?;
            on_step(&log);
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> TrainSnapshot {
        TrainSnapshot {
            config: self.cfg.clone(),
            step: self.step,
            epoch: self.epoch,
            adam: self.adam.clone(),
            rng_data: RngState::of(&self.rng_data),
            rng_dropout: RngState::of(&self.rng_dropout),
        }
    }

    pub fn restore(model: Model, snap: TrainSnapshot) -> Result<Self> {
        if snap.adam.m.len() != model.params().len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        Ok(Trainer {
            model,
            cfg: snap.config,
            adam: snap.adam,
            step: snap.step,
            epoch: snap.epoch,
            rng_data: snap.rng_data.restore(),
            rng_dropout: snap.rng_dropout.restore(),
        })
    }
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("checkpoints")).map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join("train_log.jsonl")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
}

/// Trains until the configured epochs (or step cap) are exhausted. With a
/// run directory, writes the JSONL log and a checkpoint per epoch.
pub fn train(
    trainer: &mut Trainer,
    data: &[Vec<usize>],
    vocab: &crate::corpus::Vocab,
    run: Option<&RunDir>,
) -> Result<Vec<StepLog>> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut history = Vec::new();
    let mut writer = match run {
        Some(r) => {
            let p = r.log_path();
            let f = File::options().create(true).append(true).open(&p).map_err(|e| Error::io(&p, e))?;
            Some((BufWriter::new(f), p))
        }
        None => None,
    };
    while !trainer.done() {
        let mut io_err = None;
        let start = history.len();
        trainer.run_epoch(data, |log| history.push(*log))?;
        if let Some((w, p)) = writer.as_mut() {
            for log in &history[start..] {
                let line = serde_json::to_string(log)?;
                if let Err(e) = writeln!(w, "{line}") {
                    io_err = Some(Error::io(p.as_path(), e));
                    break;
                }
            }
            w.flush().map_err(|e| Error::io(p.as_path(), e))?;
        }
        if let Some(e) = io_err {
            return Err(e);
        }
        if let Some(slice) = history.get(start..) {
            if let Some(last) = slice.last() {
                let n = slice.len() as f64;
                let recon = slice.iter().map(|l| l.recon).sum::<f64>() / n;
                let kl = slice.iter().map(|l| l.kl).sum::<f64>() / n;
                log::info!(
                    "epoch {} step {} beta {:.3} recon {recon:.4} kl {kl:.4}",
                    trainer.epoch,
                    last.step + 1,
                    last.beta
                );
            }
        }
        if let Some(r) = run {
            let ckpt = Checkpoint::from_trainer(trainer, vocab);
            ckpt.save(r.epoch_checkpoint(trainer.epoch))?;
            ckpt.save(r.final_checkpoint())?;
        }
    }
    Ok(history)
}

/// Fraction of target tokens (including EOS) predicted by argmax under
/// teacher forcing with `z` set to the posterior mean.
pub fn teacher_forced_accuracy(model: &Model, rows: &[&[usize]]) -> Result<f64> {
    let posts = model.posterior(rows)?;
    let zs: Vec<&Matrix> = posts.iter().map(|p| &p.state().mu).collect();
    let framed: Vec<Vec<usize>> = rows.iter().map(|r| frame(r)).collect();
    let inputs: Vec<&[usize]> = framed.iter().map(|f| &f[..f.len() - 1]).collect();
    let logits = model.batch_logits(&zs, &inputs);
    let (mut hit, mut total) = (0usize, 0usize);
    for (l, f) in logits.iter().zip(&framed) {
        for (row, &target) in l.rows().into_iter().zip(&f[1..]) {
            hit += usize::from(crate::model::argmax_token(row) == target);
            total += 1;
        }
    }
    Ok(hit as f64 / total as f64)
}
