//! ADVAE encoder/decoder, the Transformer-VAE baseline and the hierarchical
//! prior, all built on the autodiff tape.

mod advae;
pub mod nn;
mod tvae;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, ParamStore, Tape, Var};
use crate::corpus::{BOS, EOS, PAD};
use crate::gaussian;
use crate::{Error, Result};

use advae::{AdvaeDecoder, AdvaeEncoder, HierStep};
use nn::Ctx;
use tvae::TvaeNet;

pub use advae::SIGMA_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Advae,
    Tvae,
    AdvaeHier,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Advae => "advae",
            Variant::Tvae => "tvae",
            Variant::AdvaeHier => "advae_hier",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of latent levels for `advae_hier`; ignored otherwise.
    pub hier_levels: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_z: usize,
    pub d_z: usize,
    pub dropout: f64,
    /// 0 means "take it from the vocabulary".
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Advae,
            hier_levels: 2,
            d_model: 192,
            n_layers: 2,
            n_heads: 4,
            n_z: 8,
            d_z: 96,
            dropout: 0.3,
            vocab_size: 0,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
        }
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        match self.variant {
            Variant::AdvaeHier => self.hier_levels,
            _ => 1,
        }
    }

    pub fn total_latent(&self) -> usize {
        self.n_z * self.d_z
    }

    /// Latent variables seen by the evaluation protocol. The baseline's
    /// flat latent counts each scalar component as one variable.
    pub fn n_vars(&self) -> usize {
        match self.variant {
            Variant::Tvae => self.total_latent(),
            _ => self.n_z,
        }
    }

    pub fn var_dim(&self) -> usize {
        match self.variant {
            Variant::Tvae => 1,
            _ => self.d_z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.n_z == 0 || self.d_z == 0 {
            return fail("n_layers, n_z and d_z must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size <= EOS {
            return fail(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.max_len == 0 {
            return fail("max_len must be positive".into());
        }
        if self.variant == Variant::AdvaeHier && self.hier_levels == 0 {
            return fail("advae_hier needs at least one level".into());
        }
        Ok(())
    }
}

/// Diagonal-Gaussian posterior (or prior) over `n_vars x var_dim` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub mu: Matrix,
    pub sigma: Matrix,
    pub z: Option<Matrix>,
}

impl LatentState {
    pub fn new(mu: Matrix, sigma: Matrix) -> Self {
        assert_eq!(mu.dim(), sigma.dim(), "mu/sigma shape mismatch");
        LatentState { mu, sigma, z: None }
    }

    /// `mu + sigma * eps`.
    pub fn sample_latent(&self, eps: &Matrix) -> Matrix {
        gaussian::reparameterize(&self.mu, &self.sigma, eps)
    }

    pub fn kl_to_std_normal(&self) -> f64 {
        gaussian::kl_to_standard_normal(&self.mu, &self.sigma)
    }

    pub fn log_density(&self, z: &Matrix) -> f64 {
        gaussian::log_density(z, &self.mu, &self.sigma)
    }
}

/// Which cross-attention layers feed the encoder influence estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LayerMode {
    #[default]
    AllMean,
    Layer(usize),
}

impl FromStr for LayerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "all_mean" {
            return Ok(LayerMode::AllMean);
        }
        s.strip_prefix("layer_")
            .and_then(|k| k.parse().ok())
            .map(LayerMode::Layer)
            .ok_or_else(|| Error::Config(format!("layer mode `{s}` is not all_mean or layer_<k>")))
    }
}

impl fmt::Display for LayerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerMode::AllMean => f.write_str("all_mean"),
            LayerMode::Layer(k) => write!(f, "layer_{k}"),
        }
    }
}

/// Encoder cross-attention of the latent queries over source tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `[layer][head]`, each `n_vars x n_tokens`.
    pub weights: Vec<Vec<Matrix>>,
}

impl AttentionTrace {
    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Mean over heads, then over the selected layers.
    pub fn averaged(&self, mode: LayerMode) -> Result<Matrix> {
        let layers: Vec<&Vec<Matrix>> = match mode {
            LayerMode::AllMean => self.weights.iter().collect(),
            LayerMode::Layer(k) => vec![self.weights.get(k).ok_or_else(|| {
                Error::Config(format!("layer {k} out of range (have {})", self.weights.len()))
            })?],
        };
        let mut acc = Array2::zeros(layers[0][0].dim());
        for heads in &layers {
            for h in heads.iter() {
                acc += h;
            }
        }
        let count = layers.iter().map(|h| h.len()).sum::<usize>() as f64;
        Ok(acc / count)
    }
}

/// Posterior over every latent level plus the encoder attention (ADVAE only).
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub levels: Vec<LatentState>,
    pub trace: Option<AttentionTrace>,
}

impl Posterior {
    /// The level read by the decoder.
    pub fn state(&self) -> &LatentState {
        self.levels.last().expect("at least one level")
    }
}

/// Tape nodes of one ELBO evaluation, summed over the batch.
pub struct ElboVars {
    pub recon: Var,
    pub kl: Var,
    pub logits: Var,
}

#[derive(Debug, Clone)]
enum Net {
    Advae {
        enc: AdvaeEncoder,
        dec: AdvaeDecoder,
        prior: Vec<HierStep>,
    },
    Tvae(TvaeNet),
}

/// Rows processed per inference forward pass.
const INFER_CHUNK: usize = 64;

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    net: Net,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = match config.variant {
            Variant::Tvae => Net::Tvae(TvaeNet::new(&mut params, &config, &mut rng)),
            Variant::Advae | Variant::AdvaeHier => {
                let enc = AdvaeEncoder::new(&mut params, &config, &mut rng);
                let dec = AdvaeDecoder::new(&mut params, &config, &mut rng);
                let prior = (1..config.levels())
                    .map(|l| HierStep::new(&mut params, l, &config, &mut rng))
                    .collect();
                Net::Advae { enc, dec, prior }
            }
        };
        Ok(Model {
            config,
            params,
            net,
        })
    }

    /// Rebuilds the network and installs `params`, which must match the
    /// configuration's parameter names and shapes.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for id in model.params.ids() {
            let (want, got) = (model.params.name(id), params.name(id));
            if want != got || model.params.get(id).dim() != params.get(id).dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} mismatch: expected {want} {:?}, found {got} {:?}",
                    id.index(),
                    model.params.get(id).dim(),
                    params.get(id).dim()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn n_vars(&self) -> usize {
        self.config.n_vars()
    }

    pub fn var_dim(&self) -> usize {
        self.config.var_dim()
    }

    fn check_rows(&self, rows: &[&[usize]]) -> Result<()> {
        for r in rows {
            if r.is_empty() {
                return Err(Error::EmptySentence);
            }
            if r.len() > self.config.max_len {
                return Err(Error::Shape(format!(
                    "sentence of {} tokens exceeds max_len {}",
                    r.len(),
                    self.config.max_len
                )));
            }
            if let Some(&bad) = r.iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(Error::Shape(format!("token id {bad} outside vocabulary")));
            }
        }
        Ok(())
    }

    /// Records the ELBO terms for one batch. `src` are encoder inputs
    /// (unframed ids), `dec_in` the decoder inputs (`BOS s...`) and
    /// `targets` the packed next tokens (`s... EOS`). Without `noise` the
    /// posterior mean is used as the sample.
    pub fn elbo_vars(
        &self,
        t: &mut Tape,
        src: &[&[usize]],
        dec_in: &[&[usize]],
        targets: &[usize],
        noise: Option<&mut ChaCha8Rng>,
        ctx: &mut Ctx,
    ) -> ElboVars {
        let batch = src.len();
        assert_eq!(batch, dec_in.len(), "one decoder input per sentence");
        let sample = |t: &mut Tape, mu: Var, sigma: Var, noise: Option<&mut ChaCha8Rng>| match noise {
            Some(rng) => {
                let (r, c) = t.value(mu).dim();
                let eps = gaussian::standard_normal(rng, r, c);
                let scaled = t.mul_const(sigma, eps);
                t.add(mu, scaled)
            }
            None => mu,
        };
        match &self.net {
            Net::Tvae(net) => {
                let (mu, sigma) = net.encode(t, src, ctx);
                let z = sample(t, mu, sigma, noise);
                let kl = t.gaussian_kl(mu, sigma, None);
                let logits = net.logits(t, z, dec_in, ctx);
                let recon = t.cross_entropy_sum(logits, targets);
                ElboVars { recon, kl, logits }
            }
            Net::Advae { enc, dec, prior } => {
                let out = enc.forward(t, src, ctx);
                let z_all = sample(t, out.mu, out.sigma, noise);
                let n_z = self.config.n_z;
                let levels = self.config.levels();
                let pick = |t: &mut Tape, v: Var, l: usize| {
                    if levels == 1 {
                        return v;
                    }
                    let idx: Vec<(usize, usize)> = (0..batch)
                        .flat_map(|b| (0..n_z).map(move |i| (0, b * n_z * levels + l * n_z + i)))
                        .collect();
                    t.gather_rows(&[v], &idx)
                };
                let mut z_prev = pick(t, z_all, 0);
                let (mu0, sigma0) = (pick(t, out.mu, 0), pick(t, out.sigma, 0));
                let mut kl = t.gaussian_kl(mu0, sigma0, None);
                for (l, step) in prior.iter().enumerate().map(|(k, s)| (k + 1, s)) {
                    let (pm, ps) = step.forward(t, z_prev, batch, ctx);
                    let (ml, sl) = (pick(t, out.mu, l), pick(t, out.sigma, l));
                    let kl_l = t.gaussian_kl(ml, sl, Some((pm, ps)));
                    kl = t.add(kl, kl_l);
                    z_prev = pick(t, z_all, l);
                }
                let (mem, segments) = dec.memory(t, z_prev, batch, ctx);
                let logits = dec.logits(t, mem, &segments, dec_in, ctx);
                let recon = t.cross_entropy_sum(logits, targets);
                ElboVars { recon, kl, logits }
            }
        }
    }

    /// Posterior for each sentence (unframed ids).
    pub fn posterior(&self, rows: &[&[usize]]) -> Result<Vec<Posterior>> {
        self.check_rows(rows)?;
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(INFER_CHUNK) {
            out.extend(self.posterior_chunk(chunk));
        }
        Ok(out)
    }

    fn posterior_chunk(&self, rows: &[&[usize]]) -> Vec<Posterior> {
        let mut t = Tape::new(&self.params);
        let mut ctx = Ctx::eval();
        match &self.net {
            Net::Tvae(net) => {
                let (mu, sigma) = net.encode(&mut t, rows, &mut ctx);
                let (mu, sigma) = (t.value(mu), t.value(sigma));
                let col = |m: &Matrix, b: usize| m.slice(s![b, ..]).to_owned().insert_axis(Axis(1));
                (0..rows.len())
                    .map(|b| Posterior {
                        levels: vec![LatentState::new(col(mu, b), col(sigma, b))],
                        trace: None,
                    })
                    .collect()
            }
            Net::Advae { enc, .. } => {
                let out = enc.forward(&mut t, rows, &mut ctx);
                let n_z = self.config.n_z;
                let levels = self.config.levels();
                let nq = n_z * levels;
                let (mu, sigma) = (t.value(out.mu), t.value(out.sigma));
                let heads = self.config.n_heads;
                (0..rows.len())
                    .map(|b| {
                        let states = (0..levels)
                            .map(|l| {
                                let r = b * nq + l * n_z..b * nq + (l + 1) * n_z;
                                LatentState::new(
                                    mu.slice(s![r.clone(), ..]).to_owned(),
                                    sigma.slice(s![r, ..]).to_owned(),
                                )
                            })
                            .collect();
                        // decoder-level queries only
                        let q_rows = (levels - 1) * n_z..levels * n_z;
                        let weights = out
                            .traces
                            .iter()
                            .map(|&a| {
                                let (probs, h) = t.attention_probs(a).expect("attention node");
                                debug_assert_eq!(h, heads);
                                (0..heads)
                                    .map(|k| probs[b * heads + k].slice(s![q_rows.clone(), ..]).to_owned())
                                    .collect()
                            })
                            .collect();
                        Posterior {
                            levels: states,
                            trace: Some(AttentionTrace { weights }),
                        }
                    })
                    .collect()
            }
        }
    }

    /// Single-sentence posterior of the decoder-level latent and its trace.
    pub fn encode_posterior(&self, ids: &[usize]) -> Result<(LatentState, Option<AttentionTrace>)> {
        let mut p = self.posterior(&[ids])?;
        let p = p.pop().expect("one posterior");
        let state = p.levels.last().cloned().expect("one level");
        Ok((state, p.trace))
    }

    fn z_rows(&self, zs: &[&Matrix]) -> Matrix {
        let shape = (self.n_vars(), self.var_dim());
        for z in zs {
            assert_eq!(z.dim(), shape, "latent shape mismatch");
        }
        match self.config.variant {
            Variant::Tvae => {
                let rows: Vec<_> = zs.iter().map(|z| z.t().into_shape_with_order((1, shape.0)).unwrap()).collect();
                let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
                concatenate(Axis(0), &views).expect("uniform widths")
            }
            _ => {
                let views: Vec<_> = zs.iter().map(|z| z.view()).collect();
                concatenate(Axis(0), &views).expect("uniform widths")
            }
        }
    }

    /// Teacher-forced logits for decoder inputs, one matrix per sentence.
    pub fn batch_logits(&self, zs: &[&Matrix], inputs: &[&[usize]]) -> Vec<Matrix> {
        assert_eq!(zs.len(), inputs.len());
        let mut out = Vec::with_capacity(zs.len());
        for (zc, ic) in zs.chunks(INFER_CHUNK).zip(inputs.chunks(INFER_CHUNK)) {
            let mut t = Tape::new(&self.params);
            let mut ctx = Ctx::eval();
            let z = t.constant(self.z_rows(zc));
            let logits = match &self.net {
                Net::Tvae(net) => net.logits(&mut t, z, ic, &mut ctx),
                Net::Advae { dec, .. } => {
                    let (mem, segs) = dec.memory(&mut t, z, zc.len(), &mut ctx);
                    dec.logits(&mut t, mem, &segs, ic, &mut ctx)
                }
            };
            let lv = t.value(logits);
            for seg in nn::segments_of(ic.iter().map(|r| r.len())) {
                out.push(lv.slice(s![seg, ..]).to_owned());
            }
        }
        out
    }

    /// Logits at every prefix position; `prefix` starts with BOS.
    pub fn decoder_logits(&self, z: &Matrix, prefix: &[usize]) -> Matrix {
        assert_eq!(prefix.first(), Some(&BOS), "prefix must start with BOS");
        self.batch_logits(&[z], &[prefix]).pop().unwrap()
    }

    /// `log p(s | z)` summed over tokens and the final EOS.
    pub fn sentence_log_probs(&self, rows: &[&[usize]], zs: &[&Matrix]) -> Vec<f64> {
        let framed: Vec<Vec<usize>> = rows.iter().map(|r| crate::corpus::frame(r)).collect();
        let inputs: Vec<&[usize]> = framed.iter().map(|f| &f[..f.len() - 1]).collect();
        let logits = self.batch_logits(zs, &inputs);
        logits
            .iter()
            .zip(&framed)
            .map(|(l, f)| log_softmax_at(l, &f[1..]))
            .collect()
    }

    pub fn sentence_log_prob(&self, ids: &[usize], z: &Matrix) -> f64 {
        self.sentence_log_probs(&[ids], &[z])[0]
    }

    /// Greedy decoding for a batch of latents. PAD and BOS are never
    /// emitted; ties go to the lowest id. Output excludes BOS/EOS.
    pub fn greedy_decode(&self, zs: &[&Matrix], max_len: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(INFER_CHUNK) {
            out.extend(self.greedy_chunk(chunk, max_len));
        }
        out
    }

    fn greedy_chunk(&self, zs: &[&Matrix], max_len: usize) -> Vec<Vec<usize>> {
        let n = zs.len();
        let z = self.z_rows(zs);
        // latent memory is fixed across steps
        let memory = match &self.net {
            Net::Advae { dec, .. } => {
                let mut t = Tape::new(&self.params);
                let zc = t.constant(z.clone());
                let (mem, _) = dec.memory(&mut t, zc, n, &mut Ctx::eval());
                Some(t.value(mem).clone())
            }
            Net::Tvae(_) => None,
        };
        let per = if memory.is_some() { self.config.n_z } else { 1 };
        let mut seqs: Vec<Vec<usize>> = vec![vec![BOS]; n];
        let mut done = vec![false; n];
        for _ in 0..=max_len {
            let active: Vec<usize> = (0..n).filter(|&b| !done[b]).collect();
            if active.is_empty() {
                break;
            }
            let rows_of = |m: &Matrix| {
                let views: Vec<_> = active
                    .iter()
                    .map(|&b| m.slice(s![b * per..(b + 1) * per, ..]))
                    .collect();
                concatenate(Axis(0), &views).unwrap()
            };
            let inputs: Vec<&[usize]> = active.iter().map(|&b| seqs[b].as_slice()).collect();
            let mut t = Tape::new(&self.params);
            let mut ctx = Ctx::eval();
            let logits = match (&self.net, &memory) {
                (Net::Advae { dec, .. }, Some(mem)) => {
                    let mem = t.constant(rows_of(mem));
                    let segs = nn::segments_of(std::iter::repeat_n(per, active.len()));
                    dec.logits(&mut t, mem, &segs, &inputs, &mut ctx)
                }
                (Net::Tvae(net), None) => {
                    let zc = t.constant(rows_of(&z));
                    net.logits(&mut t, zc, &inputs, &mut ctx)
                }
                _ => unreachable!(),
            };
            let lv = t.value(logits);
            let segs = nn::segments_of(inputs.iter().map(|r| r.len()));
            let next: Vec<usize> = segs.iter().map(|seg| argmax_token(lv.row(seg.end - 1))).collect();
            for (&b, tok) in active.iter().zip(next) {
                let generated = seqs[b].len() - 1;
                if tok == EOS || generated >= max_len {
                    done[b] = true;
                } else {
                    seqs[b].push(tok);
                }
            }
        }
        seqs.into_iter().map(|mut s| s.split_off(1)).collect()
    }

    /// Ancestral draw from the prior; one matrix per level.
    pub fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<Matrix> {
        let (r, c) = (self.n_vars(), self.var_dim());
        let mut levels = vec![gaussian::standard_normal(rng, r, c)];
        for l in 1..self.config.levels() {
            let (mu, sigma) = self.hier_prior_step(l, &levels[l - 1]).expect("hierarchical model");
            let eps = gaussian::standard_normal(rng, r, c);
            levels.push(gaussian::reparameterize(&mu, &sigma, &eps));
        }
        levels
    }

    /// `p(z^l | z^{l-1})` for `1 <= l < levels`.
    pub fn hier_prior_step(&self, level: usize, z_prev: &Matrix) -> Result<(Matrix, Matrix)> {
        let Net::Advae { prior, .. } = &self.net else {
            return Err(Error::Config("hierarchical prior requested on a tvae model".into()));
        };
        if self.config.variant != Variant::AdvaeHier {
            return Err(Error::Config("hierarchical prior requested on a flat model".into()));
        }
        let step = prior.get(level.wrapping_sub(1)).ok_or_else(|| {
            Error::Config(format!("prior level {level} outside 1..{}", self.config.levels()))
        })?;
        let mut t = Tape::new(&self.params);
        let z = t.constant(z_prev.clone());
        let (mu, sigma) = step.forward(&mut t, z, 1, &mut Ctx::eval());
        Ok((t.value(mu).clone(), t.value(sigma).clone()))
    }

    /// `ln p(z^0) + sum_l ln p(z^l | z^{l-1})`.
    pub fn prior_log_density(&self, levels: &[Matrix]) -> f64 {
        assert_eq!(levels.len(), self.config.levels(), "one sample per level");
        let mut total = gaussian::log_density_standard(&levels[0]);
        for l in 1..levels.len() {
            let (mu, sigma) = self.hier_prior_step(l, &levels[l - 1]).expect("hierarchical model");
            total += gaussian::log_density(&levels[l], &mu, &sigma);
        }
        total
    }

    pub fn levels(&self) -> usize {
        self.config.levels()
    }

    #[cfg(test)]
    pub(crate) fn output_layer(&self) -> (crate::autodiff::ParamId, crate::autodiff::ParamId) {
        let out = match &self.net {
            Net::Tvae(net) => net.out(),
            Net::Advae { dec, .. } => dec.out(),
        };
        (out.w, out.b)
    }
}

/// Highest-scoring token other than PAD/BOS; ties to the lowest id.
pub(crate) fn argmax_token(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = EOS;
    for (id, &v) in row.iter().enumerate() {
        if id == PAD || id == BOS {
            continue;
        }
        if v > row[best] {
            best = id;
        }
    }
    if row[best].is_nan() {
        return EOS;
    }
    best
}

fn log_softmax_at(logits: &Matrix, targets: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), targets.len());
    logits
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(row, &t)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row[t] - lse
        })
        .sum()
}

/// Packs framed sentences into decoder inputs and flat targets.
pub fn teacher_forcing(framed: &[Vec<usize>]) -> (Vec<&[usize]>, Vec<usize>) {
    let inputs = framed.iter().map(|f| &f[..f.len() - 1]).collect();
    let targets = framed.iter().flat_map(|f| f[1..].iter().copied()).collect();
    (inputs, targets)
}

/// Row ranges of each sentence in packed decoder output.
pub fn packed_segments(lengths: impl IntoIterator<Item = usize>) -> Vec<Range<usize>> {
    nn::segments_of(lengths)
}
