//! Attention-driven encoder/decoder and the hierarchical prior step.

use std::ops::Range;
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::nn::{normal_init, segments_of, BlockKind, Ctx, Embedding, Linear, Memory, Stack, EMBED_STD};
use super::ModelConfig;
use crate::autodiff::{AttnLayout, ParamId, ParamStore, Tape, Var};

pub const SIGMA_FLOOR: f64 = 1e-6;

/// Packed token rows: sentence `b` occupies `segments[b]`.
pub(crate) struct Packed {
    pub ids: Vec<usize>,
    pub segments: Vec<Range<usize>>,
}

impl Packed {
    pub fn new(rows: &[&[usize]]) -> Self {
        Packed {
            ids: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            segments: segments_of(rows.iter().map(|r| r.len())),
        }
    }
}

/// Diagonal-Gaussian head: `mu = W x + b`, `sigma = max(softplus(W' x + b'), floor)`.
#[derive(Debug, Clone)]
pub(crate) struct GaussianHead {
    pub mu: Linear,
    pub sigma: Linear,
}

impl GaussianHead {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        GaussianHead {
            mu: Linear::new(store, &format!("{name}.mu"), d_in, d_out, rng),
            sigma: Linear::new(store, &format!("{name}.sigma"), d_in, d_out, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> (Var, Var) {
        let mu = self.mu.forward(t, x);
        let pre = self.sigma.forward(t, x);
        (mu, t.softplus_floor(pre, SIGMA_FLOOR))
    }
}

pub(crate) struct EncoderOut {
    pub mu: Var,
    pub sigma: Var,
    /// One cross-attention node per layer.
    pub traces: Vec<Var>,
}

/// Token encoder plus input-independent latent queries that only
/// cross-attend to it.
#[derive(Debug, Clone)]
pub(crate) struct AdvaeEncoder {
    emb: Embedding,
    src: Stack,
    queries: ParamId,
    lat: Stack,
    head: GaussianHead,
    n_queries: usize,
}

impl AdvaeEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let n_queries = cfg.n_z * cfg.levels();
        AdvaeEncoder {
            emb: Embedding::new(store, "enc.emb", cfg.vocab_size, d, rng),
            src: Stack::new(store, "enc.src", BlockKind::SelfOnly, cfg.n_layers, d, cfg.n_heads, rng),
            queries: store.add("enc.queries", normal_init(rng, n_queries, d, EMBED_STD)),
            lat: Stack::new(store, "enc.lat", BlockKind::CrossOnly, cfg.n_layers, d, cfg.n_heads, rng),
            head: GaussianHead::new(store, "enc.head", d, cfg.d_z, rng),
            n_queries,
        }
    }

    #[cfg(test)]
    pub fn head(&self, t: &mut Tape, x: Var) -> (Var, Var) {
        self.head.forward(t, x)
    }

    #[cfg(test)]
    pub fn queries(&self) -> ParamId {
        self.queries
    }

    /// Output rows `b * n_queries + q` hold query `q` of sentence `b`.
    pub fn forward(&self, t: &mut Tape, rows: &[&[usize]], ctx: &mut Ctx) -> EncoderOut {
        let (lat, traces) = self.latent_stream(t, rows, ctx);
        let (mu, sigma) = self.head.forward(t, lat);
        EncoderOut { mu, sigma, traces }
    }

    /// Final (normalized) query representations before the Gaussian head.
    pub fn latent_stream(&self, t: &mut Tape, rows: &[&[usize]], ctx: &mut Ctx) -> (Var, Vec<Var>) {
        let packed = Packed::new(rows);
        let x = self.emb.forward(t, &packed.ids, &packed.segments, ctx);
        let src_layout = Rc::new(AttnLayout::within(&packed.segments, false));
        let (mem, _) = self.src.forward(t, x, Some(&src_layout), None, ctx);
        let q = t.param(self.queries);
        let q = t.tile_rows(q, rows.len());
        let q_segments = segments_of(std::iter::repeat_n(self.n_queries, rows.len()));
        let cross = Rc::new(AttnLayout::new(q_segments, packed.segments, false));
        self.lat.forward(
            t,
            q,
            None,
            Some(Memory {
                value: mem,
                layout: &cross,
            }),
            ctx,
        )
    }
}

/// Latent variables bound to learned identifiers, projected to the model
/// width and contextualized by a self-attention stack.
#[derive(Debug, Clone)]
pub(crate) struct LatentMemory {
    ids: ParamId,
    proj: Linear,
    enc: Stack,
    n_z: usize,
}

impl LatentMemory {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        LatentMemory {
            // same scale as prior draws of z
            ids: store.add(format!("{name}.z_ids"), normal_init(rng, cfg.n_z, d, 1.0)),
            proj: Linear::new(store, &format!("{name}.z_proj"), cfg.d_z + d, d, rng),
            enc: Stack::new(store, &format!("{name}.z_enc"), BlockKind::SelfOnly, cfg.n_layers, d, cfg.n_heads, rng),
            n_z: cfg.n_z,
        }
    }

    /// `z` holds `batch * n_z` rows. Returns the memory and its segments.
    pub fn forward(&self, t: &mut Tape, z: Var, batch: usize, ctx: &mut Ctx) -> (Var, Vec<Range<usize>>) {
        let ids = t.param(self.ids);
        let ids = t.tile_rows(ids, batch);
        let x = t.concat_cols(&[z, ids]);
        let x = self.proj.forward(t, x);
        let segments = segments_of(std::iter::repeat_n(self.n_z, batch));
        let layout = Rc::new(AttnLayout::within(&segments, false));
        let (mem, _) = self.enc.forward(t, x, Some(&layout), None, ctx);
        (mem, segments)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AdvaeDecoder {
    latent: LatentMemory,
    emb: Embedding,
    dec: Stack,
    out: Linear,
}

impl AdvaeDecoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        AdvaeDecoder {
            latent: LatentMemory::new(store, "dec", cfg, rng),
            emb: Embedding::new(store, "dec.emb", cfg.vocab_size, d, rng),
            dec: Stack::new(store, "dec.tok", BlockKind::SelfCross, cfg.n_layers, d, cfg.n_heads, rng),
            out: Linear::new(store, "dec.out", d, cfg.vocab_size, rng),
        }
    }

    #[cfg(test)]
    pub fn out(&self) -> &Linear {
        &self.out
    }

    pub fn memory(&self, t: &mut Tape, z: Var, batch: usize, ctx: &mut Ctx) -> (Var, Vec<Range<usize>>) {
        self.latent.forward(t, z, batch, ctx)
    }

    /// Packed logits for decoder inputs `inputs[b]` against memory segment `b`.
    pub fn logits(
        &self,
        t: &mut Tape,
        mem: Var,
        mem_segments: &[Range<usize>],
        inputs: &[&[usize]],
        ctx: &mut Ctx,
    ) -> Var {
        let packed = Packed::new(inputs);
        let x = self.emb.forward(t, &packed.ids, &packed.segments, ctx);
        let causal = Rc::new(AttnLayout::within(&packed.segments, true));
        let cross = Rc::new(AttnLayout::new(packed.segments.clone(), mem_segments.to_vec(), false));
        let (h, _) = self.dec.forward(
            t,
            x,
            Some(&causal),
            Some(Memory {
                value: mem,
                layout: &cross,
            }),
            ctx,
        );
        self.out.forward(t, h)
    }
}

/// One conditional `p(z^l | z^{l-1})` of the hierarchical prior.
#[derive(Debug, Clone)]
pub(crate) struct HierStep {
    latent: LatentMemory,
    queries: ParamId,
    blocks: Stack,
    head: GaussianHead,
    n_z: usize,
}

impl HierStep {
    pub fn new(store: &mut ParamStore, level: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let name = format!("prior.{level}");
        let d = cfg.d_model;
        HierStep {
            latent: LatentMemory::new(store, &name, cfg, rng),
            queries: store.add(format!("{name}.queries"), normal_init(rng, cfg.n_z, d, EMBED_STD)),
            blocks: Stack::new(store, &format!("{name}.q"), BlockKind::SelfCross, cfg.n_layers, d, cfg.n_heads, rng),
            head: GaussianHead::new(store, &format!("{name}.head"), d, cfg.d_z, rng),
            n_z: cfg.n_z,
        }
    }

    /// `z_prev` holds `batch * n_z` rows; returns prior `(mu, sigma)` rows.
    pub fn forward(&self, t: &mut Tape, z_prev: Var, batch: usize, ctx: &mut Ctx) -> (Var, Var) {
        let (mem, mem_segments) = self.latent.forward(t, z_prev, batch, ctx);
        let q = t.param(self.queries);
        let q = t.tile_rows(q, batch);
        let q_segments = segments_of(std::iter::repeat_n(self.n_z, batch));
        let self_layout = Rc::new(AttnLayout::within(&q_segments, false));
        let cross = Rc::new(AttnLayout::new(q_segments, mem_segments, false));
        let (h, _) = self.blocks.forward(
            t,
            q,
            Some(&self_layout),
            Some(Memory {
                value: mem,
                layout: &cross,
            }),
            ctx,
        );
        self.head.forward(t, h)
    }
}
