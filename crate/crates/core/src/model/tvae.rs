//! Transformer VAE baseline: mean-pooled encoder, single flat latent fed to
//! a decoder-only stack as a prefix row.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::advae::{GaussianHead, Packed};
use super::nn::{segments_of, BlockKind, Ctx, Embedding, Linear, Stack};
use super::ModelConfig;
use crate::autodiff::{AttnLayout, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub(crate) struct TvaeNet {
    enc_emb: Embedding,
    enc: Stack,
    head: GaussianHead,
    z_proj: Linear,
    dec_emb: Embedding,
    dec: Stack,
    out: Linear,
}

impl TvaeNet {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let total = cfg.total_latent();
        TvaeNet {
            enc_emb: Embedding::new(store, "enc.emb", cfg.vocab_size, d, rng),
            enc: Stack::new(store, "enc.src", BlockKind::SelfOnly, cfg.n_layers, d, cfg.n_heads, rng),
            head: GaussianHead::new(store, "enc.head", d, total, rng),
            z_proj: Linear::new(store, "dec.z_proj", total, d, rng),
            dec_emb: Embedding::new(store, "dec.emb", cfg.vocab_size, d, rng),
            dec: Stack::new(store, "dec.tok", BlockKind::SelfOnly, cfg.n_layers, d, cfg.n_heads, rng),
            out: Linear::new(store, "dec.out", d, cfg.vocab_size, rng),
        }
    }

    #[cfg(test)]
    pub fn out(&self) -> &Linear {
        &self.out
    }

    /// Pooled encoder output, one row per sentence.
    pub fn pooled(&self, t: &mut Tape, rows: &[&[usize]], ctx: &mut Ctx) -> Var {
        let packed = Packed::new(rows);
        let x = self.enc_emb.forward(t, &packed.ids, &packed.segments, ctx);
        let layout = Rc::new(AttnLayout::within(&packed.segments, false));
        let (h, _) = self.enc.forward(t, x, Some(&layout), None, ctx);
        t.segment_mean(h, &packed.segments)
    }

    /// `(mu, sigma)`, one `total_latent`-wide row per sentence.
    pub fn encode(&self, t: &mut Tape, rows: &[&[usize]], ctx: &mut Ctx) -> (Var, Var) {
        let pooled = self.pooled(t, rows, ctx);
        self.head.forward(t, pooled)
    }

    /// `z` has one row per sentence. The prefix row's own output is dropped,
    /// so the result has one logit row per input token.
    pub fn logits(&self, t: &mut Tape, z: Var, inputs: &[&[usize]], ctx: &mut Ctx) -> Var {
        let prefix = self.z_proj.forward(t, z);
        let packed = Packed::new(inputs);
        let tokens = self.dec_emb.forward(t, &packed.ids, &packed.segments, ctx);
        // interleave: [prefix_b, tokens_b...] per sentence
        let mut index = Vec::with_capacity(packed.ids.len() + inputs.len());
        for (b, seg) in packed.segments.iter().enumerate() {
            index.push((0, b));
            index.extend(seg.clone().map(|r| (1, r)));
        }
        let x = t.gather_rows(&[prefix, tokens], &index);
        let segments = segments_of(inputs.iter().map(|r| r.len() + 1));
        let causal = Rc::new(AttnLayout::within(&segments, true));
        let (h, _) = self.dec.forward(t, x, Some(&causal), None, ctx);
        let keep: Vec<(usize, usize)> = segments
            .iter()
            .flat_map(|s| (s.start + 1..s.end).map(|r| (0, r)))
            .collect();
        let h = t.gather_rows(&[h], &keep);
        self.out.forward(t, h)
    }
}
