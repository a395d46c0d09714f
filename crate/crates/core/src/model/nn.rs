//! Transformer building blocks recorded on an autodiff [`Tape`].
//!
//! Every block is pre-norm: `x + f(LayerNorm(x))`.

use std::ops::Range;
use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{AttnLayout, Matrix, ParamId, ParamStore, Tape, Var};

pub(crate) const EMBED_STD: f64 = 0.02;

pub(crate) fn normal_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("valid bounds");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

/// Dropout state for one forward pass. Evaluation passes carry no rng.
pub struct Ctx<'r> {
    p: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Ctx<'static> {
    pub fn eval() -> Self {
        Ctx { p: 0.0, rng: None }
    }
}

impl<'r> Ctx<'r> {
    pub fn train(p: f64, rng: &'r mut ChaCha8Rng) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout must lie in [0, 1)");
        Ctx { p, rng: Some(rng) }
    }

    pub fn dropout(&mut self, t: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if self.p == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - self.p);
        let (r, c) = t.value(x).dim();
        let p = self.p;
        let mask = Array2::from_shape_simple_fn((r, c), || {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        t.mul_const(x, mask)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), xavier(rng, fan_in, fan_out)),
            b: store.add(format!("{name}.b"), Array2::zeros((1, fan_out))),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let (w, b) = (t.param(self.w), t.param(self.b));
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Array2::ones((1, d))),
            beta: store.add(format!("{name}.beta"), Array2::zeros((1, d))),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let (g, b) = (t.param(self.gamma), t.param(self.beta));
        t.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    /// Returns the projected output and the raw attention node (for traces).
    pub fn forward(&self, t: &mut Tape, xq: Var, xkv: Var, layout: Rc<AttnLayout>) -> (Var, Var) {
        let q = self.q.forward(t, xq);
        let k = self.k.forward(t, xkv);
        let v = self.v.forward(t, xkv);
        let a = t.attention(q, k, v, self.heads, layout);
        (self.o.forward(t, a), a)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, d, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.up.forward(t, x);
        let h = t.gelu(h);
        self.down.forward(t, h)
    }
}

/// Which sublayers a [`Block`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    SelfOnly,
    CrossOnly,
    SelfCross,
}

#[derive(Debug, Clone)]
pub struct Block {
    self_attn: Option<(Norm, Attention)>,
    cross_attn: Option<(Norm, Attention)>,
    ffn: (Norm, FeedForward),
}

/// Key/value memory for cross-attention plus its query/key pairing.
#[derive(Clone, Copy)]
pub struct Memory<'a> {
    pub value: Var,
    pub layout: &'a Rc<AttnLayout>,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, kind: BlockKind, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let has_self = kind != BlockKind::CrossOnly;
        let has_cross = kind != BlockKind::SelfOnly;
        let self_attn = has_self.then(|| {
            (
                Norm::new(store, &format!("{name}.self_norm"), d),
                Attention::new(store, &format!("{name}.self_attn"), d, heads, rng),
            )
        });
        let cross_attn = has_cross.then(|| {
            (
                Norm::new(store, &format!("{name}.cross_norm"), d),
                Attention::new(store, &format!("{name}.cross_attn"), d, heads, rng),
            )
        });
        let ffn = (
            Norm::new(store, &format!("{name}.ffn_norm"), d),
            FeedForward::new(store, &format!("{name}.ffn"), d, 4 * d, rng),
        );
        Block {
            self_attn,
            cross_attn,
            ffn,
        }
    }

    /// Returns the new stream and the cross-attention node, if any.
    pub fn forward(
        &self,
        t: &mut Tape,
        mut x: Var,
        self_layout: Option<&Rc<AttnLayout>>,
        memory: Option<Memory<'_>>,
        ctx: &mut Ctx,
    ) -> (Var, Option<Var>) {
        if let Some((norm, attn)) = &self.self_attn {
            let layout = self_layout.expect("self-attention block needs a layout");
            let h = norm.forward(t, x);
            let (h, _) = attn.forward(t, h, h, Rc::clone(layout));
            let h = ctx.dropout(t, h);
            x = t.add(x, h);
        }
        let mut trace = None;
        if let Some((norm, attn)) = &self.cross_attn {
            let mem = memory.expect("cross-attention block needs memory");
            let h = norm.forward(t, x);
            let (h, a) = attn.forward(t, h, mem.value, Rc::clone(mem.layout));
            trace = Some(a);
            let h = ctx.dropout(t, h);
            x = t.add(x, h);
        }
        let (norm, ffn) = &self.ffn;
        let h = norm.forward(t, x);
        let h = ffn.forward(t, h);
        let h = ctx.dropout(t, h);
        (t.add(x, h), trace)
    }
}

/// `n` blocks followed by a final LayerNorm.
#[derive(Debug, Clone)]
pub struct Stack {
    blocks: Vec<Block>,
    norm: Norm,
}

impl Stack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: BlockKind,
        n: usize,
        d: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Stack {
            blocks: (0..n)
                .map(|l| Block::new(store, &format!("{name}.{l}"), kind, d, heads, rng))
                .collect(),
            norm: Norm::new(store, &format!("{name}.norm"), d),
        }
    }

    /// Returns the normalized output and every layer's cross-attention node.
    pub fn forward(
        &self,
        t: &mut Tape,
        mut x: Var,
        self_layout: Option<&Rc<AttnLayout>>,
        memory: Option<Memory<'_>>,
        ctx: &mut Ctx,
    ) -> (Var, Vec<Var>) {
        let mut traces = Vec::new();
        for block in &self.blocks {
            let (y, a) = block.forward(t, x, self_layout, memory, ctx);
            x = y;
            traces.extend(a);
        }
        (self.norm.forward(t, x), traces)
    }
}

/// Sinusoidal position table: `pe[p, 2i] = sin(p / 10000^(2i/d))`,
/// `pe[p, 2i+1] = cos(..)`.
pub fn positional_table(len: usize, d: usize) -> Matrix {
    Array2::from_shape_fn((len, d), |(p, j)| {
        let i = (j / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Token embedding scaled by `sqrt(d)` plus sinusoidal positions. The table
/// starts at std `1/sqrt(d)` so scaled embeddings and positions are of
/// comparable size.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    d: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Embedding {
            table: store.add(format!("{name}.table"), normal_init(rng, vocab, d, (d as f64).powf(-0.5))),
            d,
        }
    }

    /// Embeds packed `ids`; positions restart at 0 in every segment.
    pub fn forward(&self, t: &mut Tape, ids: &[usize], segments: &[Range<usize>], ctx: &mut Ctx) -> Var {
        let table = t.param(self.table);
        let x = t.gather(table, ids);
        let x = t.scale(x, (self.d as f64).sqrt());
        let longest = segments.iter().map(|s| s.len()).max().unwrap_or(0);
        let pe = positional_table(longest, self.d);
        let mut pos = Array2::zeros((ids.len(), self.d));
        for seg in segments {
            for (p, r) in seg.clone().enumerate() {
                pos.row_mut(r).assign(&pe.row(p));
            }
        }
        let pos = t.constant(pos);
        let x = t.add(x, pos);
        ctx.dropout(t, x)
    }
}

/// Consecutive row ranges for segments of the given lengths.
pub fn segments_of(lengths: impl IntoIterator<Item = usize>) -> Vec<Range<usize>> {
    let mut start = 0;
    lengths
        .into_iter()
        .map(|n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}
