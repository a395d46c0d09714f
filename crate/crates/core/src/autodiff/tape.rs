use std::collections::HashMap;
use std::ops::Range;
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::{Grads, Matrix, ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row segments pairing each query sequence with the key sequence it may
/// attend to. With `causal`, query row `i` of a segment sees key rows `0..=i`
/// of the matching key segment (query and key segments then have equal length).
#[derive(Debug, Clone, PartialEq)]
pub struct AttnLayout {
    pub queries: Vec<Range<usize>>,
    pub keys: Vec<Range<usize>>,
    pub causal: bool,
}

impl AttnLayout {
    pub fn new(queries: Vec<Range<usize>>, keys: Vec<Range<usize>>, causal: bool) -> Self {
        assert_eq!(queries.len(), keys.len(), "segment count mismatch");
        if causal {
            for (q, k) in queries.iter().zip(&keys) {
                assert_eq!(q.len(), k.len(), "causal segments must align");
            }
        }
        AttnLayout {
            queries,
            keys,
            causal,
        }
    }

    /// Self-attention within each segment.
    pub fn within(segments: &[Range<usize>], causal: bool) -> Self {
        Self::new(segments.to_vec(), segments.to_vec(), causal)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Gelu(Var),
    SoftplusFloor(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: Rc<AttnLayout>,
        // [segment * heads + head], each (q_len x k_len)
        probs: Vec<Matrix>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    TileRows(Var, usize),
    ConcatCols(Vec<Var>),
    SegmentMean(Var, Vec<Range<usize>>),
    GatherRows {
        sources: Vec<Var>,
        index: Vec<(usize, usize)>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
    GaussianKl {
        mu_q: Var,
        sigma_q: Var,
        prior: Option<(Var, Var)>,
    },
}

struct Node {
    value: Option<Matrix>,
    param: Option<ParamId>,
    op: Op,
    needs_grad: bool,
}

/// Records one forward pass over parameters borrowed from a [`ParamStore`].
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(512),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match node.param {
            Some(p) => self.store.get(p),
            None => node.value.as_ref().expect("non-param node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// Attention probabilities recorded by an [`Tape::attention`] node,
    /// indexed `[segment * heads + head]`.
    pub fn attention_probs(&self, v: Var) -> Option<(&[Matrix], usize)> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, heads, .. } => Some((probs, *heads)),
            _ => None,
        }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            param: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            param: Some(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// `x + bias` with a `1 x n` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let out = self.value(x) + self.value(bias);
        let ng = self.ng(x) || self.ng(bias);
        self.push(out, Op::AddRow(x, bias), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x) * c;
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    /// Elementwise product with a constant (dropout masks, noise).
    pub fn mul_const(&mut self, x: Var, c: Matrix) -> Var {
        let out = self.value(x) * &c;
        let ng = self.ng(x);
        self.push(out, Op::MulConst(x, c), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| {
            let u = GELU_C * (v + GELU_A * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        });
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// `max(softplus(x), floor)`.
    pub fn softplus_floor(&mut self, x: Var, floor: f64) -> Var {
        let out = self.value(x).mapv(|v| softplus(v).max(floor));
        let ng = self.ng(x);
        self.push(out, Op::SoftplusFloor(x, floor), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (c, v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * inv;
            }
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// `q`, `k`, `v`. Heads split the columns evenly.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: Rc<AttnLayout>,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let width = qv.ncols();
        assert_eq!(width % heads, 0, "width not divisible by heads");
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((qv.nrows(), vv.ncols()));
        let mut probs = Vec::with_capacity(layout.queries.len() * heads);
        for (qs, ks) in layout.queries.iter().zip(&layout.keys) {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = qv.slice(s![qs.clone(), cols.clone()]);
                let kh = kv.slice(s![ks.clone(), cols.clone()]);
                let vh = vv.slice(s![ks.clone(), cols.clone()]);
                let mut scores = qh.dot(&kh.t()) * scale;
                for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
                    let visible = if layout.causal { i + 1 } else { row.len() };
                    softmax_prefix(row.as_slice_mut().expect("contiguous"), visible);
                }
                out.slice_mut(s![qs.clone(), cols]).assign(&scores.dot(&vh));
                probs.push(scores);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
            },
            ng,
        )
    }

    /// Embedding lookup: row `r` of the output is `table[ids[r]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        let ng = self.ng(table);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// Stack `times` copies of `x` vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let n = xv.nrows();
        let mut out = Array2::zeros((n * times, xv.ncols()));
        for t in 0..times {
            out.slice_mut(s![t * n..(t + 1) * n, ..]).assign(xv);
        }
        let ng = self.ng(x);
        self.push(out, Op::TileRows(x, times), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).nrows();
        let width: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut out = Array2::zeros((rows, width));
        let mut c = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.nrows(), rows, "concat_cols row mismatch");
            out.slice_mut(s![.., c..c + pv.ncols()]).assign(pv);
            c += pv.ncols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Mean over the rows of each segment; one output row per segment.
    pub fn segment_mean(&mut self, x: Var, segments: &[Range<usize>]) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((segments.len(), xv.ncols()));
        for (b, seg) in segments.iter().enumerate() {
            let m = xv
                .slice(s![seg.clone(), ..])
                .mean_axis(Axis(0))
                .expect("empty segment");
            out.row_mut(b).assign(&m);
        }
        let ng = self.ng(x);
        self.push(out, Op::SegmentMean(x, segments.to_vec()), ng)
    }

    /// Build a matrix row by row: output row `r` copies row `index[r].1` of
    /// `sources[index[r].0]`.
    pub fn gather_rows(&mut self, sources: &[Var], index: &[(usize, usize)]) -> Var {
        let width = self.value(sources[0]).ncols();
        let mut out = Array2::zeros((index.len(), width));
        for (r, &(src, row)) in index.iter().enumerate() {
            out.row_mut(r).assign(&self.value(sources[src]).row(row));
        }
        let ng = sources.iter().any(|&s| self.ng(s));
        self.push(
            out,
            Op::GatherRows {
                sources: sources.to_vec(),
                index: index.to_vec(),
            },
            ng,
        )
    }

    /// `-sum_r log softmax(logits[r])[targets[r]]`, a `1 x 1` result.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "one target per logit row");
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total -= row[t] - lse;
            row.mapv_inplace(|v| (v - lse).exp());
        }
        let ng = self.ng(logits);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Closed-form `KL[N(mu_q, sigma_q) || prior]` summed over all entries.
    /// `prior = None` means the standard normal.
    pub fn gaussian_kl(&mut self, mu_q: Var, sigma_q: Var, prior: Option<(Var, Var)>) -> Var {
        let (mq, sq) = (self.value(mu_q), self.value(sigma_q));
        let total = match prior {
            None => Zip::from(mq)
                .and(sq)
                .fold(0.0, |acc, &m, &s| acc + kl_term(m, s, 0.0, 1.0)),
            Some((mp, sp)) => Zip::from(mq)
                .and(sq)
                .and(self.value(mp))
                .and(self.value(sp))
                .fold(0.0, |acc, &m, &s, &m2, &s2| acc + kl_term(m, s, m2, s2)),
        };
        let ng = self.ng(mu_q)
            || self.ng(sigma_q)
            || prior.is_some_and(|(a, b)| self.ng(a) || self.ng(b));
        self.push(
            Array2::from_elem((1, 1), total),
            Op::GaussianKl {
                mu_q,
                sigma_q,
                prior,
            },
            ng,
        )
    }

    /// Reverse pass from a `1 x 1` root. Returns parameter gradients.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if node.param.is_some() {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }

        let mut out = Grads::new(self.store.len());
        for (&id, &v) in &self.param_vars {
            if let Some(g) = grads.get_mut(v.0).and_then(Option::take) {
                out.set(id, g);
            }
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                self.acc(grads, *x, g.clone());
                if self.ng(*bias) {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.acc(grads, *bias, db);
                }
            }
            Op::Scale(x, c) => self.acc(grads, *x, g * *c),
            Op::MulConst(x, c) => self.acc(grads, *x, g * c),
            Op::Gelu(x) => {
                let mut dx = self.value(*x).mapv(|v| {
                    let u = GELU_C * (v + GELU_A * v * v * v);
                    let t = u.tanh();
                    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
                });
                dx *= g;
                self.acc(grads, *x, dx);
            }
            Op::SoftplusFloor(x, floor) => {
                let out = node.value.as_ref().expect("value");
                let mut dx = self.value(*x).mapv(sigmoid);
                Zip::from(&mut dx).and(out).and(g).for_each(|d, &o, &gg| {
                    *d = if o > *floor { *d * gg } else { 0.0 };
                });
                self.acc(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma);
                if self.ng(*gamma) {
                    let dg = (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.acc(grads, *gamma, dg);
                }
                if self.ng(*beta) {
                    self.acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    let n = xhat.ncols() as f64;
                    let dxhat = g * gam;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        let inv = inv_std[r];
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = inv / n * (n * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let dh = qv.ncols() / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Array2::zeros(qv.dim());
                let mut dk = Array2::zeros(kv.dim());
                let mut dv = Array2::zeros(vv.dim());
                for (si, (qs, ks)) in layout.queries.iter().zip(&layout.keys).enumerate() {
                    for h in 0..*heads {
                        let cols = h * dh..(h + 1) * dh;
                        let p = &probs[si * heads + h];
                        let go = g.slice(s![qs.clone(), cols.clone()]);
                        let qh = qv.slice(s![qs.clone(), cols.clone()]);
                        let kh = kv.slice(s![ks.clone(), cols.clone()]);
                        let vh = vv.slice(s![ks.clone(), cols.clone()]);
                        let mut dv_slice = dv.slice_mut(s![ks.clone(), cols.clone()]);
                        dv_slice += &p.t().dot(&go);
                        let dp = go.dot(&vh.t());
                        let mut ds = Array2::zeros(p.dim());
                        for i in 0..p.nrows() {
                            let dot: f64 = p.row(i).dot(&dp.row(i));
                            for j in 0..p.ncols() {
                                ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                            }
                        }
                        let mut dq_slice = dq.slice_mut(s![qs.clone(), cols.clone()]);
                        dq_slice += &ds.dot(&kh);
                        let mut dk_slice = dk.slice_mut(s![ks.clone(), cols]);
                        dk_slice += &ds.t().dot(&qh);
                    }
                }
                self.acc(grads, *q, dq);
                self.acc(grads, *k, dk);
                self.acc(grads, *v, dv);
            }
            Op::Gather { table, ids } => {
                if self.ng(*table) {
                    let mut dt = Array2::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = dt.row_mut(id);
                        row += &g.row(r);
                    }
                    self.acc(grads, *table, dt);
                }
            }
            Op::TileRows(x, times) => {
                let n = self.value(*x).nrows();
                let mut dx = Array2::zeros(self.value(*x).dim());
                for t in 0..*times {
                    dx += &g.slice(s![t * n..(t + 1) * n, ..]);
                }
                self.acc(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.ng(p) {
                        self.acc(grads, p, g.slice(s![.., c..c + w]).to_owned());
                    }
                    c += w;
                }
            }
            Op::SegmentMean(x, segments) => {
                let mut dx = Array2::zeros(self.value(*x).dim());
                for (b, seg) in segments.iter().enumerate() {
                    let share = g.row(b).mapv(|v| v / seg.len() as f64);
                    for r in seg.clone() {
                        dx.row_mut(r).assign(&share);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::GatherRows { sources, index } => {
                let mut ds: Vec<Option<Matrix>> = sources
                    .iter()
                    .map(|&s| self.ng(s).then(|| Array2::zeros(self.value(s).dim())))
                    .collect();
                for (r, &(src, row)) in index.iter().enumerate() {
                    if let Some(d) = &mut ds[src] {
                        let mut dst = d.row_mut(row);
                        dst += &g.row(r);
                    }
                }
                for (&s, d) in sources.iter().zip(ds) {
                    if let Some(d) = d {
                        self.acc(grads, s, d);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d[[r, t]] -= 1.0;
                }
                d *= g[[0, 0]];
                self.acc(grads, *logits, d);
            }
            Op::GaussianKl {
                mu_q,
                sigma_q,
                prior,
            } => {
                let gs = g[[0, 0]];
                let (mq, sq) = (self.value(*mu_q), self.value(*sigma_q));
                let (mp, sp) = match prior {
                    Some((a, b)) => (self.value(*a).clone(), self.value(*b).clone()),
                    None => (Array2::zeros(mq.dim()), Array2::ones(mq.dim())),
                };
                let diff = mq - &mp;
                let var_p = sp.mapv(|v| v * v);
                let dmu = &diff / &var_p * gs;
                let dsig = (sq.mapv(|v| -1.0 / v) + sq / &var_p) * gs;
                if let Some((a, b)) = prior {
                    self.acc(grads, *a, -&dmu);
                    let sq2 = sq.mapv(|v| v * v);
                    let dsp = (sp.mapv(|v| 1.0 / v) - (sq2 + &diff * &diff) / (&var_p * &sp)) * gs;
                    self.acc(grads, *b, dsp);
                }
                self.acc(grads, *mu_q, dmu);
                self.acc(grads, *sigma_q, dsig);
            }
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// KL between scalar Gaussians `N(m, s^2) || N(m2, s2^2)`.
pub(crate) fn kl_term(m: f64, s: f64, m2: f64, s2: f64) -> f64 {
    let d = m - m2;
    (s2 / s).ln() + (s * s + d * d) / (2.0 * s2 * s2) - 0.5
}

/// In-place softmax over `row[..visible]`; entries past `visible` become 0.
fn softmax_prefix(row: &mut [f64], visible: usize) {
    let max = row[..visible]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in &mut row[..visible] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut row[..visible] {
        *v /= sum;
    }
    for v in &mut row[visible..] {
        *v = 0.0;
    }
}
