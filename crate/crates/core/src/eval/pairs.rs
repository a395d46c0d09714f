//! Perturbation pairs: sentences decoded from a prior sample and from copies
//! with a single latent variable redrawn.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::corpus::Vocab;
use crate::gaussian;
use crate::model::Model;
use crate::roles::{extract_roles, ConlluSentence, ParsedSentence, RoleSet, RoleSpans};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordRole {
    Orig,
    Pert,
}

/// One generated sentence. Originals have `i = None` and id `<l>`;
/// perturbations carry the redrawn variable and id `<l>-<i>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub l: usize,
    pub i: Option<usize>,
    pub role: RecordRole,
    pub text: String,
}

impl PairRecord {
    pub fn orig(l: usize, text: String) -> Self {
        PairRecord {
            pair_id: format!("{l}"),
            l,
            i: None,
            role: RecordRole::Orig,
            text,
        }
    }

    pub fn pert(l: usize, i: usize, text: String) -> Self {
        PairRecord {
            pair_id: format!("{l}-{i}"),
            l,
            i: Some(i),
            role: RecordRole::Pert,
            text,
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        self.text.split_whitespace().map(String::from).collect()
    }
}

/// Copy of `levels` where row `i` of the decoder-level latent is redrawn:
/// from `N(0, I)` for a flat prior, from `p(z^L | z^{L-1})` otherwise.
pub(crate) fn redraw(model: &Model, levels: &[Matrix], i: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let last = levels.len() - 1;
    let mut z = levels[last].clone();
    let eps = gaussian::standard_normal(rng, 1, z.ncols());
    let row = if last == 0 {
        eps.row(0).to_owned()
    } else {
        let (mu, sigma) = model.hier_prior_step(last, &levels[last - 1])?;
        &mu.row(i) + &(&sigma.row(i) * &eps.row(0))
    };
    z.row_mut(i).assign(&row);
    Ok(z)
}

/// Samples `t_dec` prior vectors and, for each, `n_vars` single-variable
/// perturbations, all greedily decoded. Records come grouped by `l`:
/// original first, then variables in order.
pub fn generate_perturbation_pairs(model: &Model, vocab: &Vocab, t_dec: usize, seed: u64) -> Result<Vec<PairRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_vars();
    let max_len = model.config().max_len;
    let mut out = Vec::with_capacity(t_dec * (n + 1));
    // decode a few vectors at a time to keep the batch near the inference chunk
    let group = (64 / (n + 1)).max(1);
    let mut l = 0;
    while l < t_dec {
        let take = group.min(t_dec - l);
        let mut zs = Vec::with_capacity(take * (n + 1));
        for _ in 0..take {
            let levels = model.sample_prior(&mut rng);
            let base = levels.last().unwrap().clone();
            let perts = (0..n).map(|i| redraw(model, &levels, i, &mut rng)).collect::<Result<Vec<_>>>()?;
            zs.push(base);
            zs.extend(perts);
        }
        let refs: Vec<&Matrix> = zs.iter().collect();
        let decoded = model.greedy_decode(&refs, max_len);
        for (k, ids) in decoded.iter().enumerate() {
            let (ll, slot) = (l + k / (n + 1), k % (n + 1));
            let text = vocab.decode(ids).join(" ");
            out.push(match slot {
                0 => PairRecord::orig(ll, text),
                s => PairRecord::pert(ll, s - 1, text),
            });
        }
        l += take;
    }
    Ok(out)
}

pub fn write_pairs(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Labels every non-empty record with `annotate`, producing CoNLL-U
/// sentences keyed by `pair_id`. Empty decodes are left unparsed.
pub fn annotate_records(records: &[PairRecord], annotate: impl Fn(&[String]) -> ParsedSentence) -> Vec<ConlluSentence> {
    records
        .iter()
        .filter(|r| !r.text.trim().is_empty())
        .map(|r| ConlluSentence {
            meta: vec![("pair_id".into(), r.pair_id.clone()), ("text".into(), r.text.clone())],
            parse: annotate(&r.tokens()),
        })
        .collect()
}

/// Role spans of each parsed sentence, keyed by its `pair_id` comment.
pub fn spans_by_pair_id(parsed: &[ConlluSentence], roles: &RoleSet) -> Result<HashMap<String, RoleSpans>> {
    let mut out = HashMap::with_capacity(parsed.len());
    for (k, s) in parsed.iter().enumerate() {
        let id = s
            .meta_value("pair_id")
            .ok_or_else(|| Error::Config(format!("parsed sentence {} has no pair_id comment", k + 1)))?;
        if out.insert(id.to_string(), extract_roles(&s.parse, roles)).is_some() {
            return Err(Error::Config(format!("duplicate pair_id `{id}`")));
        }
    }
    Ok(out)
}

/// An original/perturbed pair; `None` marks a sentence without a parse.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPair {
    pub l: usize,
    pub i: usize,
    pub orig: Option<RoleSpans>,
    pub pert: Option<RoleSpans>,
}

impl ParsedPair {
    pub fn is_parsed(&self) -> bool {
        self.orig.is_some() && self.pert.is_some()
    }
}

/// Joins each perturbation with its original.
pub fn assemble_pairs(records: &[PairRecord], spans: &HashMap<String, RoleSpans>) -> Result<Vec<ParsedPair>> {
    let origs: HashMap<usize, &PairRecord> = records
        .iter()
        .filter(|r| r.role == RecordRole::Orig)
        .map(|r| (r.l, r))
        .collect();
    records
        .iter()
        .filter(|r| r.role == RecordRole::Pert)
        .map(|r| {
            let i = r
                .i
                .ok_or_else(|| Error::Config(format!("perturbed record `{}` has no variable index", r.pair_id)))?;
            let o = origs
                .get(&r.l)
                .ok_or_else(|| Error::Config(format!("no original sentence for vector {}", r.l)))?;
            Ok(ParsedPair {
                l: r.l,
                i,
                orig: spans.get(&o.pair_id).cloned(),
                pert: spans.get(&r.pair_id).cloned(),
            })
        })
        .collect()
}
