use super::{var_labels, InfluenceKind, InfluenceMatrix, ParsedPair};
use crate::corpus::Vocab;
use crate::model::{AttentionTrace, LayerMode, Model};
use crate::roles::{classify_pair, extract_roles, role_token_indices, PairOutcome, ParsedSentence, RoleSet};
use crate::{Error, Result};

/// Outcome counts of one (role, variable) cell over parsed pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeTally {
    pub changed: usize,
    pub unchanged: usize,
    pub structural: usize,
    pub both_absent: usize,
}

impl OutcomeTally {
    pub fn total(&self) -> usize {
        self.changed + self.unchanged + self.structural + self.both_absent
    }
}

/// `[role][variable]` outcome counts plus the number of unparsed pairs.
pub fn outcome_tally(pairs: &[ParsedPair], roles: &RoleSet, n_vars: usize) -> Result<(Vec<Vec<OutcomeTally>>, usize)> {
    let mut tally = vec![vec![OutcomeTally::default(); n_vars]; roles.len()];
    let mut unparsed = 0;
    for p in pairs {
        if p.i >= n_vars {
            return Err(Error::Shape(format!("pair perturbs variable {} of {n_vars}", p.i)));
        }
        let (Some(o), Some(q)) = (&p.orig, &p.pert) else {
            unparsed += 1;
            continue;
        };
        for (r, role) in roles.roles().iter().enumerate() {
            let cell = &mut tally[r][p.i];
            match classify_pair(o, q, &role.name) {
                PairOutcome::Changed => cell.changed += 1,
                PairOutcome::Unchanged => cell.unchanged += 1,
                PairOutcome::Structural => cell.structural += 1,
                PairOutcome::BothAbsent => cell.both_absent += 1,
            }
        }
    }
    Ok((tally, unparsed))
}

/// Probability that redrawing variable `i` changes the realization of role
/// `r`, over pairs where the role is present on both sides.
pub fn dec_influence(pairs: &[ParsedPair], roles: &RoleSet, n_vars: usize) -> Result<InfluenceMatrix> {
    let (tally, unparsed) = outcome_tally(pairs, roles, n_vars)?;
    let mut m = InfluenceMatrix::zeros(InfluenceKind::Dec, roles.names(), var_labels(n_vars));
    for (r, row) in tally.iter().enumerate() {
        for (i, t) in row.iter().enumerate() {
            m.hits[r][i] = t.changed;
            m.counts[r][i] = t.changed + t.unchanged;
        }
    }
    m.excluded = unparsed;
    Ok(m)
}

/// Probability that redrawing variable `i` makes role `r` appear or
/// disappear, over all parsed pairs.
pub fn struct_influence(pairs: &[ParsedPair], roles: &RoleSet, n_vars: usize) -> Result<InfluenceMatrix> {
    let (tally, unparsed) = outcome_tally(pairs, roles, n_vars)?;
    let mut m = InfluenceMatrix::zeros(InfluenceKind::Struct, roles.names(), var_labels(n_vars));
    for (r, row) in tally.iter().enumerate() {
        for (i, t) in row.iter().enumerate() {
            m.hits[r][i] = t.structural;
            m.counts[r][i] = t.total();
        }
    }
    m.excluded = unparsed;
    Ok(m)
}

/// Lowest index of the row maximum.
fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Probability that a variable's (averaged) attention peaks on a token of
/// role `r`, over sentences where `r` is present.
pub fn enc_influence(items: &[(&ParsedSentence, &AttentionTrace)], roles: &RoleSet, mode: LayerMode) -> Result<InfluenceMatrix> {
    let n_vars = items
        .first()
        .and_then(|(_, t)| t.weights.first())
        .and_then(|h| h.first())
        .map(|m| m.nrows())
        .ok_or_else(|| Error::Metric("no encoder attention to score".into()))?;
    let mut m = InfluenceMatrix::zeros(InfluenceKind::Enc, roles.names(), var_labels(n_vars));
    for (k, (parse, trace)) in items.iter().enumerate() {
        let att = trace.averaged(mode)?;
        if att.ncols() != parse.len() || att.nrows() != n_vars {
            return Err(Error::Shape(format!(
                "sentence {k}: attention is {}x{}, expected {n_vars}x{}",
                att.nrows(),
                att.ncols(),
                parse.len()
            )));
        }
        let peaks: Vec<usize> = att.rows().into_iter().map(argmax).collect();
        let spans = extract_roles(parse, roles);
        for (r, role) in roles.roles().iter().enumerate() {
            let idx = role_token_indices(&spans, &role.name);
            if idx.is_empty() {
                continue;
            }
            for (i, p) in peaks.iter().enumerate() {
                m.counts[r][i] += 1;
                m.hits[r][i] += usize::from(idx.contains(p));
            }
        }
    }
    Ok(m)
}

/// Encoder attention traces for parsed sentences, tokens mapped through
/// `vocab` (unknown words become UNK).
pub fn collect_traces(model: &Model, vocab: &Vocab, parses: &[ParsedSentence]) -> Result<Vec<AttentionTrace>> {
    let ids: Vec<Vec<usize>> = parses.iter().map(|p| vocab.encode(&p.tokens)).collect();
    let rows: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
    model
        .posterior(&rows)?
        .into_iter()
        .map(|p| {
            p.trace
                .ok_or_else(|| Error::Config("encoder attention is only available for advae models".into()))
        })
        .collect()
}

/// Positions as pseudo-variables: cell `(r, p)` is the fraction of
/// sentences containing `r` whose realization covers position `p`.
pub fn position_baseline(parses: &[ParsedSentence], roles: &RoleSet, max_len: usize) -> InfluenceMatrix {
    let labels = (0..max_len).map(|p| format!("p{p}")).collect();
    let mut m = InfluenceMatrix::zeros(InfluenceKind::Pb, roles.names(), labels);
    for parse in parses {
        let spans = extract_roles(parse, roles);
        for (r, role) in roles.roles().iter().enumerate() {
            let idx = role_token_indices(&spans, &role.name);
            if idx.is_empty() {
                continue;
            }
            for p in 0..max_len {
                m.counts[r][p] += 1;
                m.hits[r][p] += usize::from(idx.contains(&p));
            }
        }
    }
    m
}
