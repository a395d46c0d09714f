//! Influence matrices between syntactic roles and latent variables, and the
//! disentanglement scores derived from them.

mod influence;
mod pairs;
mod ppl;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use influence::{collect_traces, dec_influence, enc_influence, outcome_tally, position_baseline, struct_influence, OutcomeTally};
pub(crate) use pairs::redraw;
pub use pairs::{
    annotate_records, assemble_pairs, generate_perturbation_pairs, read_pairs, spans_by_pair_id, write_pairs,
    ParsedPair, PairRecord, RecordRole,
};
pub use ppl::{ppl_upper_bound, PplBound};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceKind {
    Dec,
    Enc,
    Struct,
    Pb,
}

impl fmt::Display for InfluenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InfluenceKind::Dec => "dec",
            InfluenceKind::Enc => "enc",
            InfluenceKind::Struct => "struct",
            InfluenceKind::Pb => "pb",
        })
    }
}

/// `|R| x N_V` matrix of empirical probabilities, stored as integer counts.
/// A cell with a zero denominator is missing rather than zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    pub kind: InfluenceKind,
    pub roles: Vec<String>,
    pub labels: Vec<String>,
    pub hits: Vec<Vec<usize>>,
    pub counts: Vec<Vec<usize>>,
    /// Pairs or sentences left out entirely (unparsed, mismatched).
    pub excluded: usize,
}

impl InfluenceMatrix {
    pub fn zeros(kind: InfluenceKind, roles: Vec<String>, labels: Vec<String>) -> Self {
        let (r, c) = (roles.len(), labels.len());
        InfluenceMatrix {
            kind,
            roles,
            labels,
            hits: vec![vec![0; c]; r],
            counts: vec![vec![0; c]; r],
            excluded: 0,
        }
    }

    pub fn n_roles(&self) -> usize {
        self.roles.len()
    }

    pub fn n_vars(&self) -> usize {
        self.labels.len()
    }

    pub fn value(&self, r: usize, i: usize) -> Option<f64> {
        match self.counts[r][i] {
            0 => None,
            n => Some(self.hits[r][i] as f64 / n as f64),
        }
    }

    pub fn row(&self, r: usize) -> Vec<Option<f64>> {
        (0..self.n_vars()).map(|i| self.value(r, i)).collect()
    }

    pub fn values(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.n_roles()).map(|r| self.row(r)).collect()
    }

    pub fn role_index(&self, role: &str) -> Option<usize> {
        self.roles.iter().position(|r| r == role)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

pub fn var_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("z{i}")).collect()
}

/// Top-1 minus top-2 influence of one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleDelta {
    pub role: String,
    pub delta: f64,
    pub m1: usize,
    pub m2: usize,
}

/// Lowest index of the largest value among present cells, skipping `skip`.
fn argmax_present(row: &[Option<f64>], skip: Option<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in row.iter().enumerate() {
        let Some(v) = v else { continue };
        if Some(i) == skip {
            continue;
        }
        if best.is_none_or(|b| *v > row[b].unwrap()) {
            best = Some(i);
        }
    }
    best
}

/// Per-role `(delta, m1, m2)`. Rows with no present cell are skipped; a row
/// with exactly one present cell is an error.
pub fn delta_gamma(m: &InfluenceMatrix) -> Result<Vec<RoleDelta>> {
    if m.n_vars() < 2 {
        return Err(Error::Metric(format!("need at least 2 variables, have {}", m.n_vars())));
    }
    let mut out = Vec::new();
    for r in 0..m.n_roles() {
        let row = m.row(r);
        let present = row.iter().filter(|v| v.is_some()).count();
        if present == 0 {
            continue;
        }
        if present < 2 {
            return Err(Error::Metric(format!(
                "role {} has {present} measured variable(s); need 2",
                m.roles[r]
            )));
        }
        let m1 = argmax_present(&row, None).expect("present cells");
        let m2 = argmax_present(&row, Some(m1)).expect("two present cells");
        out.push(RoleDelta {
            role: m.roles[r].clone(),
            delta: row[m1].unwrap() - row[m2].unwrap(),
            m1,
            m2,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementReport {
    pub kind: InfluenceKind,
    pub per_role: Vec<RoleDelta>,
    /// Sum of per-role deltas.
    pub total: f64,
    /// Number of distinct `m1` values.
    pub n_distinct: usize,
}

impl DisentanglementReport {
    pub fn from_deltas(kind: InfluenceKind, per_role: Vec<RoleDelta>) -> Self {
        let total = per_role.iter().fold(0.0, |acc, d| acc + d.delta);
        let mut m1: Vec<usize> = per_role.iter().map(|d| d.m1).collect();
        m1.sort_unstable();
        m1.dedup();
        DisentanglementReport {
            kind,
            per_role,
            total,
            n_distinct: m1.len(),
        }
    }

    pub fn delta(&self, role: &str) -> Option<&RoleDelta> {
        self.per_role.iter().find(|d| d.role == role)
    }
}

pub fn totals_and_counts(m: &InfluenceMatrix) -> Result<DisentanglementReport> {
    Ok(DisentanglementReport::from_deltas(m.kind, delta_gamma(m)?))
}

/// Sibling path `<stem>_counts.csv` holding the denominators.
pub fn counts_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("heatmap");
    path.with_file_name(format!("{stem}_counts.csv"))
}

/// Writes values (6 decimals, `NA` for missing cells) and a companion
/// counts file.
pub fn emit_heatmap(m: &InfluenceMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let write = |p: &Path, cell: &dyn Fn(usize, usize) -> String| -> Result<()> {
        let f = File::create(p).map_err(|e| Error::io(p, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(p, e);
        writeln!(w, "role,{}", m.labels.join(",")).map_err(io)?;
        for (r, role) in m.roles.iter().enumerate() {
            let cells: Vec<String> = (0..m.n_vars()).map(|i| cell(r, i)).collect();
            writeln!(w, "{role},{}", cells.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    };
    write(path, &|r, i| match m.value(r, i) {
        Some(v) => format!("{v:.6}"),
        None => "NA".into(),
    })?;
    write(&counts_path(path), &|r, i| m.counts[r][i].to_string())
}

/// Parsed heatmap CSV: labels, role names and cell values.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub labels: Vec<String>,
    pub roles: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn read_heatmap(path: impl AsRef<Path>) -> Result<Heatmap> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let labels: Vec<String> = header.split(',').skip(1).map(String::from).collect();
    let mut roles = Vec::new();
    let mut values = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut cells = line.split(',');
        roles.push(cells.next().unwrap_or_default().to_string());
        let row: Vec<Option<f64>> = cells
            .map(|c| match c {
                "NA" => Ok(None),
                c => c.parse().map(Some).map_err(|_| parse_err(n + 2, format!("bad value `{c}`"))),
            })
            .collect::<Result<_>>()?;
        if row.len() != labels.len() {
            return Err(parse_err(n + 2, format!("expected {} cells, found {}", labels.len(), row.len())));
        }
        values.push(row);
    }
    Ok(Heatmap { labels, roles, values })
}

/// Mean and sample standard deviation (`n - 1`; zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `mean(std)` with two decimals.
pub fn format_mean_std(xs: &[f64]) -> String {
    if xs.is_empty() {
        return "-".into();
    }
    let (m, s) = mean_std(xs);
    format!("{m:.2}({s:.2})")
}
