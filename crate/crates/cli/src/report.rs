//! Aggregates per-seed disentanglement scores into a mean(std) table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use advae::eval::{format_mean_std, mean_std, totals_and_counts, DisentanglementReport, InfluenceMatrix};

use crate::commands::{model_label, Run};

/// Scores of one model configuration over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    /// `None` for baselines without a KL weight.
    pub beta: Option<f64>,
    pub seeds: Vec<u64>,
    pub enc: Vec<DisentanglementReport>,
    pub dec: Vec<DisentanglementReport>,
}

impl ReportRow {
    fn column(reports: &[DisentanglementReport], f: impl Fn(&DisentanglementReport) -> f64) -> Vec<f64> {
        reports.iter().map(f).collect()
    }

    pub fn d_enc(&self) -> Vec<f64> {
        Self::column(&self.enc, |r| r.total)
    }

    pub fn n_enc(&self) -> Vec<f64> {
        Self::column(&self.enc, |r| r.n_distinct as f64)
    }

    pub fn d_dec(&self) -> Vec<f64> {
        Self::column(&self.dec, |r| r.total)
    }

    pub fn n_dec(&self) -> Vec<f64> {
        Self::column(&self.dec, |r| r.n_distinct as f64)
    }

    /// Per-role ΔΓ mean and std, in the order of the first report.
    pub fn role_deltas(reports: &[DisentanglementReport]) -> Vec<(String, f64, f64)> {
        let Some(first) = reports.first() else { return Vec::new() };
        first
            .per_role
            .iter()
            .map(|d| {
                let xs: Vec<f64> = reports.iter().filter_map(|r| r.delta(&d.role)).map(|x| x.delta).collect();
                let (m, s) = mean_std(&xs);
                (d.role.clone(), m, s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

fn cell(xs: &[f64], single: bool) -> String {
    match xs {
        [] => "-".into(),
        // a single deterministic value has no spread
        [x] if single => format!("{x:.2}(-)"),
        _ => format_mean_std(xs),
    }
}

impl Report {
    /// Model | β | 𝔻_enc | N_enc | 𝔻_dec | N_dec, cells as mean(std).
    pub fn table(&self) -> String {
        let header = ["Model", "beta", "D_enc", "N_enc", "D_dec", "N_dec"];
        let mut lines: Vec<[String; 6]> = vec![header.map(String::from)];
        for r in &self.rows {
            let single = r.beta.is_none();
            lines.push([
                r.model.clone(),
                r.beta.map_or("-".into(), |b| format!("{b}")),
                cell(&r.d_enc(), single),
                cell(&r.n_enc(), single),
                cell(&r.d_dec(), single),
                cell(&r.n_dec(), single),
            ]);
        }
        let widths: Vec<usize> = (0..6).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap()).collect();
        let mut out = String::new();
        for (k, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
            if k == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
            }
        }
        out
    }
}

fn load_report(path: &Path) -> Result<Option<DisentanglementReport>> {
    if !path.exists() {
        return Ok(None);
    }
    let m = InfluenceMatrix::load_json(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Some(totals_and_counts(&m)?))
}

/// One row per run directory from its seeds' `enc.json`/`dec.json`, plus a
/// position-baseline row when the first run has `pb.json`.
pub fn collect(runs: &[Run]) -> Result<Report> {
    let mut rows = Vec::new();
    for run in runs {
        let mut row = ReportRow {
            model: model_label(run),
            beta: Some(run.cfg.train.beta_final),
            seeds: Vec::new(),
            enc: Vec::new(),
            dec: Vec::new(),
        };
        for &seed in &run.cfg.seeds {
            let dir = run.seed_dir(seed);
            let enc = load_report(&dir.join("enc.json"))?;
            let dec = load_report(&dir.join("dec.json"))?;
            if enc.is_none() && dec.is_none() {
                log::warn!("{}: no scores, skipped", dir.display());
                continue;
            }
            row.seeds.push(seed);
            row.enc.extend(enc);
            row.dec.extend(dec);
        }
        rows.push(row);
    }
    if let Some(run) = runs.first() {
        if let Some(pb) = load_report(&run.dir.join("pb.json"))? {
            rows.insert(
                0,
                ReportRow {
                    model: "PB".into(),
                    beta: None,
                    seeds: Vec::new(),
                    enc: vec![pb],
                    dec: Vec::new(),
                },
            );
        }
    }
    Ok(Report { rows })
}

/// Writes `report.txt` and `report.json` into `out`.
pub fn write(report: &Report, out: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let txt = out.join("report.txt");
    let json = out.join("report.json");
    std::fs::write(&txt, report.table()).with_context(|| format!("writing {}", txt.display()))?;
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    std::fs::write(&json, s).with_context(|| format!("writing {}", json.display()))?;
    Ok((txt, json))
}
