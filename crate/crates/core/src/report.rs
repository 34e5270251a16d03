//! Study tables (CSV and aligned text) and the single-fit report.

use serde::Serialize;

use crate::ci::{IntervalKind, Parameter};
use crate::dataset::{AlignmentReport, QcReport};
use crate::error::{Error, Result};
use crate::mcstudy::{McSummary, STUDY_PARAMETERS};
use crate::reml::SolveDiagnostics;
use crate::varest::ExponentMode;

/// Significant digits written for every floating-point table cell.
pub const TABLE_DIGITS: i32 = 6;

/// Fixed-decimal rendering with [`TABLE_DIGITS`] significant digits.
pub fn format_sig(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return format!("{:.*}", (TABLE_DIGITS - 1) as usize, 0.0);
    }
    let exponent = x.abs().log10().floor() as i32;
    let mut decimals = (TABLE_DIGITS - 1 - exponent).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit (9.999996 -> 10.00000).
    let digits = s.trim_start_matches('-').trim_start_matches(['0', '.']).replace('.', "");
    if digits.len() > TABLE_DIGITS as usize && decimals > 0 {
        decimals -= 1;
        return format!("{x:.decimals$}");
    }
    s
}

/// One line of the study table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub scenario: usize,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub a: f64,
    pub b: f64,
    pub parameter: String,
    pub pct_rb: f64,
    pub var_theta: f64,
    pub mean_v: f64,
    pub sd_v: f64,
    pub normal: Vec<f64>,
    pub truncated: Vec<f64>,
}

fn level_label(lambda: f64) -> String {
    format!("{lambda}")
}

/// Column names for the given levels.
pub fn table_header(levels: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["scenario", "n", "p", "m", "a", "b", "parameter", "pct_rb", "var_theta", "mean_v", "sd_v"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(levels.iter().map(|l| format!("N_{}", level_label(*l))));
    h.extend(levels.iter().map(|l| format!("T_{}", level_label(*l))));
    h
}

/// Rows for each scenario and parameter; scenarios are numbered from 1.
pub fn table_rows(summaries: &[McSummary]) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for (k, s) in summaries.iter().enumerate() {
        let c = &s.config;
        for param in STUDY_PARAMETERS {
            let ps = s.parameter(param);
            let stat = |f: fn(&crate::mcstudy::ParameterSummary) -> f64| ps.map_or(f64::NAN, f);
            let cov = |kind| -> Vec<f64> {
                c.levels
                    .iter()
                    .map(|&l| ps.and_then(|p| p.coverage(kind, l)).unwrap_or(f64::NAN))
                    .collect()
            };
            rows.push(TableRow {
                scenario: k + 1,
                n: c.n,
                p: c.p,
                m: c.m,
                a: c.sigma2_eps_true,
                b: c.b,
                parameter: param.name().to_owned(),
                pct_rb: stat(|p| p.pct_rb),
                var_theta: stat(|p| p.var_theta_hat),
                mean_v: stat(|p| p.mean_v),
                sd_v: stat(|p| p.sd_v),
                normal: cov(IntervalKind::Normal),
                truncated: cov(IntervalKind::Truncated),
            });
        }
    }
    rows
}

fn row_cells(r: &TableRow) -> Vec<String> {
    let mut cells = vec![
        r.scenario.to_string(),
        r.n.to_string(),
        r.p.to_string(),
        r.m.to_string(),
        format_sig(r.a),
        format_sig(r.b),
        r.parameter.clone(),
        format_sig(r.pct_rb),
        format_sig(r.var_theta),
        format_sig(r.mean_v),
        format_sig(r.sd_v),
    ];
    cells.extend(r.normal.iter().map(|&x| format_sig(x)));
    cells.extend(r.truncated.iter().map(|&x| format_sig(x)));
    cells
}

/// Levels shared by every scenario (required for a rectangular table).
fn common_levels(summaries: &[McSummary]) -> Result<Vec<f64>> {
    let levels = summaries
        .first()
        .map(|s| s.config.levels.clone())
        .ok_or_else(|| Error::InvalidInput("no scenarios to tabulate".into()))?;
    if summaries.iter().any(|s| s.config.levels != levels) {
        return Err(Error::InvalidInput("scenarios use different levels".into()));
    }
    Ok(levels)
}

pub fn write_csv(summaries: &[McSummary]) -> Result<String> {
    let levels = common_levels(summaries)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(table_header(&levels)).map_err(csv_err)?;
    for r in table_rows(summaries) {
        w.write_record(row_cells(&r)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn parse_cell<T: std::str::FromStr>(cell: &str, line: usize, col: &str) -> Result<T> {
    cell.parse()
        .map_err(|_| Error::Parse(format!("table line {line}, column '{col}': '{cell}'")))
}

/// Parses a table written by [`write_csv`].
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<TableRow>)> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < 11 || !(header.len() - 11).is_multiple_of(2) || header[..11] != table_header(&[])[..] {
        return Err(Error::Parse(format!("unexpected table header {header:?}")));
    }
    let n_levels = (header.len() - 11) / 2;
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse(format!("table line {line}: {e}")))?;
        let f = |i: usize| -> Result<f64> { parse_cell(&rec[i], line, &header[i]) };
        rows.push(TableRow {
            scenario: parse_cell(&rec[0], line, "scenario")?,
            n: parse_cell(&rec[1], line, "n")?,
            p: parse_cell(&rec[2], line, "p")?,
            m: parse_cell(&rec[3], line, "m")?,
            a: f(4)?,
            b: f(5)?,
            parameter: rec[6].to_owned(),
            pct_rb: f(7)?,
            var_theta: f(8)?,
            mean_v: f(9)?,
            sd_v: f(10)?,
            normal: (0..n_levels).map(|i| f(11 + i)).collect::<Result<_>>()?,
            truncated: (0..n_levels).map(|i| f(11 + n_levels + i)).collect::<Result<_>>()?,
        });
    }
    Ok((header, rows))
}

/// Right-aligned columns separated by two spaces.
pub fn render_text(header: &[String], rows: &[TableRow]) -> String {
    let body: Vec<Vec<String>> = rows.iter().map(row_cells).collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|j| body.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header);
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Aligned text table plus replication counts.
pub fn study_text(summaries: &[McSummary]) -> Result<String> {
    let levels = common_levels(summaries)?;
    let mut out = render_text(&table_header(&levels), &table_rows(summaries));
    out.push('\n');
    for (k, s) in summaries.iter().enumerate() {
        let status = if s.failed { "  FAILED" } else { "" };
        out.push_str(&format!(
            "scenario {}: {} successful replications, {} failed, exponent mode {}{status}\n",
            k + 1,
            s.rep_count,
            s.failure_count,
            s.exponent_mode
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Estimates {
    pub sigma2_eps: f64,
    pub gamma: f64,
    pub sigma2_alpha: f64,
    pub h2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Variances {
    pub sigma2_eps: f64,
    pub gamma: f64,
    pub h2: f64,
    pub exponent_mode: ExponentMode,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalEntry {
    pub parameter: Parameter,
    pub level: f64,
    pub lambda: f64,
    pub kind: IntervalKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapEntry {
    pub replicates: usize,
    pub failures: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub n: usize,
    pub snps: usize,
    pub fixed_effects: usize,
    pub covariates: Vec<String>,
    pub estimates: Estimates,
    pub variances: Variances,
    pub intervals: Vec<IntervalEntry>,
    pub qc: QcReport,
    pub alignment: AlignmentReport,
    pub solver: SolveDiagnostics<f64>,
    pub bootstrap: Option<BootstrapEntry>,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let e = &self.estimates;
        let v = &self.variances;
        let mut s = String::new();
        s.push_str(&format!(
            "individuals {}  SNPs {} (of {})  fixed effects {}\n",
            self.n, self.snps, self.qc.n_before, self.fixed_effects
        ));
        s.push_str(&format!(
            "QC removed {} for missingness > {}, {} for MAF < {}; {} missing calls mean-imputed\n\n",
            self.qc.removed_missing, self.qc.miss_max, self.qc.removed_maf, self.qc.maf_min, self.qc.imputed_entries
        ));
        s.push_str(&format!("sigma2_eps   {:>12.6}   var {:.6e}\n", e.sigma2_eps, v.sigma2_eps));
        s.push_str(&format!("gamma        {:>12.6}   var {:.6e}\n", e.gamma, v.gamma));
        s.push_str(&format!("sigma2_alpha {:>12.6}\n", e.sigma2_alpha));
        s.push_str(&format!("h2           {:>12.6}   var {:.6e}\n\n", e.h2, v.h2));
        for i in &self.intervals {
            s.push_str(&format!(
                "{:<10} {:>5.1}% {:<9} ({:.6}, {:.6})\n",
                i.parameter.name(),
                100.0 * i.level,
                format!("{:?}", i.kind).to_lowercase(),
                i.lower,
                i.upper
            ));
        }
        let d = &self.solver;
        s.push_str(&format!(
            "\nsolver: {} evaluations, {} iterations, bracket [{:e}, {:e}], boundary {}, restricted log-likelihood {:.6}\n",
            d.evaluations, d.iterations, d.bracket.0, d.bracket.1, d.boundary, d.loglik
        ));
        s
    }
}
