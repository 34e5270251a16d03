//! Delimited dosage/phenotype/covariate tables and SNP quality control.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::genosim::{empirical_freq, GenotypeMatrix, MISSING};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub snp_ids: Vec<String>,
    pub genotypes: GenotypeMatrix,
    pub phenotype: Vec<f64>,
    /// Covariates without the intercept, `n × (q - 1)`.
    pub covariates: DMatrix<f64>,
    pub covariate_names: Vec<String>,
    pub alignment: AlignmentReport,
}

/// Individuals lost when aligning the tables on their ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AlignmentReport {
    pub genotyped: usize,
    pub phenotyped: usize,
    pub retained: usize,
    /// Genotyped individuals without a phenotype (or covariate) row.
    pub dropped_from_genotypes: usize,
    /// Phenotyped individuals that were not genotyped.
    pub dropped_from_phenotypes: usize,
    /// Rows dropped because the phenotype or a covariate is NA.
    pub dropped_missing_values: usize,
}

impl Dataset {
    /// `[1, covariates]`.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let n = self.ids.len();
        let c = self.covariates.ncols();
        DMatrix::from_fn(n, c + 1, |i, j| if j == 0 { 1.0 } else { self.covariates[(i, j - 1)] })
    }
}

/// A parsed table: header names after the id column, ids, and raw cells.
struct Table {
    columns: Vec<String>,
    ids: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn is_na(cell: &str) -> bool {
    cell.eq_ignore_ascii_case("na")
}

/// Tab if the header line contains one, otherwise comma.
fn detect_delimiter(header: &str) -> u8 {
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn read_table<R: Read>(source: R, what: &str) -> Result<Table> {
    let mut reader = BufReader::new(source);
    let mut header = String::new();
    if reader.read_line(&mut header)? == 0 {
        return Err(Error::Parse(format!("{what} file is empty")));
    }
    let delimiter = detect_delimiter(&header);
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(header.as_bytes().chain(reader));
    let mut records = csv.records();
    let head = records
        .next()
        .ok_or_else(|| Error::Parse(format!("{what} file has no header")))?
        .map_err(|e| Error::Parse(format!("{what} header: {e}")))?;
    if head.len() < 2 {
        return Err(Error::Parse(format!(
            "{what} header needs an id column and at least one value column"
        )));
    }
    let columns: Vec<String> = head.iter().skip(1).map(str::to_owned).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse(format!("{what} line {line}: {e}")))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != columns.len() + 1 {
            return Err(Error::Parse(format!(
                "{what} line {line}: {} fields, header has {}",
                rec.len(),
                columns.len() + 1
            )));
        }
        let id = rec[0].to_owned();
        if id.is_empty() {
            return Err(Error::Parse(format!("{what} line {line}: empty id")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Parse(format!("{what} line {line}: duplicate id '{id}'")));
        }
        ids.push(id);
        rows.push(rec.iter().skip(1).map(str::to_owned).collect());
    }
    Ok(Table { columns, ids, rows })
}

fn open(path: &Path, what: &str) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{what} file {}: {e}", path.display())))
    })
}

fn parse_dosage(cell: &str, line: usize, column: &str) -> Result<u8> {
    match cell {
        "0" => Ok(0),
        "1" => Ok(1),
        "2" => Ok(2),
        c if is_na(c) => Ok(MISSING),
        c => Err(Error::Parse(format!(
            "genotype line {line}, column '{column}': invalid dosage '{c}' (expected 0, 1, 2 or NA)"
        ))),
    }
}

/// Numeric cell, `None` for NA.
fn parse_value(cell: &str, what: &str, line: usize, column: &str) -> Result<Option<f64>> {
    if is_na(cell) {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| {
        Error::Parse(format!("{what} line {line}, column '{column}': '{cell}' is not a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("{what} line {line}, column '{column}': non-finite value")));
    }
    Ok(Some(v))
}

/// Reads the three tables and aligns them on individual ids in genotype-file
/// order. Only the first value column of the phenotype table is used.
pub fn load_dataset(geno_path: &Path, pheno_path: &Path, covar_path: Option<&Path>) -> Result<Dataset> {
    let geno = read_table(open(geno_path, "genotype")?, "genotype")?;
    let pheno = read_table(open(pheno_path, "phenotype")?, "phenotype")?;
    let covar = match covar_path {
        Some(p) => Some(read_table(open(p, "covariate")?, "covariate")?),
        None => None,
    };
    assemble(geno, pheno, covar)
}

/// Same as [`load_dataset`] with in-memory readers.
pub fn load_dataset_from<G: Read, P: Read, C: Read>(geno: G, pheno: P, covar: Option<C>) -> Result<Dataset> {
    let geno = read_table(geno, "genotype")?;
    let pheno = read_table(pheno, "phenotype")?;
    let covar = match covar {
        Some(c) => Some(read_table(c, "covariate")?),
        None => None,
    };
    assemble(geno, pheno, covar)
}

fn assemble(geno: Table, pheno: Table, covar: Option<Table>) -> Result<Dataset> {
    let pheno_index: HashMap<&str, usize> =
        pheno.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let covar_index: Option<HashMap<&str, usize>> = covar
        .as_ref()
        .map(|t| t.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect());
    let n_cov = covar.as_ref().map_or(0, |t| t.columns.len());

    let mut report = AlignmentReport {
        genotyped: geno.ids.len(),
        phenotyped: pheno.ids.len(),
        ..Default::default()
    };
    let geno_ids: HashSet<&str> = geno.ids.iter().map(String::as_str).collect();
    report.dropped_from_phenotypes = pheno.ids.iter().filter(|id| !geno_ids.contains(id.as_str())).count();

    let mut rows = Vec::new();
    let mut phenotype = Vec::new();
    let mut cov_values = Vec::new();
    for (gi, id) in geno.ids.iter().enumerate() {
        let Some(&pi) = pheno_index.get(id.as_str()) else {
            report.dropped_from_genotypes += 1;
            continue;
        };
        let ci = match &covar_index {
            Some(index) => match index.get(id.as_str()) {
                Some(&ci) => Some(ci),
                None => {
                    report.dropped_from_genotypes += 1;
                    continue;
                }
            },
            None => None,
        };
        let y = parse_value(&pheno.rows[pi][0], "phenotype", pi + 2, &pheno.columns[0])?;
        let mut cov_row = Vec::with_capacity(n_cov);
        let mut complete = y.is_some();
        if let (Some(ci), Some(table)) = (ci, covar.as_ref()) {
            for (k, cell) in table.rows[ci].iter().enumerate() {
                match parse_value(cell, "covariate", ci + 2, &table.columns[k])? {
                    Some(v) => cov_row.push(v),
                    None => complete = false,
                }
            }
        }
        if !complete {
            report.dropped_missing_values += 1;
            continue;
        }
        rows.push(gi);
        phenotype.push(y.unwrap_or_default());
        cov_values.extend(cov_row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "no individual appears in every input table with complete values".into(),
        ));
    }
    report.retained = rows.len();
    if report.dropped_from_genotypes + report.dropped_from_phenotypes + report.dropped_missing_values > 0 {
        log::info!(
            "id alignment kept {} individuals ({} genotyped without phenotype, {} phenotyped without genotypes, {} with NA values)",
            report.retained,
            report.dropped_from_genotypes,
            report.dropped_from_phenotypes,
            report.dropped_missing_values
        );
    }

    let n = rows.len();
    let mut columns = Vec::with_capacity(geno.columns.len());
    for (j, name) in geno.columns.iter().enumerate() {
        let mut col = Vec::with_capacity(n);
        for &gi in &rows {
            col.push(parse_dosage(&geno.rows[gi][j], gi + 2, name)?);
        }
        columns.push(col);
    }
    let genotypes = GenotypeMatrix::from_columns_empirical(n, columns)?;
    let ids = rows.iter().map(|&gi| geno.ids[gi].clone()).collect();
    Ok(Dataset {
        ids,
        snp_ids: geno.columns,
        genotypes,
        phenotype,
        covariates: DMatrix::from_row_slice(n, n_cov, &cov_values),
        covariate_names: covar.map(|t| t.columns).unwrap_or_default(),
        alignment: report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcReport {
    pub n_before: usize,
    pub n_after: usize,
    pub removed_missing: usize,
    pub removed_maf: usize,
    /// Missing calls left in retained SNPs; they enter as the column mean.
    pub imputed_entries: usize,
    pub maf_min: f64,
    pub miss_max: f64,
}

/// Folded allele frequency over called genotypes.
pub fn minor_allele_frequency(col: &[u8]) -> f64 {
    let f = empirical_freq(col);
    f.min(1.0 - f)
}

/// Drops SNPs whose missing rate exceeds `miss_max`, then those with minor
/// allele frequency below `maf_min`. Surviving missing calls are left in place
/// and standardized as the column mean.
pub fn quality_control(data: &Dataset, maf_min: f64, miss_max: f64) -> Result<(Dataset, QcReport)> {
    if !(0.0..=0.5).contains(&maf_min) {
        return Err(Error::InvalidInput(format!("maf_min = {maf_min} outside [0, 0.5]")));
    }
    if !(0.0..=1.0).contains(&miss_max) {
        return Err(Error::InvalidInput(format!("miss_max = {miss_max} outside [0, 1]")));
    }
    let g = &data.genotypes;
    let n = g.nrows() as f64;
    let mut keep = Vec::new();
    let mut removed_missing = 0;
    let mut removed_maf = 0;
    let mut imputed_entries = 0;
    for j in 0..g.ncols() {
        let col = g.column(j);
        let missing = col.iter().filter(|&&d| d == MISSING).count();
        if missing as f64 / n > miss_max || missing == col.len() {
            removed_missing += 1;
        } else if minor_allele_frequency(col) < maf_min {
            removed_maf += 1;
        } else {
            imputed_entries += missing;
            keep.push(j);
        }
    }
    let report = QcReport {
        n_before: g.ncols(),
        n_after: keep.len(),
        removed_missing,
        removed_maf,
        imputed_entries,
        maf_min,
        miss_max,
    };
    if keep.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no SNP passes QC ({removed_missing} for missingness, {removed_maf} for MAF)"
        )));
    }
    let out = Dataset {
        genotypes: g.select_columns(&keep),
        snp_ids: keep.iter().map(|&j| data.snp_ids[j].clone()).collect(),
        ..data.clone()
    };
    Ok((out, report))
}
