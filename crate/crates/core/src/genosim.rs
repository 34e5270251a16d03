//! Synthetic GWAS data: allele frequencies, Hardy-Weinberg genotypes and
//! phenotypes from the sparse (true) mixed model.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grm::DesignSource;
use crate::scalar::Real;

/// Marker stored in [`GenotypeMatrix`] for a missing call.
pub const MISSING: u8 = u8::MAX;

pub const FREQ_LOW: f64 = 0.05;
pub const FREQ_HIGH: f64 = 0.5;

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// Number of causal SNPs.
    pub m: usize,
    /// Residual variance `a`.
    pub sigma2_eps_true: f64,
    /// Genetic scale; the per-SNP effect variance is `b * p / m`.
    pub b: f64,
    pub mu: f64,
    pub seed: u64,
    pub n_reps: usize,
    pub levels: Vec<f64>,
    /// Pick causal columns uniformly at random instead of the first `m`.
    #[serde(default)]
    pub randomize_causal: bool,
}

impl SimConfig {
    pub fn new(n: usize, p: usize, m: usize, a: f64, b: f64, seed: u64) -> Self {
        SimConfig {
            n,
            p,
            m,
            sigma2_eps_true: a,
            b,
            mu: 0.0,
            seed,
            n_reps: 300,
            levels: vec![0.01, 0.05, 0.1],
            randomize_causal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("n = {} (need n >= 2)", self.n)));
        }
        if self.m < 1 || self.m > self.p {
            return Err(Error::InvalidInput(format!(
                "m = {} outside [1, p = {}]",
                self.m, self.p
            )));
        }
        if !(self.sigma2_eps_true > 0.0) || !self.sigma2_eps_true.is_finite() {
            return Err(Error::InvalidInput(format!(
                "residual variance a = {} must be positive",
                self.sigma2_eps_true
            )));
        }
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return Err(Error::InvalidInput(format!("b = {} must be >= 0", self.b)));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidInput("mu must be finite".into()));
        }
        for &l in &self.levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::InvalidInput(format!("level lambda = {l} outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Misspecification fraction `m / p`.
    pub fn omega(&self) -> f64 {
        self.m as f64 / self.p as f64
    }

    /// Per-SNP effect variance of the causal block.
    pub fn sigma2_alpha_true(&self) -> f64 {
        self.b * self.p as f64 / self.m as f64
    }
}

/// `n × p` dosage matrix stored column-major (one contiguous column per SNP).
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    n: usize,
    p: usize,
    data: Vec<u8>,
    /// Allele frequency per SNP.
    pub freqs: Vec<f64>,
}

impl GenotypeMatrix {
    pub fn new(n: usize, p: usize, data: Vec<u8>, freqs: Vec<f64>) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::Dimension(format!(
                "{} dosages for a {n}x{p} matrix",
                data.len()
            )));
        }
        if freqs.len() != p {
            return Err(Error::Dimension(format!("{} frequencies for {p} SNPs", freqs.len())));
        }
        if let Some(pos) = data.iter().position(|&d| d > 2 && d != MISSING) {
            return Err(Error::InvalidInput(format!(
                "dosage {} at row {}, column {}",
                data[pos],
                pos % n.max(1),
                pos / n.max(1)
            )));
        }
        Ok(GenotypeMatrix { n, p, data, freqs })
    }

    /// Builds the matrix from column data and sets frequencies to the
    /// empirical allele frequency (mean dosage / 2 over non-missing calls).
    pub fn from_columns_empirical(n: usize, columns: Vec<Vec<u8>>) -> Result<Self> {
        let p = columns.len();
        let mut data = Vec::with_capacity(n * p);
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "column {j} has {} entries, expected {n}",
                    col.len()
                )));
            }
            data.extend_from_slice(col);
        }
        let freqs = columns.iter().map(|c| empirical_freq(c)).collect();
        GenotypeMatrix::new(n, p, data, freqs)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[j * self.n + i]
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn missing_count(&self) -> usize {
        self.data.iter().filter(|&&d| d == MISSING).count()
    }

    /// Keeps the listed columns (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> GenotypeMatrix {
        let mut data = Vec::with_capacity(self.n * cols.len());
        for &j in cols {
            data.extend_from_slice(self.column(j));
        }
        GenotypeMatrix {
            n: self.n,
            p: cols.len(),
            data,
            freqs: cols.iter().map(|&j| self.freqs[j]).collect(),
        }
    }

    /// Keeps the listed rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> GenotypeMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.p);
        for j in 0..self.p {
            let col = self.column(j);
            data.extend(rows.iter().map(|&i| col[i]));
        }
        let cols: Vec<&[u8]> = (0..self.p).map(|j| &data[j * rows.len()..(j + 1) * rows.len()]).collect();
        let freqs = cols.iter().map(|c| empirical_freq(c)).collect();
        GenotypeMatrix { n: rows.len(), p: self.p, data, freqs }
    }
}

/// Mean dosage / 2 over non-missing entries (0 for an all-missing column).
pub fn empirical_freq(col: &[u8]) -> f64 {
    let (sum, cnt) = col
        .iter()
        .filter(|&&d| d != MISSING)
        .fold((0u64, 0u64), |(s, c), &d| (s + d as u64, c + 1));
    if cnt == 0 {
        0.0
    } else {
        sum as f64 / (2.0 * cnt as f64)
    }
}

/// `p` independent draws from Uniform[0.05, 0.5].
pub fn draw_allele_freqs<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<f64> {
    (0..p).map(|_| rng.random_range(FREQ_LOW..=FREQ_HIGH)).collect()
}

/// Hardy-Weinberg genotypes: dosage 0, 1, 2 with probabilities
/// `(1-f)^2`, `2f(1-f)`, `f^2`, drawn column by column.
pub fn draw_genotypes<R: Rng + ?Sized>(freqs: &[f64], n: usize, rng: &mut R) -> Result<GenotypeMatrix> {
    if let Some((j, f)) = freqs.iter().enumerate().find(|(_, &f)| !(f > 0.0 && f < 1.0)) {
        return Err(Error::InvalidInput(format!("allele frequency {f} at SNP {j} outside (0, 1)")));
    }
    let mut data = Vec::with_capacity(n * freqs.len());
    for &f in freqs {
        let p0 = (1.0 - f) * (1.0 - f);
        let p01 = 1.0 - f * f;
        data.extend((0..n).map(|_| {
            let u: f64 = rng.random();
            if u < p0 {
                0u8
            } else if u < p01 {
                1
            } else {
                2
            }
        }));
    }
    GenotypeMatrix::new(n, freqs.len(), data, freqs.to_vec())
}

/// Indices of the causal columns for a design with `p` columns.
pub fn causal_columns<R: Rng + ?Sized>(config: &SimConfig, p: usize, rng: &mut R) -> Vec<usize> {
    if config.randomize_causal {
        let mut idx = sample(rng, p, config.m).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..config.m).collect()
    }
}

/// `y = mu 1 + Z̃_(1) α_(1) + ε` with `α_(1) ~ N(0, σ²_α I_m)` over the causal
/// columns and `ε ~ N(0, σ²_ε I_n)`.
///
/// The effects are drawn before the noise; both come from `rng`.
pub fn simulate_phenotype<T, D, R>(design: &D, config: &SimConfig, rng: &mut R) -> Result<Vec<T>>
where
    T: Real,
    D: DesignSource<T> + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    let n = design.nrows();
    let p = design.ncols();
    if n != config.n {
        return Err(Error::Dimension(format!("design has {n} rows, config n = {}", config.n)));
    }
    if config.m > p {
        return Err(Error::Dimension(format!(
            "config asks for {} causal SNPs but the design has {p} columns",
            config.m
        )));
    }
    let causal = causal_columns(config, p, rng);
    let sd_alpha = config.sigma2_alpha_true().sqrt();
    let alpha: Vec<f64> = (0..causal.len())
        .map(|_| sd_alpha * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut y = vec![T::lit(config.mu); n];
    let mut col = vec![T::zero(); n];
    for (&j, &a) in causal.iter().zip(&alpha) {
        if a == 0.0 {
            continue;
        }
        design.fill_column(j, &mut col);
        let a = T::lit(a);
        for (yi, &zi) in y.iter_mut().zip(&col) {
            *yi += a * zi;
        }
    }
    let sd_eps = config.sigma2_eps_true.sqrt();
    for yi in y.iter_mut() {
        *yi += T::lit(sd_eps * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(y)
}

/// `(m/p)σ²_α / ((m/p)σ²_α + σ²_ε)`, which equals `b / (a + b)`.
pub fn true_heritability(config: &SimConfig) -> Result<f64> {
    let genetic = config.omega() * config.sigma2_alpha_true();
    let total = genetic + config.sigma2_eps_true;
    if !(total > 0.0) {
        return Err(Error::InvalidInput(
            "heritability undefined when both variance components are zero".into(),
        ));
    }
    Ok(genetic / total)
}
