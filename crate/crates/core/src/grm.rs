//! Standardized design, genomic relatedness matrix and its spectral form.
//!
//! Everything downstream of the eigendecomposition works in the eigenbasis of
//! `K = Z̃Z̃'`, where `V_γ = I + γK` is diagonal. The REML projection
//! `P_γ = V⁻¹ - V⁻¹X(X'V⁻¹X)⁻¹X'V⁻¹` then becomes a diagonal matrix minus a
//! rank-`q` correction, so every trace and quadratic form the estimators need
//! costs O(nq² + q³) per `γ`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::genosim::{GenotypeMatrix, MISSING};
use crate::linalg::{cholesky, cholesky_logdet, complement_transform, symmetric_eigen_rotate};
use crate::scalar::Real;

/// Column access to a standardized, `p^{-1/2}`-scaled design `Z̃`.
pub trait DesignSource<T: Real> {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// Writes column `j` of `Z̃` into `out` (length `nrows`).
    fn fill_column(&self, j: usize, out: &mut [T]);

    /// Writes columns `start..start + out.ncols()` into `out`.
    fn fill_block(&self, start: usize, out: &mut DMatrix<T>) {
        let n = self.nrows();
        for c in 0..out.ncols() {
            let col = &mut out.as_mut_slice()[c * n..(c + 1) * n];
            self.fill_column(start + c, col);
        }
    }
}

/// Per-SNP centering and scaling (denominator `n`; missing calls count as the
/// column mean, i.e. mean imputation).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaling {
    /// Means over all input columns.
    pub means: Vec<f64>,
    /// Standard deviations over all input columns (0 for excluded ones).
    pub sds: Vec<f64>,
    /// Input columns kept, in order.
    pub retained: Vec<usize>,
    /// Input columns dropped for zero variance.
    pub excluded: Vec<usize>,
}

impl ColumnScaling {
    pub fn from_genotypes(geno: &GenotypeMatrix) -> Result<Self> {
        let n = geno.nrows();
        if n < 2 {
            return Err(Error::InvalidInput(format!("standardization needs n >= 2, got {n}")));
        }
        let p = geno.ncols();
        let mut means = Vec::with_capacity(p);
        let mut sds = Vec::with_capacity(p);
        let mut retained = Vec::new();
        let mut excluded = Vec::new();
        for j in 0..p {
            let col = geno.column(j);
            let mut counts = [0usize; 3];
            for &d in col {
                if d != MISSING {
                    counts[d as usize] += 1;
                }
            }
            let called = counts.iter().sum::<usize>();
            let mean = if called == 0 {
                0.0
            } else {
                (counts[1] + 2 * counts[2]) as f64 / called as f64
            };
            let ss: f64 = (0..3).map(|k| counts[k] as f64 * (k as f64 - mean).powi(2)).sum();
            let var = ss / n as f64;
            means.push(mean);
            if called == 0 || var <= 1e-24 {
                sds.push(0.0);
                excluded.push(j);
            } else {
                sds.push(var.sqrt());
                retained.push(j);
            }
        }
        if retained.is_empty() {
            return Err(Error::InvalidInput(format!(
                "all {p} SNP columns have zero variance"
            )));
        }
        Ok(ColumnScaling { means, sds, retained, excluded })
    }

    pub fn retained_count(&self) -> usize {
        self.retained.len()
    }

    /// `p^{-1/2}` with `p` the retained column count.
    pub fn global_scale(&self) -> f64 {
        1.0 / (self.retained.len() as f64).sqrt()
    }

    /// Standardized-and-scaled value of dosages 0, 1, 2 and a missing call for
    /// retained column `j`.
    fn lookup(&self, j: usize) -> [f64; 4] {
        let src = self.retained[j];
        let (m, s) = (self.means[src], self.sds[src]);
        let g = self.global_scale();
        [(0.0 - m) / s * g, (1.0 - m) / s * g, (2.0 - m) / s * g, 0.0]
    }
}

/// Materialized `Z̃ = p^{-1/2} Z` over the retained columns.
#[derive(Debug, Clone)]
pub struct StandardizedDesign<T: Real> {
    pub ztilde: DMatrix<T>,
    pub col_means: Vec<f64>,
    pub col_sds: Vec<f64>,
    pub excluded_cols: Vec<usize>,
    pub retained_cols: Vec<usize>,
}

/// Standardizes every column to mean 0 and variance 1 (denominator `n`),
/// drops zero-variance columns and scales by `p^{-1/2}`.
///
/// Missing calls are treated as mean-imputed and so map to 0.
pub fn standardize<T: Real>(geno: &GenotypeMatrix) -> Result<StandardizedDesign<T>> {
    let streamed = StreamedDesign::<T>::new(geno)?;
    let n = geno.nrows();
    let p = streamed.ncols();
    let mut ztilde = DMatrix::<T>::zeros(n, p);
    streamed.fill_block(0, &mut ztilde);
    let ColumnScaling { means, sds, retained, excluded } = streamed.scaling;
    Ok(StandardizedDesign {
        ztilde,
        col_means: means,
        col_sds: sds,
        excluded_cols: excluded,
        retained_cols: retained,
    })
}

impl<T: Real> DesignSource<T> for StandardizedDesign<T> {
    fn nrows(&self) -> usize {
        self.ztilde.nrows()
    }
    fn ncols(&self) -> usize {
        self.ztilde.ncols()
    }
    fn fill_column(&self, j: usize, out: &mut [T]) {
        out.copy_from_slice(self.ztilde.column(j).as_slice());
    }
}

impl<T: Real> DesignSource<T> for DMatrix<T> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn fill_column(&self, j: usize, out: &mut [T]) {
        out.copy_from_slice(self.column(j).as_slice());
    }
}

/// `Z̃` computed on demand from the dosages, so only a column chunk is ever
/// resident in floating point.
#[derive(Debug, Clone)]
pub struct StreamedDesign<'a, T: Real> {
    geno: &'a GenotypeMatrix,
    pub scaling: ColumnScaling,
    tables: Vec<[T; 4]>,
}

impl<'a, T: Real> StreamedDesign<'a, T> {
    pub fn new(geno: &'a GenotypeMatrix) -> Result<Self> {
        let scaling = ColumnScaling::from_genotypes(geno)?;
        let tables = (0..scaling.retained_count())
            .map(|j| scaling.lookup(j).map(T::lit))
            .collect();
        Ok(StreamedDesign { geno, scaling, tables })
    }
}

impl<T: Real> DesignSource<T> for StreamedDesign<'_, T> {
    fn nrows(&self) -> usize {
        self.geno.nrows()
    }
    fn ncols(&self) -> usize {
        self.scaling.retained_count()
    }
    fn fill_column(&self, j: usize, out: &mut [T]) {
        let table = &self.tables[j];
        let col = self.geno.column(self.scaling.retained[j]);
        for (o, &d) in out.iter_mut().zip(col) {
            *o = table[if d == MISSING { 3 } else { d as usize }];
        }
    }
}

const GRM_COL_CHUNK: usize = 512;
const GRM_ROW_BLOCK: usize = 256;

/// `K = Z̃Z̃'`, accumulated over column chunks of the design. Only the lower
/// block triangle is multiplied; the upper part is mirrored at the end.
pub fn relatedness<T: Real, D: DesignSource<T> + ?Sized>(design: &D) -> DMatrix<T> {
    let n = design.nrows();
    let p = design.ncols();
    let mut k = DMatrix::<T>::zeros(n, n);
    let mut start = 0;
    while start < p {
        let width = GRM_COL_CHUNK.min(p - start);
        let mut chunk = DMatrix::<T>::zeros(n, width);
        design.fill_block(start, &mut chunk);
        let chunk_t = chunk.transpose();
        let mut r0 = 0;
        while r0 < n {
            let r1 = (r0 + GRM_ROW_BLOCK).min(n);
            let lhs = chunk.rows(r0, r1 - r0);
            let rhs = chunk_t.columns(0, r1);
            k.view_mut((r0, 0), (r1 - r0, r1))
                .gemm(T::one(), &lhs, &rhs, T::one());
            r0 = r1;
        }
        start += width;
    }
    for j in 0..n {
        for i in 0..j {
            k[(i, j)] = k[(j, i)];
        }
    }
    k
}

/// REML-projected relatedness in its eigenbasis.
///
/// With `L` an orthonormal basis of the complement of `col(X)` (so that
/// `P_γ = L(I + γL'KL)⁻¹L'`), stores the eigenvalues `μ` of `L'KL` and the
/// phenotype rotated as `U'L'y`. Every trace and quadratic form of `P_γ` and
/// `Q_γ = P_γKP_γ` is then a sum of positive terms.
#[derive(Debug, Clone)]
pub struct SpectralGrm<T: Real> {
    /// Nonincreasing, clamped to be nonnegative; `n - q` entries.
    pub eigvals: Vec<T>,
    /// `U'L'y`, `n - q` entries.
    pub rot_y: Vec<T>,
    pub n: usize,
    pub q: usize,
    /// `log det X'X`
    pub logdet_xtx: T,
    /// `tr K` before projection.
    pub trace_k: T,
}

/// Traces and quadratic forms of `P_γ` and `Q_γ = P_γ K P_γ` at one `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceBundle<T: Real> {
    pub tr_p: T,
    pub tr_p2: T,
    pub tr_pk: T,
    /// `tr(Q) = tr(P²K)`
    pub tr_q: T,
    /// `tr(QK) = tr(PKPK)`
    pub tr_qk: T,
    /// `y'P²y`
    pub quad_p2: T,
    /// `y'Qy`
    pub quad_q: T,
    pub gamma: T,
}

/// Everything computed at one `γ`, including the pieces of the restricted
/// likelihood.
#[derive(Debug, Clone)]
pub struct GammaEval<T: Real> {
    pub traces: TraceBundle<T>,
    /// `y'P_γ y`
    pub quad_p: T,
    /// `log det(L'V_γL) = log det V_γ + log det(X'V_γ⁻¹X) - log det(X'X)`
    pub logdet_lvl: T,
}

/// Eigenvalues more negative than this multiple of the largest are an error.
const EIGEN_CLAMP_REL: f64 = 1e-8;
/// Relative Cholesky pivot tolerance for `X'X`.
const RANK_REL_TOL: f64 = 1e-12;

/// Builds `K = Z̃Z̃'` from the design and decomposes it.
pub fn spectral<T, D>(design: &D, x: &DMatrix<T>, y: &[T]) -> Result<SpectralGrm<T>>
where
    T: Real,
    D: DesignSource<T> + ?Sized,
{
    let k = relatedness(design);
    SpectralGrm::from_grm(k, x, y)
}

impl<T: Real> SpectralGrm<T> {
    /// Decomposes a precomputed relatedness matrix.
    pub fn from_grm(k: DMatrix<T>, x: &DMatrix<T>, y: &[T]) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n {
            return Err(Error::Dimension(format!("GRM is {}x{}", n, k.ncols())));
        }
        if x.nrows() != n || y.len() != n {
            return Err(Error::Dimension(format!(
                "GRM has {n} rows, covariates {}, phenotype {}",
                x.nrows(),
                y.len()
            )));
        }
        let q = x.ncols();
        if q == 0 || q >= n {
            return Err(Error::InvalidInput(format!(
                "need 1 <= q < n covariate columns, got q = {q}, n = {n}"
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("relatedness matrix".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariates".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phenotype".into()));
        }
        let xtx = cholesky(&(x.transpose() * x), T::lit(RANK_REL_TOL))
            .map_err(|e| Error::Singular(format!("covariate matrix is rank deficient ({e})")))?;
        let trace_k = k.trace();

        let (kl, yl) = complement_transform(k, x, y)?;
        let m = n - q;
        let block = DMatrix::from_column_slice(m, 1, &yl);
        let (mut eigvals, rotated) = symmetric_eigen_rotate(kl, block)?;

        let lmax = eigvals[0];
        let tol = T::lit(EIGEN_CLAMP_REL) * lmax.max(T::zero());
        for (i, l) in eigvals.iter_mut().enumerate() {
            if *l < T::zero() {
                if *l < -tol {
                    return Err(Error::Singular(format!(
                        "projected GRM eigenvalue {i} is {l:e}, below -1e-8 * {lmax:e}"
                    )));
                }
                *l = T::zero();
            }
        }
        Ok(SpectralGrm {
            eigvals,
            rot_y: rotated.column(0).iter().copied().collect(),
            n,
            q,
            logdet_xtx: cholesky_logdet(&xtx),
            trace_k,
        })
    }

    /// Same spectrum with a different rotated phenotype `U'L'y`.
    pub fn with_rotated_phenotype(&self, rot_y: Vec<T>) -> Result<Self> {
        if rot_y.len() != self.rot_y.len() {
            return Err(Error::Dimension(format!(
                "rotated phenotype has {} entries, expected {}",
                rot_y.len(),
                self.rot_y.len()
            )));
        }
        Ok(SpectralGrm { rot_y, ..self.clone() })
    }

    /// Residual degrees of freedom `n - q`.
    pub fn dof(&self) -> usize {
        self.n - self.q
    }

    /// Traces, quadratic forms and likelihood pieces at `gamma`.
    pub fn evaluate(&self, gamma: T) -> Result<GammaEval<T>> {
        if !(gamma >= T::zero()) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!("gamma = {gamma} must be finite and >= 0")));
        }
        let zero = T::zero();
        let (mut tr_p, mut tr_p2, mut tr_pk, mut tr_q, mut tr_qk) = (zero, zero, zero, zero, zero);
        let (mut quad_p, mut quad_p2, mut quad_q, mut logdet) = (zero, zero, zero, zero);
        for (&mu, &u) in self.eigvals.iter().zip(&self.rot_y) {
            let gm = gamma * mu;
            let w = T::one() / (T::one() + gm);
            let w2 = w * w;
            let u2 = u * u;
            tr_p += w;
            tr_p2 += w2;
            tr_pk += mu * w;
            tr_q += mu * w2;
            tr_qk += mu * mu * w2;
            quad_p += w * u2;
            quad_p2 += w2 * u2;
            quad_q += mu * w2 * u2;
            logdet += gm.ln_1p();
        }
        Ok(GammaEval {
            traces: TraceBundle { tr_p, tr_p2, tr_pk, tr_q, tr_qk, quad_p2, quad_q, gamma },
            quad_p,
            logdet_lvl: logdet,
        })
    }
}

/// All five traces and both quadratic forms at `gamma`.
pub fn trace_bundle<T: Real>(spec: &SpectralGrm<T>, gamma: T) -> Result<TraceBundle<T>> {
    Ok(spec.evaluate(gamma)?.traces)
}
