//! REML under the working model: solve the scalar estimating equation for the
//! variance ratio and recover the residual variance and heritability.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grm::SpectralGrm;
use crate::roots::brent;
use crate::scalar::Real;

/// Root-search configuration for [`solve_gamma`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Geometric grid density used to bracket sign changes.
    pub grid_per_decade: usize,
    /// Stop when the bracket is below `rel_tol * max(γ, 1)`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gamma_min: 1e-8,
            gamma_max: 1e6,
            grid_per_decade: 16,
            rel_tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Outcome of the root search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveDiagnostics<T> {
    /// Brent iterations spent on the selected root (0 at a boundary).
    pub iterations: usize,
    /// Total evaluations of the estimating equation.
    pub evaluations: usize,
    pub bracket: (T, T),
    /// The estimate sits at a search bound.
    pub boundary: bool,
    /// Number of local maxima of the restricted likelihood considered.
    pub candidates: usize,
    pub loglik: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemlFit<T> {
    pub gamma_hat: T,
    pub sigma2_eps_hat: T,
    pub sigma2_alpha_hat: T,
    pub h2_hat: T,
    pub iterations: usize,
    pub bracket: (T, T),
    pub boundary: bool,
    pub diagnostics: SolveDiagnostics<T>,
}

/// `g(γ) = y'Q_γy / tr(P_γK) - y'P_γ²y / tr(P_γ)`.
///
/// Its zeros are the stationary points of the restricted likelihood and its
/// sign is the sign of the profile-likelihood slope. When `K = 0` the first
/// term is taken as zero.
pub fn estimating_gap<T: Real>(spec: &SpectralGrm<T>, gamma: T) -> Result<T> {
    let t = spec.evaluate(gamma)?.traces;
    Ok(gap_from(&t))
}

fn gap_from<T: Real>(t: &crate::grm::TraceBundle<T>) -> T {
    let genetic = if t.tr_pk > T::zero() { t.quad_q / t.tr_pk } else { T::zero() };
    genetic - t.quad_p2 / t.tr_p
}

/// Restricted log-likelihood with the scale profiled out, up to a constant:
/// `-½[log det V_γ + log det(X'V_γ⁻¹X) + (n - q) log(y'P_γy)]`.
pub fn restricted_loglik<T: Real>(spec: &SpectralGrm<T>, gamma: T) -> Result<T> {
    let ev = spec.evaluate(gamma)?;
    loglik_from(spec, &ev)
}

fn loglik_from<T: Real>(spec: &SpectralGrm<T>, ev: &crate::grm::GammaEval<T>) -> Result<T> {
    if !(ev.quad_p > T::zero()) {
        return Err(Error::Degenerate(
            "phenotype lies in the covariate space (y'Py = 0)".into(),
        ));
    }
    let dof = T::from_usize_exact(spec.dof());
    Ok(-T::lit(0.5) * (ev.logdet_lvl + spec.logdet_xtx + dof * ev.quad_p.ln()))
}

struct Candidate<T> {
    gamma: T,
    loglik: T,
    iterations: usize,
    bracket: (T, T),
    boundary: bool,
}

/// Locates the REML variance ratio on `[gamma_min, gamma_max]`.
///
/// Sign changes of `g` from positive to negative are refined with Brent's
/// method; a bound is a candidate when `g` points outward there. Among all
/// candidates the one with the largest restricted likelihood wins.
pub fn solve_gamma<T: Real>(
    spec: &SpectralGrm<T>,
    opts: &SolverOptions,
) -> Result<(T, SolveDiagnostics<T>)> {
    if !(opts.gamma_min > 0.0 && opts.gamma_max > opts.gamma_min) {
        return Err(Error::InvalidInput(format!(
            "search bounds [{}, {}]",
            opts.gamma_min, opts.gamma_max
        )));
    }
    let decades = (opts.gamma_max / opts.gamma_min).log10();
    let points = ((decades * opts.grid_per_decade as f64).ceil() as usize).max(2) + 1;
    let ratio = opts.gamma_max / opts.gamma_min;
    let grid: Vec<T> = (0..points)
        .map(|k| {
            if k == points - 1 {
                T::lit(opts.gamma_max)
            } else {
                T::lit(opts.gamma_min * ratio.powf(k as f64 / (points - 1) as f64))
            }
        })
        .collect();

    let mut evaluations = 0usize;
    let mut gaps = Vec::with_capacity(points);
    for &gamma in &grid {
        let g = estimating_gap(spec, gamma)?;
        evaluations += 1;
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("estimating equation at gamma = {gamma}")));
        }
        gaps.push(g);
    }

    let mut candidates: Vec<Candidate<T>> = Vec::new();
    let boundary_candidate = |gamma: T, evaluations: &mut usize| -> Result<Candidate<T>> {
        *evaluations += 1;
        Ok(Candidate {
            gamma,
            loglik: restricted_loglik(spec, gamma)?,
            iterations: 0,
            bracket: (gamma, gamma),
            boundary: true,
        })
    };
    if gaps[0] <= T::zero() {
        candidates.push(boundary_candidate(grid[0], &mut evaluations)?);
    }
    if gaps[points - 1] > T::zero() {
        candidates.push(boundary_candidate(grid[points - 1], &mut evaluations)?);
    }

    let rel_tol = T::lit(opts.rel_tol);
    for k in 0..points - 1 {
        let (g0, g1) = (gaps[k], gaps[k + 1]);
        if !(g0 > T::zero() && g1 <= T::zero()) {
            continue;
        }
        let root = brent(
            |x| {
                evaluations += 1;
                estimating_gap(spec, x)
            },
            grid[k],
            grid[k + 1],
            g0,
            g1,
            |x| rel_tol * x.abs().max(T::one()),
            opts.max_iter,
        )?;
        let boundary = root.x == grid[points - 1];
        candidates.push(Candidate {
            gamma: root.x,
            loglik: restricted_loglik(spec, root.x)?,
            iterations: root.iterations,
            bracket: root.bracket,
            boundary,
        });
    }

    let count = candidates.len();
    if count > 1 {
        log::debug!("restricted likelihood has {count} local maxima on the search interval");
    }
    let best = candidates
        .into_iter()
        .reduce(|a, b| if b.loglik > a.loglik { b } else { a })
        .ok_or_else(|| Error::NoConvergence("no candidate root found".into()))?;

    Ok((
        best.gamma,
        SolveDiagnostics {
            iterations: best.iterations,
            evaluations,
            bracket: best.bracket,
            boundary: best.boundary,
            candidates: count,
            loglik: best.loglik,
        },
    ))
}

/// `σ̂²_ε = y'P_γ²y / tr(P_γ)`.
pub fn sigma_eps<T: Real>(spec: &SpectralGrm<T>, gamma_hat: T) -> Result<T> {
    let t = spec.evaluate(gamma_hat)?.traces;
    if !(t.tr_p > T::zero()) {
        return Err(Error::Degenerate(format!("tr(P) = {} at gamma = {gamma_hat}", t.tr_p)));
    }
    Ok(t.quad_p2 / t.tr_p)
}

/// `h² = γ / (1 + γ)`
pub fn heritability_from_ratio<T: Real>(gamma: T) -> T {
    gamma / (T::one() + gamma)
}

pub fn fit<T: Real>(spec: &SpectralGrm<T>) -> Result<RemlFit<T>> {
    fit_with(spec, &SolverOptions::default())
}

pub fn fit_with<T: Real>(spec: &SpectralGrm<T>, opts: &SolverOptions) -> Result<RemlFit<T>> {
    let (gamma_hat, diagnostics) = solve_gamma(spec, opts)?;
    let sigma2_eps_hat = sigma_eps(spec, gamma_hat)?;
    Ok(RemlFit {
        gamma_hat,
        sigma2_eps_hat,
        sigma2_alpha_hat: gamma_hat * sigma2_eps_hat,
        h2_hat: heritability_from_ratio(gamma_hat),
        iterations: diagnostics.iterations,
        bracket: diagnostics.bracket,
        boundary: diagnostics.boundary,
        diagnostics,
    })
}
