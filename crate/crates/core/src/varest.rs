//! Misspecification-robust variance estimators for `σ̂²_ε`, `γ̂` and `ĥ²`.
//!
//! With `P = P_γ̂`, `K = Z̃Z̃'` and `Q = PKP`:
//!
//! ```text
//! A = tr(QK) [tr(P²) tr(QK) - tr²(Q)] / [tr²(P) tr²(PK)]
//! B = tr(QK)/tr(PK) - tr(Q)/tr(P)
//! C = tr[{P/tr(P) - PK/tr(PK)}²]
//!   = tr(P²)/tr²(P) - 2 tr(Q)/(tr(P) tr(PK)) + tr(QK)/tr²(PK)
//!
//! var(σ̂²_ε) ≈ 2 σ̂⁴_ε A / B²
//! var(γ̂)    ≈ 2 C / B²
//! var(ĥ²)   ≈ 2 C / [(1 + γ̂)⁴ B²]
//! ```
//!
//! Both factors of 2 come from var(y'My) = 2σ⁴ tr{(MV)²} for Gaussian `y`:
//! the estimating equation `g = y'Dy` with `D = Q/tr(PK) - P²/tr(P)` has
//! variance `2σ⁴C` (using `PVP = P`) and expected slope `-σ²B`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grm::{SpectralGrm, TraceBundle};
use crate::reml::RemlFit;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbcStats<T> {
    pub a_hat: T,
    pub b_hat: T,
    pub c_hat: T,
    /// `tr(QK)/tr(PK)`, kept for the degeneracy test on `B`.
    pub ratio_qk_pk: T,
}

/// Which power of `σ̂²_ε` multiplies `A/B²` in the residual-variance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExponentMode {
    /// `2 σ̂⁴ A / B²`; scales as `c⁴` under `y -> c y`.
    #[default]
    Quartic,
    /// `2 σ̂² A / B²`, the factor as printed in the closed-form estimator.
    QuadraticLiteral,
}

impl std::fmt::Display for ExponentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExponentMode::Quartic => "quartic",
            ExponentMode::QuadraticLiteral => "quadratic-literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimates<T> {
    pub var_sigma2_eps: T,
    pub var_gamma: T,
    pub var_h2: T,
    pub exponent_mode: ExponentMode,
}

/// `|B|` below this multiple of `max(1, tr(QK)/tr(PK))` is treated as zero.
const B_DEGENERATE_REL: f64 = 1e-14;

/// `A`, `B`, `C` from a trace bundle. Ratios with `tr(PK) = 0` in the
/// denominator (null relatedness) are taken as zero.
pub fn abc_from_traces<T: Real>(t: &TraceBundle<T>) -> AbcStats<T> {
    let two = T::lit(2.0);
    let (tp, tpk) = (t.tr_p, t.tr_pk);
    let ratio_qk_pk = if tpk > T::zero() { t.tr_qk / tpk } else { T::zero() };
    let ratio_q_p = t.tr_q / tp;
    let a_hat = if tpk > T::zero() {
        t.tr_qk * (t.tr_p2 * t.tr_qk - t.tr_q * t.tr_q) / (tp * tp * tpk * tpk)
    } else {
        T::zero()
    };
    let b_hat = ratio_qk_pk - ratio_q_p;
    let mut c_hat = t.tr_p2 / (tp * tp);
    if tpk > T::zero() {
        c_hat += t.tr_qk / (tpk * tpk) - two * t.tr_q / (tp * tpk);
    }
    AbcStats { a_hat, b_hat, c_hat, ratio_qk_pk }
}

/// `Â`, `B̂`, `Ĉ` at `γ̂` from a single trace evaluation.
pub fn abc_statistics<T: Real>(spec: &SpectralGrm<T>, gamma_hat: T) -> Result<AbcStats<T>> {
    let t = spec.evaluate(gamma_hat)?.traces;
    Ok(abc_from_traces(&t))
}

impl<T: Real> AbcStats<T> {
    /// Fails when `B̂` is numerically zero, in which case none of the variance
    /// estimators is defined.
    pub fn check_denominator(&self) -> Result<()> {
        let scale = T::one().max(self.ratio_qk_pk.abs());
        if !(self.b_hat.abs() >= T::lit(B_DEGENERATE_REL) * scale) {
            return Err(Error::Degenerate(format!(
                "B = {:e} relative to {:e}",
                self.b_hat, scale
            )));
        }
        Ok(())
    }
}

pub fn var_sigma_eps<T: Real>(fit: &RemlFit<T>, abc: &AbcStats<T>, mode: ExponentMode) -> Result<T> {
    abc.check_denominator()?;
    let s = fit.sigma2_eps_hat;
    let factor = match mode {
        ExponentMode::Quartic => s * s,
        ExponentMode::QuadraticLiteral => s,
    };
    Ok(T::lit(2.0) * factor * abc.a_hat / (abc.b_hat * abc.b_hat))
}

pub fn var_gamma<T: Real>(abc: &AbcStats<T>) -> Result<T> {
    abc.check_denominator()?;
    Ok(T::lit(2.0) * abc.c_hat / (abc.b_hat * abc.b_hat))
}

/// Delta method through `h² = γ/(1+γ)`.
pub fn var_h2<T: Real>(fit: &RemlFit<T>, abc: &AbcStats<T>) -> Result<T> {
    let vg = var_gamma(abc)?;
    let d = T::one() + fit.gamma_hat;
    Ok(vg / (d * d * d * d))
}

pub fn variance_estimates<T: Real>(
    fit: &RemlFit<T>,
    abc: &AbcStats<T>,
    mode: ExponentMode,
) -> Result<VarianceEstimates<T>> {
    let est = VarianceEstimates {
        var_sigma2_eps: var_sigma_eps(fit, abc, mode)?,
        var_gamma: var_gamma(abc)?,
        var_h2: var_h2(fit, abc)?,
        exponent_mode: mode,
    };
    for (name, v) in [
        ("var(sigma2_eps)", est.var_sigma2_eps),
        ("var(gamma)", est.var_gamma),
        ("var(h2)", est.var_h2),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    Ok(est)
}
