//! Confidence intervals: normal, truncated normal and ratio bootstrap.

use rand_distr::StandardNormal;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grm::SpectralGrm;
use crate::reml::{fit_with, RemlFit, SolverOptions};
use crate::rng;
use crate::scalar::Real;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Sigma2Eps,
    Gamma,
    H2,
}

impl Parameter {
    /// Natural range used for truncation.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Parameter::Sigma2Eps | Parameter::Gamma => (0.0, f64::INFINITY),
            Parameter::H2 => (0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Parameter::Sigma2Eps => "sigma2_eps",
            Parameter::Gamma => "gamma",
            Parameter::H2 => "h2",
        }
    }

    pub fn estimate<T: Real>(self, fit: &RemlFit<T>) -> T {
        match self {
            Parameter::Sigma2Eps => fit.sigma2_eps_hat,
            Parameter::Gamma => fit.gamma_hat,
            Parameter::H2 => fit.h2_hat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Normal,
    Truncated,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval<T> {
    pub lower: T,
    pub upper: T,
    /// Nominal coverage `1 - λ`.
    pub level: f64,
    pub kind: IntervalKind,
    pub parameter: Option<Parameter>,
}

impl<T: Real> Interval<T> {
    pub fn for_parameter(mut self, parameter: Parameter) -> Self {
        self.parameter = Some(parameter);
        self
    }

    pub fn contains(&self, theta: T) -> bool {
        self.lower <= theta && theta <= self.upper
    }

    pub fn lambda(&self) -> f64 {
        1.0 - self.level
    }
}

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail `1 - Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Inverse standard normal CDF.
///
/// Wichura's AS 241 rational approximation followed by one Newton step
/// against the `erfc`-based CDF. The lower tail is solved directly and the
/// upper tail by symmetry so the residual is never formed from `1 - t`.
pub fn normal_quantile(t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidInput(format!("probability {t} outside (0, 1)")));
    }
    if t > 0.5 {
        return Ok(-lower_quantile(1.0 - t));
    }
    Ok(lower_quantile(t))
}

fn lower_quantile(t: f64) -> f64 {
    let x = as241(t);
    if !x.is_finite() {
        return x;
    }
    let pdf = normal_pdf(x);
    if pdf <= 0.0 {
        return x;
    }
    x - (normal_cdf(x) - t) / pdf
}

#[allow(clippy::excessive_precision)]
fn as241(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((r * 2509.0809287301226727 + 33430.575583588128105) * r
            + 67265.770927008700853)
            * r
            + 45921.953931549871457)
            * r
            + 13731.693765509461125)
            * r
            + 1971.5909503065514427)
            * r
            + 133.14166789178437745)
            * r
            + 3.387132872796366608;
        let den = ((((((r * 5226.495278852545925 + 28729.085735721942674) * r
            + 39307.89580009271061)
            * r
            + 21213.794301586595867)
            * r
            + 5394.1960214247511077)
            * r
            + 687.1870074920579083)
            * r
            + 42.313330701600911252)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r
            + 0.24178072517745061177)
            * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734;
        let den = ((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r
            + 0.0151986665636164571966)
            * r
            + 0.14810397642748007459)
            * r
            + 0.68976733498510000455)
            * r
            + 1.6763848301838038494)
            * r
            + 2.05319162663775882187)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r
            + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772;
        let den = ((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r
            + 1.8463183175100546818e-5)
            * r
            + 7.868691311456132591e-4)
            * r
            + 0.0148753612908506148525)
            * r
            + 0.13692988092273580531)
            * r
            + 0.59983220655588793769)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidInput(format!("lambda = {lambda} outside (0, 1)")));
    }
    Ok(())
}

/// `θ̂ ± z_{λ/2} √v̂`
pub fn normal_ci<T: Real>(theta_hat: T, v_hat: T, lambda: f64) -> Result<Interval<T>> {
    check_lambda(lambda)?;
    if !(v_hat >= T::zero()) || !v_hat.is_finite() {
        return Err(Error::InvalidInput(format!("variance estimate {v_hat} must be >= 0")));
    }
    let z = T::lit(-normal_quantile(lambda / 2.0)?);
    let half = z * v_hat.sqrt();
    Ok(Interval {
        lower: theta_hat - half,
        upper: theta_hat + half,
        level: 1.0 - lambda,
        kind: IntervalKind::Normal,
        parameter: None,
    })
}

/// Normal(θ̂, v̂) restricted to `[lo, hi]`, evaluated in standardized units.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    /// Work with upper-tail probabilities (support far right of the mean).
    upper_tail: bool,
    base: f64,
    mass: f64,
}

const MIN_TRUNCATED_MASS: f64 = 1e-12;

impl TruncatedNormal {
    pub fn new(mean: f64, variance: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidInput(format!(
                "truncated normal needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        if !(lo < hi) || lo.is_nan() || hi.is_nan() {
            return Err(Error::InvalidInput(format!("truncation bounds [{lo}, {hi}]")));
        }
        let sd = variance.sqrt();
        let a = (lo - mean) / sd;
        let b = (hi - mean) / sd;
        let upper_tail = a > 0.0;
        let (base, mass) = if upper_tail {
            let sa = normal_sf(a);
            (sa, sa - normal_sf(b))
        } else {
            let fa = normal_cdf(a);
            (fa, normal_cdf(b) - fa)
        };
        if !(mass >= MIN_TRUNCATED_MASS) {
            return Err(Error::Degenerate(format!(
                "truncated normal keeps mass {mass:e} of N({mean}, {variance}) on [{lo}, {hi}]"
            )));
        }
        Ok(TruncatedNormal { mean, sd, lo, hi, upper_tail, base, mass })
    }

    pub fn quantile(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("probability {t} outside [0, 1]")));
        }
        let z = if self.upper_tail {
            let s = self.base - t * self.mass;
            if s <= 0.0 {
                f64::INFINITY
            } else if s >= 1.0 {
                f64::NEG_INFINITY
            } else {
                -normal_quantile(s)?
            }
        } else {
            let u = self.base + t * self.mass;
            if u <= 0.0 {
                f64::NEG_INFINITY
            } else if u >= 1.0 {
                f64::INFINITY
            } else {
                normal_quantile(u)?
            }
        };
        Ok((self.mean + self.sd * z).clamp(self.lo, self.hi))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let z = (x - self.mean) / self.sd;
        if self.upper_tail {
            (self.base - normal_sf(z)) / self.mass
        } else {
            (normal_cdf(z) - self.base) / self.mass
        }
    }
}

/// Interval between the `λ/2` and `1 - λ/2` quantiles of Normal(θ̂, v̂)
/// truncated to `bounds`.
pub fn truncated_ci<T: Real>(
    theta_hat: T,
    v_hat: T,
    lambda: f64,
    bounds: (f64, f64),
) -> Result<Interval<T>> {
    check_lambda(lambda)?;
    let law = TruncatedNormal::new(theta_hat.as_f64(), v_hat.as_f64(), bounds.0, bounds.1)?;
    Ok(Interval {
        lower: T::lit(law.quantile(lambda / 2.0)?),
        upper: T::lit(law.quantile(1.0 - lambda / 2.0)?),
        level: 1.0 - lambda,
        kind: IntervalKind::Truncated,
        parameter: None,
    })
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(n - 1) t` in the sorted sample).
pub fn empirical_quantile(sorted: &[f64], t: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidInput("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("probability {t} outside [0, 1]")));
    }
    let h = (sorted.len() - 1) as f64 * t;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// `(θ̂ / q*_{1-λ/2}, θ̂ / q*_{λ/2})` from bootstrap ratios `θ*/θ̂`.
pub fn ratio_interval(theta_hat: f64, ratios: &[f64], lambda: f64) -> Result<Interval<f64>> {
    check_lambda(lambda)?;
    let mut sorted: Vec<f64> = ratios.to_vec();
    if sorted.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("bootstrap ratio".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let q_lo = empirical_quantile(&sorted, lambda / 2.0)?;
    let q_hi = empirical_quantile(&sorted, 1.0 - lambda / 2.0)?;
    let upper = if q_lo > 0.0 { theta_hat / q_lo } else { f64::INFINITY };
    let lower = if q_hi > 0.0 { theta_hat / q_hi } else { f64::INFINITY };
    Ok(Interval {
        lower,
        upper,
        level: 1.0 - lambda,
        kind: IntervalKind::Bootstrap,
        parameter: None,
    })
}

/// Largest tolerated share of failed bootstrap refits.
const MAX_BOOT_FAILURE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutcome {
    pub interval: Interval<f64>,
    pub ratios: Vec<f64>,
    pub failures: usize,
}

/// Parametric bootstrap from the fitted working model.
///
/// Replicate `b` draws `y* = Xβ̂ + Z̃α* + ε*` with `α* ~ N(0, σ̂²_α I)` and
/// `ε* ~ N(0, σ̂²_ε I)`. REML sees `y*` only through `U'L'y*`, which is
/// `diag(√(σ̂²_α μ_j + σ̂²_ε)) z` whatever `β̂` is, so no refactorization is
/// needed. Each replicate uses its own stream under `seed`. Endpoints are
/// clipped to the parameter's natural range.
pub fn bootstrap_ci<T: Real>(
    fit: &RemlFit<T>,
    spec: &SpectralGrm<T>,
    parameter: Parameter,
    n_boot: usize,
    lambda: f64,
    seed: u64,
) -> Result<BootstrapOutcome> {
    check_lambda(lambda)?;
    if n_boot < 100 {
        return Err(Error::InvalidInput(format!("n_boot = {n_boot}, need at least 100")));
    }
    if fit.boundary {
        return Err(Error::InvalidInput(
            "bootstrap intervals need an interior REML fit".into(),
        ));
    }
    let theta_hat = parameter.estimate(fit).as_f64();
    if !(theta_hat > 0.0) {
        return Err(Error::InvalidInput(format!("{} estimate is {theta_hat}", parameter.name())));
    }
    let s2a = fit.sigma2_alpha_hat.as_f64();
    let s2e = fit.sigma2_eps_hat.as_f64();
    let sds: Vec<f64> = spec.eigvals.iter().map(|&mu| (s2a * mu.as_f64() + s2e).sqrt()).collect();
    let opts = SolverOptions::default();

    let draws: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let rot_y: Vec<T> = sds
                .iter()
                .map(|&sd| T::lit(sd * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let refit = spec
                .with_rotated_phenotype(rot_y)
                .and_then(|s| fit_with(&s, &opts));
            match refit {
                Ok(f) => Some(parameter.estimate(&f).as_f64() / theta_hat),
                Err(e) => {
                    log::debug!("bootstrap replicate {b} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let ratios: Vec<f64> = draws.iter().flatten().copied().collect();
    let failures = n_boot - ratios.len();
    if failures as f64 > MAX_BOOT_FAILURE * n_boot as f64 {
        return Err(Error::NoConvergence(format!(
            "{failures} of {n_boot} bootstrap refits failed"
        )));
    }
    let mut interval = ratio_interval(theta_hat, &ratios, lambda)?.for_parameter(parameter);
    let (lo, hi) = parameter.bounds();
    interval.lower = interval.lower.clamp(lo, hi);
    interval.upper = interval.upper.clamp(lo, hi);
    Ok(BootstrapOutcome { interval, ratios, failures })
}
