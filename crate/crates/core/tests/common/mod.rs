//! Dense reference implementations used by the integration tests.
//!
//! Everything here forms `V`, `P` and `Q` explicitly and never touches the
//! eigenbasis code paths under test.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use misreml::rng::SimRng;
use misreml::{draw_allele_freqs, draw_genotypes, standardize};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub ztilde: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

impl Instance {
    pub fn grm(&self) -> DMatrix<f64> {
        &self.ztilde * self.ztilde.transpose()
    }

    pub fn spectral(&self) -> misreml::SpectralGrm64 {
        misreml::spectral(&self.ztilde, &self.x, &self.y).expect("spectral")
    }
}

/// Hardy-Weinberg genotypes, intercept plus `q - 1` Gaussian covariates and a
/// phenotype with genetic share `h2` spread over all retained SNPs.
pub fn random_instance(rng: &mut SimRng, n: usize, p: usize, q: usize, h2: f64) -> Instance {
    let ztilde = loop {
        let freqs = draw_allele_freqs(p, rng);
        let geno = draw_genotypes(&freqs, n, rng).unwrap();
        if let Ok(d) = standardize::<f64>(&geno) {
            break d.ztilde;
        }
    };
    let x = DMatrix::from_fn(n, q, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let pr = ztilde.ncols();
    let alpha: Vec<f64> = (0..pr).map(|_| rng.sample::<f64, _>(StandardNormal) * h2.sqrt()).collect();
    let y = (0..n)
        .map(|i| {
            let g: f64 = (0..pr).map(|j| ztilde[(i, j)] * alpha[j]).sum();
            let fixed: f64 = (0..q).map(|j| x[(i, j)] * 0.3 * (j as f64 + 1.0)).sum();
            fixed + g + (1.0 - h2).sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Instance { ztilde, x, y }
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.trace()
}

pub fn quad(m: &DMatrix<f64>, y: &[f64]) -> f64 {
    let v = nalgebra::DVector::from_column_slice(y);
    (v.transpose() * m * &v)[(0, 0)]
}

pub fn v_inverse(k: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = k.nrows();
    let v = DMatrix::identity(n, n) + k * gamma;
    v.cholesky().expect("V is positive definite").inverse()
}

/// Orthonormal basis `L` (`n × (n - q)`) of the orthogonal complement of
/// the column space of `X`, from the eigenvectors of `I - X(X'X)⁻¹X'`.
pub fn complement_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let xtx_inv = (x.transpose() * x).cholesky().expect("X has full column rank").inverse();
    let m = DMatrix::identity(n, n) - x * xtx_inv * x.transpose();
    let eig = nalgebra::SymmetricEigen::new(m);
    let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    assert_eq!(cols.len(), n - x.ncols());
    DMatrix::from_fn(n, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])])
}

/// `P = L(L'VL)⁻¹L'`, which equals `V⁻¹ - V⁻¹X(X'V⁻¹X)⁻¹X'V⁻¹` but avoids
/// the cancellation of that form when `γ` is large.
pub fn projection(k: &DMatrix<f64>, x: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = k.nrows();
    let l = complement_basis(x);
    let v = DMatrix::identity(n, n) + k * gamma;
    let inner = (l.transpose() * v * &l).cholesky().expect("L'VL is positive definite").inverse();
    &l * inner * l.transpose()
}

/// The textbook form `V⁻¹ - V⁻¹X(X'V⁻¹X)⁻¹X'V⁻¹`.
pub fn projection_direct(k: &DMatrix<f64>, x: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let vi = v_inverse(k, gamma);
    let vix = &vi * x;
    let m = x.transpose() * &vix;
    let mi = m.cholesky().expect("X'V⁻¹X is positive definite").inverse();
    &vi - &vix * mi * vix.transpose()
}

#[derive(Debug, Clone, Copy)]
pub struct DenseTraces {
    pub tr_p: f64,
    pub tr_p2: f64,
    pub tr_pk: f64,
    pub tr_q: f64,
    pub tr_qk: f64,
    pub tr_p2k: f64,
    pub tr_pkpk: f64,
    pub quad_p: f64,
    pub quad_p2: f64,
    pub quad_q: f64,
}

pub fn dense_traces(k: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64], gamma: f64) -> DenseTraces {
    let p = projection(k, x, gamma);
    let q = &p * k * &p;
    let p2 = &p * &p;
    let pk = &p * k;
    DenseTraces {
        tr_p: trace(&p),
        tr_p2: trace(&p2),
        tr_pk: trace(&pk),
        tr_q: trace(&q),
        tr_qk: trace(&(&q * k)),
        tr_p2k: trace(&(&p2 * k)),
        tr_pkpk: trace(&(&pk * &pk)),
        quad_p: quad(&p, y),
        quad_p2: quad(&p2, y),
        quad_q: quad(&q, y),
    }
}

/// `(A, B, C)` written directly from the matrix definitions.
pub fn dense_abc(k: &DMatrix<f64>, x: &DMatrix<f64>, gamma: f64) -> (f64, f64, f64) {
    let p = projection(k, x, gamma);
    let pk = &p * k;
    let q = &pk * &p;
    let tp = trace(&p);
    let tpk = trace(&pk);
    let tq = trace(&q);
    let tqk = trace(&(&q * k));
    let tp2 = trace(&(&p * &p));
    let a = tqk * (tp2 * tqk - tq * tq) / (tp * tp * tpk * tpk);
    let b = tqk / tpk - tq / tp;
    let d = &p / tp - &pk / tpk;
    let c = trace(&(&d * &d));
    (a, b, c)
}

/// Restricted log-likelihood with the scale profiled out, up to a constant:
/// `-½[log det(L'VL) + (n - q) log(y'Py)]`, which differs from
/// `-½[log det V + log det(X'V⁻¹X) + (n - q) log(y'Py)]` by `log det(X'X)/2`.
pub fn dense_loglik(k: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64], gamma: f64) -> f64 {
    let n = k.nrows();
    let q = x.ncols();
    let l = complement_basis(x);
    let v = DMatrix::identity(n, n) + k * gamma;
    let chol = (l.transpose() * v * &l).cholesky().unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let inner = chol.inverse();
    let p = &l * inner * l.transpose();
    -0.5 * (logdet + (n - q) as f64 * quad(&p, y).ln())
}

/// `log det(X'X)`, the constant separating the two likelihood forms.
pub fn logdet_xtx(x: &DMatrix<f64>) -> f64 {
    let c = (x.transpose() * x).cholesky().unwrap();
    2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub const GAMMA_MIN: f64 = 1e-8;
pub const GAMMA_MAX: f64 = 1e6;

/// Maximizer of the dense restricted likelihood over `[GAMMA_MIN, GAMMA_MAX]`:
/// a log-spaced grid followed by golden-section refinement around the best
/// grid point.
pub fn oracle_gamma(k: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let (lo, hi) = (GAMMA_MIN.ln(), GAMMA_MAX.ln());
    let points = 701;
    let f = |u: f64| dense_loglik(k, x, y, u.exp());
    let grid: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&u| f(u)).collect();
    let best = (0..points).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(points - 1)];
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-11 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let u = 0.5 * (a + b);
    // The maximum may sit on a bound; compare against the endpoints directly.
    let mut best_u = u;
    for end in [lo, hi] {
        if f(end) >= f(best_u) {
            best_u = end;
        }
    }
    best_u.exp()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Relative error with a floor on the scale so that values near zero are
/// compared absolutely against `scale`.
pub fn rel_err_scaled(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / b.abs().max(scale)
}

/// Largest discrepancies seen over an oracle sweep.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleSweep {
    pub instances: usize,
    pub interior: usize,
    pub trace_err: f64,
    pub gamma_err: f64,
    pub abc_err: f64,
    pub identity_err: f64,
}

fn upd(slot: &mut f64, v: f64) {
    if !(v <= *slot) {
        *slot = v;
    }
}

/// Random instances with `n ≤ 50`, `p ≤ 80`, `q ≤ 3`, compared against the
/// dense oracles at the fitted ratio and at a random ratio.
pub fn oracle_sweep(count: usize, seed: u64) -> OracleSweep {
    let mut out = OracleSweep::default();
    for i in 0..count {
        let mut rng = misreml::rng::stream(seed, i as u64);
        let n = rng.random_range(10..=50);
        let p = rng.random_range(5..=80);
        let q = rng.random_range(1..=3);
        let h2 = rng.random_range(0.0..0.95);
        let inst = random_instance(&mut rng, n, p, q, h2);
        let k = inst.grm();
        let spec = inst.spectral();
        let fit = misreml::fit(&spec).expect("fit");
        let random_gamma = 10f64.powf(rng.random_range(-3.0..3.0));
        for gamma in [fit.gamma_hat, random_gamma] {
            let fast = misreml::trace_bundle(&spec, gamma).unwrap();
            let d = dense_traces(&k, &inst.x, &inst.y, gamma);
            for (f, o) in [
                (fast.tr_p, d.tr_p),
                (fast.tr_p2, d.tr_p2),
                (fast.tr_pk, d.tr_pk),
                (fast.tr_q, d.tr_q),
                (fast.tr_qk, d.tr_qk),
                (fast.quad_p2, d.quad_p2),
                (fast.quad_q, d.quad_q),
            ] {
                upd(&mut out.trace_err, rel_err(f, o));
            }
            upd(&mut out.identity_err, rel_err(d.tr_p2k, d.tr_q));
            upd(&mut out.identity_err, rel_err(d.tr_pkpk, d.tr_qk));
            upd(&mut out.identity_err, rel_err(fast.tr_q, d.tr_p2k));
            upd(&mut out.identity_err, rel_err(fast.tr_qk, d.tr_pkpk));

            let abc = misreml::abc_statistics(&spec, gamma).unwrap();
            let (a, b, c) = dense_abc(&k, &inst.x, gamma);
            upd(&mut out.abc_err, rel_err(abc.a_hat, a));
            upd(&mut out.abc_err, rel_err(abc.b_hat, b));
            upd(&mut out.abc_err, rel_err(abc.c_hat, c));
        }
        let oracle = oracle_gamma(&k, &inst.x, &inst.y);
        if !fit.boundary {
            out.interior += 1;
        }
        upd(&mut out.gamma_err, rel_err(fit.gamma_hat, oracle));
        out.instances += 1;
    }
    out
}

/// Largest relative deviations under `y -> 3y` and `y -> y + Xβ₀`.
#[derive(Debug, Default, Clone, Copy)]
pub struct InvarianceSweep {
    pub instances: usize,
    /// `γ̂`, `ĥ²`, `v̂(γ̂)`, `v̂(ĥ²)` unchanged; `σ̂²_ε` and quartic
    /// `v̂(σ̂²_ε)` scaled by 9 and 81.
    pub scale_err: f64,
    pub shift_err: f64,
}

fn summary(inst_x: &DMatrix<f64>, z: &DMatrix<f64>, y: &[f64]) -> [f64; 6] {
    let spec = misreml::spectral(z, inst_x, y).unwrap();
    let f = misreml::fit(&spec).unwrap();
    let abc = misreml::abc_statistics(&spec, f.gamma_hat).unwrap();
    [
        f.gamma_hat,
        f.h2_hat,
        misreml::var_gamma(&abc).unwrap(),
        misreml::var_h2(&f, &abc).unwrap(),
        f.sigma2_eps_hat,
        misreml::var_sigma_eps(&f, &abc, misreml::ExponentMode::Quartic).unwrap(),
    ]
}

pub fn invariance_sweep(count: usize, seed: u64) -> InvarianceSweep {
    let mut out = InvarianceSweep::default();
    for i in 0..count {
        let mut rng = misreml::rng::stream(seed, i as u64);
        let n = rng.random_range(40..=120);
        let p = rng.random_range(50..=300);
        let q = rng.random_range(1..=3);
        let h2 = rng.random_range(0.3..0.8);
        let inst = random_instance(&mut rng, n, p, q, h2);
        let base = summary(&inst.x, &inst.ztilde, &inst.y);
        let y3: Vec<f64> = inst.y.iter().map(|v| 3.0 * v).collect();
        let scaled = summary(&inst.x, &inst.ztilde, &y3);
        let factors = [1.0, 1.0, 1.0, 1.0, 9.0, 81.0];
        for k in 0..6 {
            upd(&mut out.scale_err, rel_err(scaled[k], factors[k] * base[k]));
        }
        let beta0: Vec<f64> = (0..q).map(|_| rng.random_range(-5.0..5.0)).collect();
        let shifted_y: Vec<f64> = (0..n)
            .map(|r| inst.y[r] + (0..q).map(|c| inst.x[(r, c)] * beta0[c]).sum::<f64>())
            .collect();
        let shifted = summary(&inst.x, &inst.ztilde, &shifted_y);
        for k in 0..6 {
            upd(&mut out.shift_err, rel_err(shifted[k], base[k]));
        }
        out.instances += 1;
    }
    out
}

/// Bisection for an increasing function on `[lo, hi]`.
pub fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `Φ` straight from `erfc`, independent of the library's wrappers.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Largest `|Φ⁻¹(t) - x*|` over `count` evenly spaced probabilities, with
/// `x*` found by bisection on `Φ`.
pub fn quantile_grid_error(count: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..count {
        let t = (k as f64 + 0.5) / count as f64;
        let x = misreml::normal_quantile(t).unwrap();
        let oracle = bisect(phi, t, -40.0, 40.0);
        worst = worst.max((x - oracle).abs());
    }
    worst
}

/// Delta-method `var(γ̂)` from first principles at `γ` with `σ² = 1`:
/// `var(y'D y) / (d/dγ' E_γ[y'D(γ')y])²` for `y ~ N(0, V_γ)`, the slope taken
/// by central differences. Uses none of the `A, B, C` algebra.
pub fn delta_var_gamma(k: &DMatrix<f64>, x: &DMatrix<f64>, gamma: f64) -> f64 {
    let n = k.nrows();
    let d_of = |g: f64| {
        let p = projection(k, x, g);
        let q = &p * k * &p;
        let tr_pk = trace(&(&p * k));
        let tr_p = trace(&p);
        q / tr_pk - (&p * &p) / tr_p
    };
    let v = DMatrix::identity(n, n) + k * gamma;
    let dv = d_of(gamma) * &v;
    let var_g = 2.0 * trace(&(&dv * &dv));
    let h = 1e-4 * gamma.max(1e-3);
    let slope = (trace(&(d_of(gamma + h) * &v)) - trace(&(d_of(gamma - h) * &v))) / (2.0 * h);
    var_g / (slope * slope)
}
