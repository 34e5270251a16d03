//! Dense kernels: symmetric eigenvalues with rotation of a thin block, and a
//! small Cholesky factorization.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Real};

/// Eigenvalues of a symmetric matrix together with `U'B` for a thin block `B`,
/// where `K = U diag(λ) U'`.
///
/// Eigenvalues are returned in nonincreasing order and the rows of the rotated
/// block follow the same order. The full eigenvector matrix is never formed:
/// Householder reflectors and QL rotations are applied to `B` directly, which
/// costs O(n²·r) on top of the O(n³) tridiagonal reduction.
pub fn symmetric_eigen_rotate<T: Real>(
    mut a: DMatrix<T>,
    mut block: DMatrix<T>,
) -> Result<(Vec<T>, DMatrix<T>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("matrix is {}x{}", n, a.ncols())));
    }
    if block.nrows() != n {
        return Err(Error::Dimension(format!(
            "block has {} rows, matrix has {}",
            block.nrows(),
            n
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), block));
    }

    let (mut diag, mut off, taus) = tridiagonalize(&mut a);
    apply_reflectors_transposed(&a, &taus, &mut block);
    tridiagonal_ql(&mut diag, &mut off, &mut block)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap_or(std::cmp::Ordering::Equal));
    let eig: Vec<T> = order.iter().map(|&i| diag[i]).collect();
    let rotated = DMatrix::from_fn(n, block.ncols(), |i, c| block[(order[i], c)]);
    Ok((eig, rotated))
}

/// Projects the column space of `x` out of a symmetric matrix and a vector.
///
/// With `x = QR` (Householder) and `L` the last `n - q` columns of `Q`, returns
/// `L'KL` and `L'y`. The columns of `L` are an orthonormal basis of the
/// orthogonal complement of `col(x)`; `x` must have full column rank.
pub fn complement_transform<T: Real>(
    mut k: DMatrix<T>,
    x: &DMatrix<T>,
    y: &[T],
) -> Result<(DMatrix<T>, Vec<T>)> {
    let n = k.nrows();
    let q = x.ncols();
    if k.ncols() != n || x.nrows() != n || y.len() != n {
        return Err(Error::Dimension(format!(
            "K is {}x{}, X has {} rows, y has {} entries",
            n,
            k.ncols(),
            x.nrows(),
            y.len()
        )));
    }
    if q >= n {
        return Err(Error::Dimension(format!("need q < n, got q = {q}, n = {n}")));
    }
    let mut xw = x.clone();
    let mut y = y.to_vec();
    let mut v = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    for c in 0..q {
        let m = n - c;
        let (alpha, tail_norm) = {
            let col = &xw.as_slice()[c * n + c..(c + 1) * n];
            (col[0], dot(&col[1..], &col[1..]).sqrt())
        };
        if tail_norm == T::zero() {
            continue;
        }
        let beta = -alpha.signum() * alpha.hypot(tail_norm);
        let tau = (beta - alpha) / beta;
        let scale = T::one() / (alpha - beta);
        let v = &mut v[..m];
        v[0] = T::one();
        for (vi, &xi) in v[1..].iter_mut().zip(&xw.as_slice()[c * n + c + 1..(c + 1) * n]) {
            *vi = xi * scale;
        }

        for j in c..q {
            let col = &mut xw.as_mut_slice()[j * n + c..(j + 1) * n];
            let s = tau * dot(v, col);
            axpy(-s, v, col);
        }
        let s = tau * dot(v, &y[c..]);
        axpy(-s, v, &mut y[c..]);

        // S <- H S H on the trailing block S = K[c.., c..].
        let w = &mut w[..m];
        w.fill(T::zero());
        for (j, &vj) in v.iter().enumerate() {
            let col = &k.as_slice()[(c + j) * n + c..(c + j + 1) * n];
            axpy(tau * vj, col, w);
        }
        let half_alpha = T::lit(0.5) * tau * dot(v, w);
        axpy(-half_alpha, v, w);
        for j in 0..m {
            let (vj, wj) = (v[j], w[j]);
            let col = &mut k.as_mut_slice()[(c + j) * n + c..(c + j + 1) * n];
            for i in 0..m {
                col[i] -= v[i] * wj + w[i] * vj;
            }
        }
    }
    let kl = k.view((q, q), (n - q, n - q)).into_owned();
    Ok((kl, y.split_off(q)))
}

/// Householder reduction `A = Q T Q'` working on the lower triangle.
///
/// On return the strictly-lower part of column `k` below the subdiagonal holds
/// the tail of reflector `k` (its leading entry is an implicit one).
fn tridiagonalize<T: Real>(a: &mut DMatrix<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = a.nrows();
    let mut off = vec![T::zero(); n];
    let mut taus = vec![T::zero(); n.saturating_sub(1)];
    let half = T::lit(0.5);
    let mut v = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];

    for k in 0..n.saturating_sub(1) {
        let m = n - k - 1;
        let (alpha, sigma) = {
            let col = &a.as_slice()[k * n + k + 1..(k + 1) * n];
            (col[0], dot(&col[1..], &col[1..]))
        };
        if m == 1 || sigma == T::zero() {
            off[k] = alpha;
            continue;
        }
        let norm = (alpha * alpha + sigma).sqrt();
        let beta = if alpha <= T::zero() { norm } else { -norm };
        let tau = (beta - alpha) / beta;
        let scale = T::one() / (alpha - beta);
        {
            let col = &mut a.as_mut_slice()[k * n + k + 1..(k + 1) * n];
            col[0] = beta;
            for x in col[1..].iter_mut() {
                *x *= scale;
            }
            v[0] = T::one();
            v[1..m].copy_from_slice(&col[1..]);
        }
        off[k] = beta;
        taus[k] = tau;

        // p = tau * A22 v, using the lower triangle of the trailing block.
        let v = &v[..m];
        let p = &mut p[..m];
        p.iter_mut().for_each(|x| *x = T::zero());
        let data = a.as_mut_slice();
        for j in 0..m {
            let start = (k + 1 + j) * n + (k + 1 + j);
            let col = &data[start..start + (m - j)];
            let vj = v[j];
            p[j] += col[0] * vj + dot(&col[1..], &v[j + 1..]);
            axpy(vj, &col[1..], &mut p[j + 1..]);
        }
        for x in p.iter_mut() {
            *x *= tau;
        }
        // w = p - (tau/2)(p'v) v, stored back into p.
        let coeff = half * tau * dot(p, v);
        for (pi, &vi) in p.iter_mut().zip(v) {
            *pi -= coeff * vi;
        }
        // A22 -= v w' + w v'
        for j in 0..m {
            let start = (k + 1 + j) * n + (k + 1 + j);
            let col = &mut data[start..start + (m - j)];
            let (wj, vj) = (p[j], v[j]);
            for ((c, &vi), &wi) in col.iter_mut().zip(&v[j..]).zip(&p[j..]) {
                *c -= vi * wj + wi * vj;
            }
        }
    }
    let diag = (0..n).map(|i| a[(i, i)]).collect();
    (diag, off, taus)
}

/// `B <- Q' B` with `Q = H_0 H_1 ... H_{n-2}`.
fn apply_reflectors_transposed<T: Real>(a: &DMatrix<T>, taus: &[T], block: &mut DMatrix<T>) {
    let n = a.nrows();
    let r = block.ncols();
    for (k, &tau) in taus.iter().enumerate() {
        if tau == T::zero() {
            continue;
        }
        let tail = &a.as_slice()[k * n + k + 2..(k + 1) * n];
        for c in 0..r {
            let col = &mut block.as_mut_slice()[c * n + k + 1..(c + 1) * n];
            let s = tau * (col[0] + dot(tail, &col[1..]));
            col[0] -= s;
            axpy(-s, tail, &mut col[1..]);
        }
    }
}

/// Implicit-shift QL on a symmetric tridiagonal matrix (diagonal `d`,
/// subdiagonal `e` with `e[i] = T[i+1, i]`). Each rotation is applied to the
/// rows of `block`, producing `S' block` where `T = S diag(d) S'`.
fn tridiagonal_ql<T: Real>(d: &mut [T], e: &mut [T], block: &mut DMatrix<T>) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = T::zero();
    let eps = T::epsilon();
    let two = T::lit(2.0);
    let r_cols = block.ncols();
    let max_iter = 60;
    let mut f = T::zero();
    let mut tst1 = T::zero();

    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::NoConvergence(format!(
                        "tridiagonal QL stalled at index {l}"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for col in 0..r_cols {
                        let bi = block[(i, col)];
                        let bi1 = block[(i + 1, col)];
                        block[(i + 1, col)] = s * bi + c * bi1;
                        block[(i, col)] = c * bi - s * bi1;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

/// Lower Cholesky factor of a small symmetric positive-definite matrix.
///
/// Fails when a pivot falls below `rel_tol` times the largest diagonal entry.
pub fn cholesky<T: Real>(m: &DMatrix<T>, rel_tol: T) -> Result<DMatrix<T>> {
    let q = m.nrows();
    if m.ncols() != q {
        return Err(Error::Dimension(format!("cholesky of {}x{}", q, m.ncols())));
    }
    let max_diag = (0..q).map(|i| m[(i, i)].abs()).fold(T::zero(), T::max);
    let mut l = DMatrix::<T>::zeros(q, q);
    for j in 0..q {
        let mut s = m[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > rel_tol * max_diag) || !s.is_finite() {
            return Err(Error::Singular(format!(
                "pivot {j} is {s:e} (max diagonal {max_diag:e})"
            )));
        }
        let d = s.sqrt();
        l[(j, j)] = d;
        for i in j + 1..q {
            let mut t = m[(i, j)];
            for k in 0..j {
                t -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = t / d;
        }
    }
    Ok(l)
}

/// Solves `L L' X = B` in place given the lower Cholesky factor.
pub fn cholesky_solve<T: Real>(l: &DMatrix<T>, b: &mut DMatrix<T>) {
    let q = l.nrows();
    for c in 0..b.ncols() {
        for i in 0..q {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
        for i in (0..q).rev() {
            let mut s = b[(i, c)];
            for k in i + 1..q {
                s -= l[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// `log det(L L') = 2 Σ log L_ii`
pub fn cholesky_logdet<T: Real>(l: &DMatrix<T>) -> T {
    let two = T::lit(2.0);
    (0..l.nrows()).map(|i| two * l[(i, i)].ln()).sum()
}
