//! Small dense helpers, preconditioned conjugate gradients and Lanczos for
//! symmetric operators given as closures.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn project_out(v: &mut [f64], u: &[f64]) {
    let c = dot(v, u);
    axpy(-c, u, v);
}

/// Solves `A x = b` for symmetric positive definite `A`, starting from `x`,
/// with the Jacobi preconditioner `diag`. Returns the iteration count.
pub(crate) fn pcg(
    apply: &dyn Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if norm(&r) <= rel_tol * bn {
            return Ok(it);
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!("conjugate gradients broke down at iteration {it}")));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if norm(&r) <= rel_tol * bn {
        Ok(max_iter)
    } else {
        Err(Error::Numerical(format!(
            "conjugate gradients did not reach {rel_tol:e} in {max_iter} iterations (residual {:e})",
            norm(&r) / bn
        )))
    }
}

/// Dense matrix of a symmetric operator on `n` coordinates.
pub(crate) fn dense_of(apply: &dyn Fn(&[f64], &mut [f64]), n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    (&m + m.transpose()) * 0.5
}

pub(crate) fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Number of eigenvalues of the symmetric tridiagonal matrix below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..alpha.len() {
        let b2 = if i == 0 { 0.0 } else { beta[i - 1] * beta[i - 1] };
        d = alpha[i] - x - b2 / d;
        if d == 0.0 {
            d = -1e-300;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn tridiagonal_smallest(alpha: &[f64], beta: &[f64]) -> f64 {
    let m = alpha.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 } + if i + 1 < m { beta[i].abs() } else { 0.0 };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(alpha, beta, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Last component of the normalised eigenvector of the tridiagonal matrix
/// for the eigenvalue `theta`, by two steps of inverse iteration.
fn last_component(alpha: &[f64], beta: &[f64], theta: f64) -> f64 {
    let m = alpha.len();
    let nz = |v: f64| if v == 0.0 { 1e-300 } else { v };
    let shift = theta - 1e-13 * theta.abs().max(1e-300);
    let mut y = vec![1.0; m];
    let mut piv = vec![0.0; m];
    for _ in 0..2 {
        let mut rhs = y.clone();
        piv[0] = alpha[0] - shift;
        for i in 1..m {
            let l = beta[i - 1] / nz(piv[i - 1]);
            piv[i] = alpha[i] - shift - l * beta[i - 1];
            rhs[i] -= l * rhs[i - 1];
        }
        y[m - 1] = rhs[m - 1] / nz(piv[m - 1]);
        for i in (0..m - 1).rev() {
            y[i] = (rhs[i] - beta[i] * y[i + 1]) / nz(piv[i]);
        }
        let n = norm(&y);
        y.iter_mut().for_each(|v| *v /= n);
    }
    y[m - 1].abs()
}

/// Smallest eigenvalue of a symmetric operator on the complement of the
/// unit eigenvector `lock` (if given), by the Lanczos recurrence without
/// reorthogonalisation. Ritz values stay inside the spectrum, so copies of
/// converged eigenvalues do not disturb the lowest one. The locked direction
/// is moved above `upper`, a bound on the spectrum, rather than projected
/// out, since rounding would bring it back at its own eigenvalue.
/// Stops on a small Ritz residual or once the Ritz value settles to 1e-8
/// relative between checks; near-degenerate bottom pairs are then resolved
/// only to about that tolerance.
pub(crate) fn lanczos_smallest(
    apply: &dyn Fn(&[f64], &mut [f64]),
    n: usize,
    lock: Option<&[f64]>,
    upper: f64,
    max_iter: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = stream_rng(seed, 0x6c616e63);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    if let Some(u) = lock {
        project_out(&mut v, u);
    }
    let nv = norm(&v);
    if nv == 0.0 {
        return Err(Error::Numerical("no room for a start vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut next_check = 50usize;
    let mut last_theta = f64::INFINITY;
    for j in 0..max_iter {
        apply(&v, &mut w);
        if let Some(u) = lock {
            axpy(2.0 * upper * dot(u, &v), u, &mut w);
        }
        let a = dot(&w, &v);
        let b_prev = beta.last().copied().unwrap_or(0.0);
        for i in 0..n {
            w[i] -= a * v[i] + b_prev * prev[i];
        }
        alpha.push(a);
        let b = norm(&w);
        if b <= 1e-14 * a.abs().max(1.0) {
            return Ok(tridiagonal_smallest(&alpha, &beta));
        }
        if j + 1 == next_check {
            next_check += (next_check / 8).max(50);
            let theta = tridiagonal_smallest(&alpha, &beta);
            let res = b * last_component(&alpha, &beta, theta);
            let settled = (theta - last_theta).abs() <= 1e-8 * theta.abs();
            if res <= 1e-7 * theta.abs().max(1e-300) || res <= 1e-15 || settled {
                return Ok(theta);
            }
            last_theta = theta;
        }
        beta.push(b);
        std::mem::swap(&mut prev, &mut v);
        for i in 0..n {
            v[i] = w[i] / b;
        }
    }
    Err(Error::Numerical(format!("Lanczos did not converge in {max_iter} iterations")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> impl Fn(&[f64], &mut [f64]) {
        move |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 2.0 * x[i] - l - r;
            }
        }
    }

    #[test]
    fn cg_solves_tridiagonal() {
        let n = 200;
        let a = laplacian(n);
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        pcg(&a, &vec![2.0; n], &b, &mut x, 1e-13, 10_000).unwrap();
        for i in 0..n {
            // discrete parabola
            let want = (i + 1) as f64 * (n - i) as f64 / 2.0;
            assert!((x[i] - want).abs() < 1e-8 * want);
        }
    }

    #[test]
    fn lanczos_matches_dense() {
        let n = 300;
        let a = laplacian(n);
        let want = 2.0 - 2.0 * (std::f64::consts::PI / (n + 1) as f64).cos();
        let got = lanczos_smallest(&a, n, None, 4.0, 20_000, 1).unwrap();
        assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
        let dense = sorted_eigenvalues(dense_of(&laplacian(40), 40));
        let want40 = 2.0 - 2.0 * (std::f64::consts::PI / 41.0).cos();
        assert!((dense[0] - want40).abs() < 1e-12);
    }

    #[test]
    fn lanczos_respects_lock() {
        // path graph Laplacian: kernel is the constant vector
        let n = 50;
        let a = move |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let mut s = 0.0;
                if i > 0 {
                    s += x[i] - x[i - 1];
                }
                if i + 1 < n {
                    s += x[i] - x[i + 1];
                }
                y[i] = s;
            }
        };
        let u = vec![1.0 / (n as f64).sqrt(); n];
        let got = lanczos_smallest(&a, n, Some(&u), 4.0, 20_000, 2).unwrap();
        let want = 2.0 - 2.0 * (std::f64::consts::PI / n as f64).cos();
        assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
    }
}
