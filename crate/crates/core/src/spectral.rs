//! Spectral bound and Perron eigenvector of Metzler generators, resolvent
//! solves, irreducibility, and a dense eigenvalue oracle.
//!
//! For an irreducible Metzler `L` the spectral bound `s(L)` is a simple real
//! eigenvalue with a strictly positive eigenvector, and for every positive
//! vector `x` the Collatz–Wielandt ratios bracket it:
//!
//! ```text
//! min_i (Lx)_i / x_i  <=  s(L)  <=  max_i (Lx)_i / x_i
//! ```
//!
//! [`spectral_bound`] runs the power method on the nonnegative resolvent
//! `(λI − L)⁻¹`, always with `λ` above the current upper ratio, so every
//! iterate stays positive and the bracket tightens geometrically.
//! [`power_iteration_shifted`] is the plain power method on `L + cI`; it is
//! kept as a cross-check because it converges slowly when diffusion is stiff.

use std::collections::VecDeque;

use thiserror::Error;

use crate::grid::PopulationState;
use crate::linalg::{DenseMatrix, LinalgError, Lu};
use crate::ops::GeneratorMatrix;

pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest dimension accepted by [`dense_spectrum`].
pub const DENSE_LIMIT: usize = 400;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("matrix is not Metzler (negative off-diagonal entry)")]
    NotMetzler,
    #[error("matrix is reducible")]
    Reducible,
    #[error("no convergence after {iterations} iterations (bracket [{lower}, {upper}], residual {residual})")]
    NoConvergence {
        iterations: usize,
        lower: f64,
        upper: f64,
        residual: f64,
    },
    #[error("dense eigensolver limited to dimension {DENSE_LIMIT} (got {0})")]
    TooLarge(usize),
    #[error("QR iteration did not converge for eigenvalue {0}")]
    QrFailure(usize),
    #[error("resolvent: {0}")]
    Linalg(#[from] LinalgError),
    #[error("state length {got} does not match operator dimension {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Power method on the shifted resolvent.
    Resolvent,
    /// Power method on `L + cI`.
    ShiftedPower,
    /// Dense QR eigenvalues, eigenvector by inverse iteration.
    DenseFallback,
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub bound: f64,
    /// Positive eigenvector with `total_norm = 1`.
    pub eigvec: PopulationState,
    pub iterations: usize,
    /// `‖L·v − bound·v‖` in the weighted norm.
    pub residual: f64,
    /// Final Collatz–Wielandt bracket.
    pub lower: f64,
    pub upper: f64,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub tol: f64,
    /// Defaults to `100·(N+1)`.
    pub max_iter: Option<usize>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

/// Weighted logarithmic norm `max_j (L_jj + Σ_{i≠j} w_i|L_ij|/w_j)`, an upper
/// bound on the real part of every eigenvalue.
pub fn log_norm_weighted(l: &DenseMatrix, w: &[f64]) -> f64 {
    let n = l.dim();
    (0..n)
        .map(|j| {
            let off: f64 = (0..n).filter(|&i| i != j).map(|i| w[i] * l[(i, j)].abs()).sum();
            l[(j, j)] + off / w[j]
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn reach_all(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if !seen[i] && i != j && edge(i, j) {
                seen[i] = true;
                count += 1;
                queue.push_back(i);
            }
        }
    }
    count == n
}

/// Strong connectivity of the graph with an edge `j → i` whenever
/// `L_ij > 0`, `i ≠ j`, decided by a forward and a backward search from node 0.
pub fn check_irreducible(l: &GeneratorMatrix) -> bool {
    let m = l.matrix();
    let n = m.dim();
    if n <= 1 {
        return true;
    }
    reach_all(n, |i, j| m[(i, j)] > 0.0) && reach_all(n, |i, j| m[(j, i)] > 0.0)
}

fn weighted_dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn weighted_abs(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b.abs()).sum()
}

fn normalize(w: &[f64], x: &mut [f64]) {
    let s = weighted_abs(w, x);
    x.iter_mut().for_each(|v| *v /= s);
}

fn collatz_wielandt(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (a, b) in x.iter().zip(y) {
        if !(*a > 0.0) {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        let r = b / a;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

fn check_perron_input(l: &GeneratorMatrix) -> Result<(), SpectralError> {
    if !l.is_metzler() {
        return Err(SpectralError::NotMetzler);
    }
    if !check_irreducible(l) {
        return Err(SpectralError::Reducible);
    }
    Ok(())
}

fn finish(l: &GeneratorMatrix, mut x: Vec<f64>, iterations: usize, method: Method) -> SpectralResult {
    let w = l.weights();
    normalize(w, &mut x);
    let y = l.matrix().matvec(&x);
    let bound = weighted_dot(w, &y) / weighted_dot(w, &x);
    let (lower, upper) = collatz_wielandt(&x, &y);
    let r: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - bound * b).collect();
    SpectralResult {
        bound,
        residual: weighted_abs(w, &r),
        eigvec: PopulationState::from_coords(x),
        iterations,
        lower,
        upper,
        method,
    }
}

/// Spectral bound and normalized positive Perron eigenvector of an
/// irreducible Metzler generator.
pub fn spectral_bound(l: &GeneratorMatrix, tol: f64, max_iter: usize) -> Result<SpectralResult, SpectralError> {
    spectral_bound_from(l, None, tol, max_iter)
}

pub fn spectral_bound_with(l: &GeneratorMatrix, opts: &SpectralOptions) -> Result<SpectralResult, SpectralError> {
    spectral_bound_from(l, None, opts.tol, opts.max_iter.unwrap_or(100 * l.dim()))
}

/// As [`spectral_bound`], warm-started from `start` when it is strictly positive.
pub fn spectral_bound_from(
    l: &GeneratorMatrix,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralResult, SpectralError> {
    check_perron_input(l)?;
    let n = l.dim();
    let w = l.weights();
    let m = l.matrix();
    let mut x: Vec<f64> = match start {
        Some(s) if s.len() == n && s.iter().all(|v| *v > 0.0) => s.to_vec(),
        _ => vec![1.0; n],
    };
    normalize(w, &mut x);
    let ceiling = log_norm_weighted(m, w);
    let mut prev = f64::NAN;
    let (mut lo, mut hi, mut res) = (f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY);
    for it in 1..=max_iter {
        let y = m.matvec(&x);
        let (l0, h0) = collatz_wielandt(&x, &y);
        lo = l0;
        hi = h0.min(ceiling);
        let est = weighted_dot(w, &y) / weighted_dot(w, &x);
        let scale = est.abs().max(1.0);
        let r: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - est * b).collect();
        res = weighted_abs(w, &r);
        if res <= tol * scale && ((est - prev).abs() <= tol * scale || hi - lo <= tol * scale) {
            return Ok(finish(l, x, it, Method::Resolvent));
        }
        prev = est;
        let delta = (hi - lo).max(1e-3 * hi.abs().max(1.0));
        let shift = if lo.is_finite() { hi + delta } else { ceiling + 1.0 };
        let mut shifted = m.scale(-1.0);
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        let lu = match Lu::factor(shifted) {
            Ok(lu) => lu,
            Err(_) => break,
        };
        let mut next = lu.solve(&x)?;
        // the resolvent is nonnegative above s(L); clear roundoff-level negatives
        next.iter_mut().for_each(|v| *v = v.max(0.0));
        normalize(w, &mut next);
        x = next;
    }
    if n <= DENSE_LIMIT {
        return dense_fallback(l, tol);
    }
    Err(SpectralError::NoConvergence {
        iterations: max_iter,
        lower: lo,
        upper: hi,
        residual: res,
    })
}

fn dense_fallback(l: &GeneratorMatrix, tol: f64) -> Result<SpectralResult, SpectralError> {
    let eig = dense_spectrum(l)?;
    let s = eig[0].re;
    let n = l.dim();
    let mut shifted = l.matrix().scale(-1.0);
    let shift = s + 1e-8 * s.abs().max(1.0);
    for i in 0..n {
        shifted[(i, i)] += shift;
    }
    let lu = Lu::factor(shifted)?;
    let mut x = vec![1.0; n];
    for it in 1..=50 {
        let mut next = lu.solve(&x)?;
        next.iter_mut().for_each(|v| *v = v.abs());
        normalize(l.weights(), &mut next);
        let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if it > 2 && change <= tol {
            break;
        }
    }
    let mut out = finish(l, x, 0, Method::DenseFallback);
    out.bound = s;
    Ok(out)
}

/// Plain power iteration on `P = L + cI`, `c = 1 + max_i |L_ii|`.
pub fn power_iteration_shifted(
    l: &GeneratorMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralResult, SpectralError> {
    check_perron_input(l)?;
    let m = l.matrix();
    let w = l.weights();
    let n = m.dim();
    let c = 1.0 + (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let mut x = vec![1.0; n];
    normalize(w, &mut x);
    let mut prev = f64::NAN;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for it in 1..=max_iter {
        let y = m.matvec(&x);
        let est = weighted_dot(w, &y) / weighted_dot(w, &x);
        (lo, hi) = collatz_wielandt(&x, &y);
        let mut next: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a + c * b).collect();
        normalize(w, &mut next);
        let change = weighted_abs(w, &next.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        x = next;
        let scale = est.abs().max(1.0);
        if change <= tol && (est - prev).abs() <= tol * scale {
            return Ok(finish(l, x, it, Method::ShiftedPower));
        }
        prev = est;
    }
    Err(SpectralError::NoConvergence {
        iterations: max_iter,
        lower: lo,
        upper: hi,
        residual: f64::NAN,
    })
}

/// Solution of a resolvent equation together with whether `λ` was above the
/// spectral bound (where positivity of the solution is guaranteed).
#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub u: PopulationState,
    pub above_bound: bool,
}

/// Solve `(λI − L)·u = h` by LU factorization.
pub fn resolvent_apply(
    l: &GeneratorMatrix,
    lambda: f64,
    h: &PopulationState,
) -> Result<ResolventSolution, SpectralError> {
    let n = l.dim();
    if h.coords().len() != n {
        return Err(SpectralError::Dimension {
            expected: n,
            got: h.coords().len(),
        });
    }
    let above_bound = if l.is_metzler() && check_irreducible(l) {
        let s = spectral_bound(l, DEFAULT_TOL, 100 * n)?;
        lambda > s.upper.min(s.bound + DEFAULT_TOL)
    } else {
        lambda > log_norm_weighted(l.matrix(), l.weights())
    };
    let mut a = l.matrix().scale(-1.0);
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let u = Lu::factor(a)?.solve(h.coords())?;
    Ok(ResolventSolution {
        u: PopulationState::from_coords(u),
        above_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

/// All eigenvalues, by descending real part (ties: descending imaginary part).
pub fn dense_spectrum(l: &GeneratorMatrix) -> Result<Vec<Eigenvalue>, SpectralError> {
    dense_eigenvalues(l.matrix())
}

pub fn dense_eigenvalues(m: &DenseMatrix) -> Result<Vec<Eigenvalue>, SpectralError> {
    let n = m.dim();
    if n > DENSE_LIMIT {
        return Err(SpectralError::TooLarge(n));
    }
    let mut a: Vec<f64> = m.as_slice().to_vec();
    balance(&mut a, n);
    hessenberg(&mut a, n);
    let mut eig = hqr(&mut a, n)?;
    eig.sort_by(|p, q| q.re.total_cmp(&p.re).then(q.im.total_cmp(&p.im)));
    Ok(eig)
}

fn balance(a: &mut [f64], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j * n + i].abs();
                    r += a[i * n + j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i * n + j] *= g;
                    }
                    for j in 0..n {
                        a[j * n + i] *= f;
                    }
                }
            }
        }
    }
}

/// Reduction to upper Hessenberg form by stabilized elementary similarity
/// transformations.
fn hessenberg(a: &mut [f64], n: usize) {
    if n < 3 {
        return;
    }
    for m in 1..n - 1 {
        let mut x = 0.0f64;
        let mut piv = m;
        for j in m..n {
            if a[j * n + m - 1].abs() > x.abs() {
                x = a[j * n + m - 1];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..n {
                a.swap(piv * n + j, m * n + j);
            }
            for j in 0..n {
                a.swap(j * n + piv, j * n + m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[i * n + m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i * n + m - 1] = y;
                    for j in m..n {
                        a[i * n + j] -= y * a[m * n + j];
                    }
                    for j in 0..n {
                        a[j * n + m] += y * a[j * n + i];
                    }
                }
            }
        }
    }
    for i in 2..n {
        for j in 0..i - 1 {
            a[i * n + j] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper Hessenberg matrix by the Francis double-shift QR
/// iteration with deflation.
fn hqr(a: &mut [f64], n: usize) -> Result<Vec<Eigenvalue>, SpectralError> {
    let idx = |i: isize, j: isize| (i as usize) * n + j as usize;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i * n + j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    while nn >= 0 {
        let mut its = 0;
        let mut l;
        loop {
            l = nn;
            while l > 0 {
                let mut s = a[idx(l - 1, l - 1)].abs() + a[idx(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[idx(l, l - 1)].abs() <= f64::EPSILON * s {
                    a[idx(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[idx(nn, nn)];
            if l == nn {
                wr[nn as usize] = x + t;
                wi[nn as usize] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[idx(nn - 1, nn - 1)];
            let mut w = a[idx(nn, nn - 1)] * a[idx(nn - 1, nn)];
            if l == nn - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                let (i1, i0) = (nn as usize, (nn - 1) as usize);
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[i0] = x + z;
                    wr[i1] = x + z;
                    if z != 0.0 {
                        wr[i1] = x - w / z;
                    }
                    wi[i0] = 0.0;
                    wi[i1] = 0.0;
                } else {
                    wr[i0] = x + p;
                    wr[i1] = x + p;
                    wi[i0] = z;
                    wi[i1] = -z;
                }
                nn -= 2;
                break;
            }
            if its == 60 {
                return Err(SpectralError::QrFailure(nn as usize));
            }
            if its == 10 || its == 20 || its == 40 {
                // exceptional shift
                t += x;
                for i in 0..=nn {
                    a[idx(i, i)] -= x;
                }
                let s = a[idx(nn, nn - 1)].abs() + a[idx(nn - 1, nn - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nn - 2;
            let mut z;
            loop {
                z = a[idx(m, m)];
                r = x - z;
                let s = y - z;
                p = (r * s - w) / a[idx(m + 1, m)] + a[idx(m, m + 1)];
                q = a[idx(m + 1, m + 1)] - z - r - s;
                r = a[idx(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[idx(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[idx(m - 1, m - 1)].abs() + z.abs() + a[idx(m + 1, m + 1)].abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in m..nn - 1 {
                a[idx(i + 2, i)] = 0.0;
                if i != m {
                    a[idx(i + 2, i - 1)] = 0.0;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a[idx(k, k - 1)];
                    q = a[idx(k + 1, k - 1)];
                    r = 0.0;
                    if k + 1 != nn {
                        r = a[idx(k + 2, k - 1)];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[idx(k, k - 1)] = -a[idx(k, k - 1)];
                        }
                    } else {
                        a[idx(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        p = a[idx(k, j)] + q * a[idx(k + 1, j)];
                        if k + 1 != nn {
                            p += r * a[idx(k + 2, j)];
                            a[idx(k + 2, j)] -= p * z;
                        }
                        a[idx(k + 1, j)] -= p * y;
                        a[idx(k, j)] -= p * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        p = x * a[idx(i, k)] + y * a[idx(i, k + 1)];
                        if k + 1 != nn {
                            p += z * a[idx(i, k + 2)];
                            a[idx(i, k + 2)] -= p * r;
                        }
                        a[idx(i, k + 1)] -= p * q;
                        a[idx(i, k)] -= p;
                    }
                }
                k += 1;
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Eigenvalue { re, im }).collect())
}
