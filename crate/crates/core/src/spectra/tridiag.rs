//! Symmetric tridiagonal eigensolver: Sturm-sequence bisection for the
//! lowest eigenvalues, inverse iteration for vectors. The 1D operators are
//! tridiagonal, where this is far more robust than a general sparse solver
//! at tunneling scales.

use crate::sparse::CsrMatrix;

/// Extract (diagonal, superdiagonal) if the matrix is tridiagonal.
pub fn as_tridiagonal(m: &CsrMatrix) -> Option<(Vec<f64>, Vec<f64>)> {
    if m.nrows != m.ncols {
        return None;
    }
    let n = m.nrows;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    for r in 0..n {
        let (cols, vals) = m.row(r);
        for (c, v) in cols.iter().zip(vals) {
            if *c == r {
                diag[r] = *v;
            } else if *c == r + 1 {
                off[r] = *v;
            } else if r > 0 && *c == r - 1 {
                // symmetric counterpart, checked below
            } else {
                return None;
            }
        }
    }
    Some((diag, off))
}

/// Number of eigenvalues strictly below `x` (Sturm count via LDL pivots).
fn count_below(diag: &[f64], off: &[f64], x: f64) -> usize {
    let n = diag.len();
    let mut count = 0;
    let mut d = diag[0] - x;
    if d < 0.0 {
        count += 1;
    }
    let tiny = f64::MIN_POSITIVE.sqrt();
    for i in 1..n {
        if d == 0.0 {
            d = tiny;
        }
        d = diag[i] - x - off[i - 1] * off[i - 1] / d;
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `count` smallest eigenvalues by bisection.
pub fn smallest_eigenvalues(diag: &[f64], off: &[f64], count: usize) -> Vec<f64> {
    let n = diag.len();
    let count = count.min(n);
    // Gershgorin bracket
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let mut radius = 0.0;
        if i > 0 {
            radius += off[i - 1].abs();
        }
        if i < n - 1 {
            radius += off[i].abs();
        }
        lo = lo.min(diag[i] - radius);
        hi = hi.max(diag[i] + radius);
    }
    let scale = hi.abs().max(lo.abs()).max(1.0);
    let tol = 1e-15 * scale;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut a = lo;
        let mut b = hi;
        // invariant: count_below(a) <= k < count_below(b)
        while b - a > tol {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if count_below(diag, off, mid) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        out.push(0.5 * (a + b));
    }
    out
}

/// Solve (A - shift I) x = rhs for tridiagonal A by LU with partial
/// pivoting (the system is nearly singular by design).
fn shifted_solve(diag: &[f64], off: &[f64], shift: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut d: Vec<f64> = diag.iter().map(|v| v - shift).collect();
    let mut du: Vec<f64> = off.to_vec();
    let mut dl: Vec<f64> = off.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut swapped = vec![false; n.saturating_sub(1)];
    let mut b = rhs.to_vec();
    if n == 1 {
        let dd = if d[0] == 0.0 { tiny } else { d[0] };
        return vec![b[0] / dd];
    }
    // factorization
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                d[i] = tiny;
            }
            let fact = dl[i] / d[i];
            dl[i] = fact;
            d[i + 1] -= fact * du[i];
            if i + 1 < n - 1 {
                // du2 stays zero in this branch
            }
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            dl[i] = fact;
            let tmp = du[i];
            du[i] = d[i + 1];
            d[i + 1] = tmp - fact * d[i + 1];
            if i + 1 < n - 1 {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du[i + 1];
            }
            swapped[i] = true;
        }
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = tiny;
    }
    // forward substitution with the recorded swaps
    for i in 0..n - 1 {
        if swapped[i] {
            let tmp = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tmp - dl[i] * b[i];
        } else {
            b[i + 1] -= dl[i] * b[i];
        }
    }
    // back substitution
    let mut x = b;
    x[n - 1] /= d[n - 1];
    if n >= 2 {
        x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    x
}

fn tri_matvec(diag: &[f64], off: &[f64], x: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = diag[i] * x[i];
        if i > 0 {
            v += off[i - 1] * x[i - 1];
        }
        if i < n - 1 {
            v += off[i] * x[i + 1];
        }
        y[i] = v;
    }
    y
}

fn orthogonalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum();
        for (xi, bi) in x.iter_mut().zip(b) {
            *xi -= dot * bi;
        }
    }
}

fn normalize(x: &mut [f64]) -> f64 {
    let n: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
    n
}

/// Eigenvalues and vectors: bisection plus inverse iteration with
/// deflation against already-computed vectors (clusters are common at
/// tunneling scales).
pub fn smallest_eigenpairs(
    diag: &[f64],
    off: &[f64],
    count: usize,
) -> Vec<(f64, Vec<f64>, f64)> {
    let n = diag.len();
    let eigenvalues = smallest_eigenvalues(diag, off, count);
    let scale = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        + 2.0 * off.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out: Vec<(f64, Vec<f64>, f64)> = Vec::with_capacity(eigenvalues.len());
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for &lambda in &eigenvalues {
        // deterministic pseudo-random start
        let mut x: Vec<f64> = (0..n)
            .map(|i| {
                let s = ((i as u64).wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
                    >> 33;
                (s as f64 / (u32::MAX as f64)) - 0.5
            })
            .collect();
        orthogonalize(&mut x, &basis);
        normalize(&mut x);
        let shift = lambda + 1e-12 * scale.max(1.0);
        let target = (50.0 * f64::EPSILON * scale.max(1.0)).max(1e-13);
        let mut best_res = f64::INFINITY;
        let mut best = x.clone();
        let mut best_mu = lambda;
        for _ in 0..20 {
            let mut y = shifted_solve(diag, off, shift, &x);
            orthogonalize(&mut y, &basis);
            if normalize(&mut y) == 0.0 {
                break;
            }
            let ay = tri_matvec(diag, off, &y);
            let mu: f64 = y.iter().zip(&ay).map(|(a, b)| a * b).sum();
            let res: f64 = ay
                .iter()
                .zip(&y)
                .map(|(a, yi)| (a - mu * yi) * (a - mu * yi))
                .sum::<f64>()
                .sqrt();
            if res < best_res {
                best_res = res;
                best = y.clone();
                best_mu = mu;
            }
            x = y;
            if best_res < target {
                break;
            }
        }
        basis.push(best.clone());
        out.push((best_mu, best, best_res));
    }
    out
}
