//! Locally optimal block preconditioned conjugate gradient for the
//! smallest eigenpairs of large sparse symmetric operators (the 2D
//! discretizations), with a deflated shift-and-invert polish to push
//! residuals to the certificate tolerance. Operator images are carried
//! alongside the basis so each iteration costs one block of matvecs.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sparse::CsrMatrix;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Basis block with the operator images kept in lockstep.
struct Block {
    v: Vec<Vec<f64>>,
    av: Vec<Vec<f64>>,
}

impl Block {
    fn empty() -> Self {
        Block { v: vec![], av: vec![] }
    }

    fn len(&self) -> usize {
        self.v.len()
    }

    /// Modified Gram-Schmidt with re-orthogonalization; the same
    /// elementary operations are applied to the carried images, so the
    /// invariant av = A v survives. Near-dependent columns are dropped.
    fn orthonormalize(&mut self) {
        let mut out_v: Vec<Vec<f64>> = Vec::with_capacity(self.v.len());
        let mut out_av: Vec<Vec<f64>> = Vec::with_capacity(self.v.len());
        for (mut v, mut av) in self.v.drain(..).zip(self.av.drain(..)) {
            let initial = norm(&v).max(1e-300);
            for _pass in 0..2 {
                for (b, ab) in out_v.iter().zip(&out_av) {
                    let d = dot(&v, b);
                    axpy(&mut v, -d, b);
                    axpy(&mut av, -d, ab);
                }
            }
            let n = norm(&v);
            if n > 1e-10 * initial.max(1.0) && n > 0.0 {
                for x in v.iter_mut() {
                    *x /= n;
                }
                for x in av.iter_mut() {
                    *x /= n;
                }
                out_v.push(v);
                out_av.push(av);
            }
        }
        self.v = out_v;
        self.av = out_av;
    }

    /// Rayleigh-Ritz on the block: eigenvalues ascending plus the
    /// coefficient matrix.
    fn rayleigh_ritz(&self) -> (Vec<f64>, DMatrix<f64>) {
        let m = self.len();
        let mut proj = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let val = dot(&self.v[i], &self.av[j]);
                proj[(i, j)] = val;
                proj[(j, i)] = val;
            }
        }
        let eig = SymmetricEigen::new(proj);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vecs = DMatrix::zeros(m, m);
        for (newc, &oldc) in order.iter().enumerate() {
            for r in 0..m {
                vecs[(r, newc)] = eig.eigenvectors[(r, oldc)];
            }
        }
        (vals, vecs)
    }

    fn combine(&self, coeffs: &DMatrix<f64>, col: usize, skip: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.v[0].len();
        let mut out = vec![0.0; n];
        let mut aout = vec![0.0; n];
        for (i, (b, ab)) in self.v.iter().zip(&self.av).enumerate() {
            if i < skip {
                continue;
            }
            let c = coeffs[(i, col)];
            if c != 0.0 {
                axpy(&mut out, c, b);
                axpy(&mut aout, c, ab);
            }
        }
        (out, aout)
    }
}

pub struct LobpcgResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Deflated conjugate gradient solve of (A - shift) y = x restricted to
/// the orthogonal complement of `deflate`.
fn deflated_cg(
    a: &CsrMatrix,
    shift: f64,
    rhs: &[f64],
    deflate: &[&Vec<f64>],
    max_iter: usize,
    rel_tol: f64,
) -> Vec<f64> {
    let n = rhs.len();
    let project = |v: &mut Vec<f64>| {
        for b in deflate {
            let d = dot(v, b);
            axpy(v, -d, b);
        }
    };
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out = a.matvec_alloc(v);
        for (o, vi) in out.iter_mut().zip(v) {
            *o -= shift * vi;
        }
        out
    };
    let mut b = rhs.to_vec();
    project(&mut b);
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let rs0 = rs.max(1e-300);
    for _ in 0..max_iter {
        let mut ap = apply(&p);
        project(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rs / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        let rs_new = dot(&r, &r);
        if rs_new < rel_tol * rel_tol * rs0 {
            break;
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    x
}

/// Smallest `count` eigenpairs of a sparse symmetric positive
/// semidefinite matrix by shift-invert subspace iteration: the operators
/// here have their interesting spectrum in [0, 1] and a gap at the
/// deformation scale, so a unit shift makes (A + s)^{-1} a sharp filter.
pub fn smallest_eigenpairs(
    a: &CsrMatrix,
    count: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> LobpcgResult {
    let n = a.nrows;
    let block_size = (count + 4).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag = a.diagonal();
    let mean_diag = diag.iter().map(|d| d.abs()).sum::<f64>() / n.max(1) as f64;
    let sigma = 1.0;

    // Jacobi-preconditioned CG on the SPD matrix A + sigma
    let pcg = |rhs: &[f64], rel_tol: f64, max_it: usize| -> Vec<f64> {
        let apply = |v: &[f64]| -> Vec<f64> {
            let mut out = a.matvec_alloc(v);
            for (o, vi) in out.iter_mut().zip(v) {
                *o += sigma * vi;
            }
            out
        };
        let prec = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .enumerate()
                .map(|(i, x)| x / (diag[i] + sigma).max(1e-12))
                .collect()
        };
        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut z = prec(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let r0 = norm(&r).max(1e-300);
        for _ in 0..max_it {
            let ap = apply(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            axpy(&mut x, alpha, &p);
            axpy(&mut r, -alpha, &ap);
            if norm(&r) < rel_tol * r0 {
                break;
            }
            z = prec(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            rz = rz_new;
        }
        x
    };

    let mut x = Block::empty();
    for _ in 0..block_size {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let av = a.matvec_alloc(&v);
        x.v.push(v);
        x.av.push(av);
    }
    x.orthonormalize();
    let mut lambdas: Vec<f64> = vec![0.0; block_size];
    let mut residuals: Vec<f64> = vec![f64::INFINITY; block_size];
    let outer_cap = max_iter.clamp(4, 24);
    for outer in 0..outer_cap {
        // inverse-power step on every column
        let rel = if outer < 2 { 1e-6 } else { 1e-12 };
        let mut next = Block::empty();
        for v in &x.v {
            let y = pcg(v, rel, 500);
            let ay = a.matvec_alloc(&y);
            next.v.push(y);
            next.av.push(ay);
        }
        next.orthonormalize();
        let (vals, coeffs) = next.rayleigh_ritz();
        let keep = next.len().min(block_size);
        let mut rotated = Block::empty();
        for c in 0..keep {
            let (v, av) = next.combine(&coeffs, c, 0);
            rotated.v.push(v);
            rotated.av.push(av);
        }
        lambdas = vals[..keep].to_vec();
        residuals.clear();
        for c in 0..rotated.len() {
            let mut r = rotated.av[c].clone();
            axpy(&mut r, -lambdas[c], &rotated.v[c]);
            residuals.push(norm(&r) / norm(&rotated.v[c]).max(1e-300));
        }
        x = rotated;
        if residuals.iter().take(count).all(|r| *r <= tol) {
            break;
        }
        if x.len() < count {
            while x.len() < block_size {
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let av = a.matvec_alloc(&v);
                x.v.push(v);
                x.av.push(av);
            }
            x.orthonormalize();
        }
    }

    // normalize and polish with deflated shift-invert iterations
    let mut vecs: Vec<Vec<f64>> = Vec::new();
    let mut res: Vec<f64> = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    for (c, v) in x.v.iter().take(count).enumerate() {
        let nn = norm(v).max(1e-300);
        vecs.push(v.iter().map(|x| x / nn).collect());
        vals.push(lambdas.get(c).copied().unwrap_or(0.0));
        res.push(residuals.get(c).copied().unwrap_or(f64::INFINITY));
    }
    let guard = lambdas.get(count).copied();
    let spread = lambdas.last().copied().unwrap_or(1.0).max(mean_diag).max(1.0);
    for j in 0..vecs.len() {
        if res[j] <= tol {
            continue;
        }
        for _round in 0..5 {
            let next_val = if j + 1 < vals.len() {
                vals[j + 1]
            } else {
                guard.unwrap_or(vals[j] + spread * 1e-3)
            };
            let gap = (next_val - vals[j]).max(1e-8 * spread);
            let shift = vals[j] - 0.5 * gap.min(0.1 * spread);
            let earlier: Vec<&Vec<f64>> = vecs[..j].iter().collect();
            let mut y = deflated_cg(a, shift, &vecs[j], &earlier, 800, 1e-10);
            for b in &earlier {
                let d = dot(&y, b);
                axpy(&mut y, -d, b);
            }
            let nrm = norm(&y);
            if nrm == 0.0 {
                break;
            }
            for v in y.iter_mut() {
                *v /= nrm;
            }
            let ay = a.matvec_alloc(&y);
            let mu = dot(&y, &ay);
            let mut r = ay;
            axpy(&mut r, -mu, &y);
            let rn = norm(&r);
            if rn < res[j] {
                vecs[j] = y;
                vals[j] = mu;
                res[j] = rn;
            }
            if res[j] <= tol {
                break;
            }
        }
    }

    let mut order: Vec<usize> = (0..vecs.len()).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    let vecs: Vec<Vec<f64>> = order.iter().map(|&i| vecs[i].clone()).collect();
    let res: Vec<f64> = order.iter().map(|&i| res[i]).collect();
    let vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let converged = res.len() >= count && res.iter().all(|r| *r <= tol);
    LobpcgResult { eigenvalues: vals, eigenvectors: vecs, residuals: res, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_2d(nx: usize) -> CsrMatrix {
        let n = nx * nx;
        let h = 1.0 / (nx as f64 + 1.0);
        let mut trips = vec![];
        for i in 0..nx {
            for j in 0..nx {
                let node = i + j * nx;
                trips.push((node, node, 4.0 / (h * h)));
                if i + 1 < nx {
                    trips.push((node, node + 1, -1.0 / (h * h)));
                    trips.push((node + 1, node, -1.0 / (h * h)));
                }
                if j + 1 < nx {
                    trips.push((node, node + nx, -1.0 / (h * h)));
                    trips.push((node + nx, node, -1.0 / (h * h)));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, trips)
    }

    #[test]
    fn dirichlet_square_eigenvalues() {
        let nx = 40;
        let a = laplacian_2d(nx);
        let h = 1.0 / (nx as f64 + 1.0);
        let out = smallest_eigenpairs(&a, 3, 1e-8, 400, 7);
        assert!(out.converged, "residuals: {:?}", out.residuals);
        let exact = |k: usize, l: usize| {
            (2.0 - 2.0 * (k as f64 * std::f64::consts::PI * h).cos()) / (h * h)
                + (2.0 - 2.0 * (l as f64 * std::f64::consts::PI * h).cos()) / (h * h)
        };
        let expect = [exact(1, 1), exact(1, 2), exact(2, 1)];
        for (got, want) in out.eigenvalues.iter().zip(expect) {
            assert!((got - want).abs() < 1e-6 * want, "{got} vs {want}");
        }
    }
}
