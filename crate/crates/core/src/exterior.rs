//! Exterior algebra on the 2^n multi-index basis: wedge and contraction
//! matrices plus their degree-restricted commutators.

use nalgebra::DMatrix;

/// Increasing multi-indices of {0..n-1} grouped by degree. Basis order is
/// degree-major, lexicographic within a degree.
#[derive(Debug, Clone)]
pub struct ExteriorBasis {
    pub n: usize,
    /// For each degree k, the list of index sets (ascending).
    pub by_degree: Vec<Vec<Vec<usize>>>,
}

impl ExteriorBasis {
    pub fn new(n: usize) -> Self {
        let mut by_degree: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n + 1];
        for mask in 0u32..(1 << n) {
            let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            by_degree[set.len()].push(set);
        }
        for lists in by_degree.iter_mut() {
            lists.sort();
        }
        ExteriorBasis { n, by_degree }
    }

    pub fn dim(&self, degree: usize) -> usize {
        self.by_degree[degree].len()
    }

    pub fn index_of(&self, degree: usize, set: &[usize]) -> usize {
        self.by_degree[degree]
            .iter()
            .position(|s| s == set)
            .expect("multi-index not in basis")
    }
}

/// Wedge matrices `E_i`, contraction matrices `I_j` and the per-degree
/// commutators `A_ij = E_i I_j - I_j E_i`.
#[derive(Debug, Clone)]
pub struct ExteriorAlgebraTables {
    pub basis: ExteriorBasis,
    /// wedge[i]: degree k -> k+1 blocks, indexed wedge[i][k] (k < n).
    pub wedge: Vec<Vec<DMatrix<f64>>>,
    /// contraction[j]: degree k -> k-1 blocks, indexed contraction[j][k] (k >= 1).
    pub contraction: Vec<Vec<DMatrix<f64>>>,
    /// commutator[i][j][k]: A_ij restricted to degree k (square dim C(n,k)).
    pub commutator: Vec<Vec<Vec<DMatrix<f64>>>>,
}

/// Sign of inserting `i` into ascending `set` (which must not contain `i`):
/// (-1)^{number of elements of set below i}.
fn wedge_sign(set: &[usize], i: usize) -> f64 {
    let below = set.iter().filter(|&&j| j < i).count();
    if below % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn build_exterior_tables(n: usize) -> ExteriorAlgebraTables {
    let basis = ExteriorBasis::new(n);
    let mut wedge = Vec::with_capacity(n);
    let mut contraction = Vec::with_capacity(n);
    for i in 0..n {
        // E_i on degree k: C(n,k+1) x C(n,k)
        let mut e_blocks = Vec::new();
        for k in 0..n {
            let rows = basis.dim(k + 1);
            let cols = basis.dim(k);
            let mut m = DMatrix::zeros(rows, cols);
            for (col, set) in basis.by_degree[k].iter().enumerate() {
                if set.contains(&i) {
                    continue;
                }
                let mut target = set.clone();
                target.push(i);
                target.sort_unstable();
                let row = basis.index_of(k + 1, &target);
                m[(row, col)] = wedge_sign(set, i);
            }
            e_blocks.push(m);
        }
        wedge.push(e_blocks);

        // I_i on degree k: C(n,k-1) x C(n,k), stored at index k
        let mut i_blocks = vec![DMatrix::zeros(0, 0)];
        for k in 1..=n {
            let rows = basis.dim(k - 1);
            let cols = basis.dim(k);
            let mut m = DMatrix::zeros(rows, cols);
            for (col, set) in basis.by_degree[k].iter().enumerate() {
                if let Some(pos) = set.iter().position(|&j| j == i) {
                    let mut target = set.clone();
                    target.remove(pos);
                    let row = basis.index_of(k - 1, &target);
                    m[(row, col)] = if pos % 2 == 0 { 1.0 } else { -1.0 };
                }
            }
            i_blocks.push(m);
        }
        contraction.push(i_blocks);
    }

    // commutators per degree
    let mut commutator = Vec::with_capacity(n);
    for i in 0..n {
        let mut rows_j = Vec::with_capacity(n);
        for j in 0..n {
            let mut per_degree = Vec::with_capacity(n + 1);
            for k in 0..=n {
                let dim = basis.dim(k);
                let mut a = DMatrix::zeros(dim, dim);
                // E_i I_j: needs k >= 1
                if k >= 1 {
                    a += &wedge[i][k - 1] * &contraction[j][k];
                }
                // I_j E_i: needs k < n
                if k < n {
                    a -= &contraction[j][k + 1] * &wedge[i][k];
                }
                per_degree.push(a);
            }
            rows_j.push(per_degree);
        }
        commutator.push(rows_j);
    }

    ExteriorAlgebraTables { basis, wedge, contraction, commutator }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dim_one_commutators() {
        let t = build_exterior_tables(1);
        assert_eq!(t.commutator[0][0][0][(0, 0)], -1.0);
        assert_eq!(t.commutator[0][0][1][(0, 0)], 1.0);
    }

    #[test]
    fn dim_two_degree_one_diagonal_commutator() {
        let t = build_exterior_tables(2);
        // basis of degree 1 is [dx1, dx2]
        let a11 = &t.commutator[0][0][1];
        assert_eq!(a11[(0, 0)], 1.0);
        assert_eq!(a11[(1, 1)], -1.0);
        assert_eq!(a11[(0, 1)], 0.0);
    }

    /// Canonical anticommutation: E_i I_i + I_i E_i = identity on every degree.
    #[test]
    fn anticommutation_identity() {
        for n in 1..=3 {
            let t = build_exterior_tables(n);
            for i in 0..n {
                for k in 0..=n {
                    let dim = t.basis.dim(k);
                    let mut anti = DMatrix::<f64>::zeros(dim, dim);
                    if k >= 1 {
                        anti += &t.wedge[i][k - 1] * &t.contraction[i][k];
                    }
                    if k < n {
                        anti += &t.contraction[i][k + 1] * &t.wedge[i][k];
                    }
                    assert_eq!(anti, DMatrix::identity(dim, dim), "n={n} i={i} k={k}");
                }
            }
        }
    }

    /// Brute force: A_ii is -1 on degree 0 and +1 on degree n.
    #[test]
    fn diagonal_commutator_extremes() {
        for n in 1..=3 {
            let t = build_exterior_tables(n);
            for i in 0..n {
                assert_eq!(t.commutator[i][i][0][(0, 0)], -1.0);
                assert_eq!(t.commutator[i][i][n][(0, 0)], 1.0);
            }
        }
    }

    /// Off-diagonal commutators anticommute: A_ij = 2 E_i I_j for i != j.
    #[test]
    fn off_diagonal_structure() {
        let t = build_exterior_tables(2);
        let a12 = &t.commutator[0][1][1];
        // on [dx1, dx2]: sends dx2 -> 2 dx1
        assert_eq!(a12[(0, 1)], 2.0);
        assert_eq!(a12[(0, 0)], 0.0);
        assert_eq!(a12[(1, 0)], 0.0);
        assert_eq!(a12[(1, 1)], 0.0);
    }
}
