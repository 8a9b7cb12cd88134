//! Low end of the deformed Laplacian spectrum: eigenpair extraction with
//! residual certificates, the `[0,1]` window spaces, and rank bookkeeping
//! for the induced cohomology dimensions.

mod lobpcg;
mod tridiag;

use serde::Serialize;

use crate::geometry::CriticalPoint;
use crate::sparse::CsrMatrix;
use crate::witten::{FormGrid, WittenOperator};

/// Residual certificate required of every reported eigenpair.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Operators are positive semidefinite up to roundoff.
pub const EIGENVALUE_FLOOR: f64 = -1e-8;
/// Hard cap on requested eigenpairs.
pub const COUNT_CAP: usize = 32;
/// Window edge; eigenvalues within this distance of the edge get flagged.
pub const WINDOW_EDGE: f64 = 1.0;
pub const WINDOW_EDGE_BAND: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum SpectraError {
    #[error("count {0} exceeds cap {COUNT_CAP}")]
    CountExceedsCap(usize),
    #[error("eigensolver did not converge; best residuals {0:?}")]
    NonConvergence(Vec<f64>),
    #[error("window overcrowded; raise T ({0} eigenvalues at or below the edge)")]
    WindowOvercrowded(usize),
    #[error("eigenvalue {0:.3e} below the nonnegativity floor")]
    NegativeEigenvalue(f64),
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub eigenvalue: f64,
    pub eigenvector: FormGrid,
    pub residual: f64,
}

/// Eigenpairs of one degree with eigenvalue in `[0, 1]`, plus the first
/// eigenvalue above the window.
#[derive(Debug, Clone)]
pub struct InstantonSpace {
    pub degree: usize,
    pub pairs: Vec<EigenPair>,
    pub gap_next: f64,
    pub warnings: Vec<String>,
}

impl InstantonSpace {
    pub fn dim(&self) -> usize {
        self.pairs.len()
    }
}

/// The `count` smallest eigenpairs, sorted, residual-certified,
/// eigenvectors normalized in the cell-volume weighted norm.
pub fn lowest_eigenpairs(
    op: &WittenOperator,
    count: usize,
    seed: u64,
) -> Result<Vec<EigenPair>, SpectraError> {
    if count > COUNT_CAP {
        return Err(SpectraError::CountExceedsCap(count));
    }
    let n = op.matrix.nrows;
    let count = count.min(n);
    let vol = op.grid.spacing.powi(op.dim as i32);
    let raw: Vec<(f64, Vec<f64>, f64)> = if let Some((diag, off)) =
        tridiag::as_tridiagonal(&op.matrix)
    {
        tridiag::smallest_eigenpairs(&diag, &off, count)
    } else {
        let res = lobpcg::smallest_eigenpairs(&op.matrix, count, RESIDUAL_TOL, 600, seed);
        if !res.converged {
            return Err(SpectraError::NonConvergence(res.residuals));
        }
        res.eigenvalues
            .into_iter()
            .zip(res.eigenvectors)
            .zip(res.residuals)
            .map(|((v, x), r)| (v, x, r))
            .collect()
    };
    let mut out = Vec::with_capacity(raw.len());
    for (lambda, mut vec, residual) in raw {
        if residual > RESIDUAL_TOL {
            return Err(SpectraError::NonConvergence(vec![residual]));
        }
        if lambda < EIGENVALUE_FLOOR {
            return Err(SpectraError::NegativeEigenvalue(lambda));
        }
        // cell-volume weighted unit norm
        let nrm = (vec.iter().map(|v| v * v).sum::<f64>() * vol).sqrt();
        if nrm > 0.0 {
            for v in vec.iter_mut() {
                *v /= nrm;
            }
        }
        out.push(EigenPair {
            eigenvalue: lambda,
            eigenvector: FormGrid::from_vec(&op.grid, op.degree, vec),
            residual,
        });
    }
    out.sort_by(|a, b| a.eigenvalue.partial_cmp(&b.eigenvalue).unwrap());
    Ok(out)
}

/// All eigenpairs with eigenvalue at most 1, found by requesting batches
/// until one exceeds the window edge.
pub fn spectral_window(
    op: &WittenOperator,
    seed: u64,
) -> Result<InstantonSpace, SpectraError> {
    let mut request = 4usize;
    loop {
        let pairs = lowest_eigenpairs(op, request.min(COUNT_CAP), seed)?;
        let beyond = pairs.iter().find(|p| p.eigenvalue > WINDOW_EDGE);
        if beyond.is_none() && request < COUNT_CAP && pairs.len() == request {
            request *= 2;
            continue;
        }
        let inside: Vec<EigenPair> = pairs
            .iter()
            .filter(|p| p.eigenvalue <= WINDOW_EDGE)
            .cloned()
            .collect();
        if beyond.is_none() {
            return Err(SpectraError::WindowOvercrowded(inside.len()));
        }
        let gap_next = beyond.unwrap().eigenvalue;
        let mut warnings = Vec::new();
        for p in &pairs {
            if (p.eigenvalue - WINDOW_EDGE).abs() < WINDOW_EDGE_BAND {
                warnings.push(format!(
                    "eigenvalue {:.9e} within {WINDOW_EDGE_BAND:.0e} of the window edge",
                    p.eigenvalue
                ));
            }
        }
        return Ok(InstantonSpace { degree: op.degree, pairs: inside, gap_next, warnings });
    }
}

/// Orthonormality defect of a window basis (cell-volume weighted Gram
/// matrix against the identity).
pub fn gram_defect(space: &InstantonSpace) -> f64 {
    let m = space.pairs.len();
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let vol = space.pairs[i]
                .eigenvector
                .spacing
                .powi(space.pairs[i].eigenvector.dim as i32);
            let dot: f64 = space.pairs[i]
                .eigenvector
                .data
                .iter()
                .zip(&space.pairs[j].eigenvector.data)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * vol;
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct EigencountRow {
    pub degree: usize,
    pub window_count: usize,
    pub morse_count: usize,
    pub matches: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigencountTable {
    pub rows: Vec<EigencountRow>,
    pub threshold_met: bool,
    pub banner: Option<String>,
}

/// Compare window dimensions against Morse counts per degree.
pub fn eigencount_vs_morse(
    spaces: &[InstantonSpace],
    crit: &[CriticalPoint],
    t: f64,
    t3_threshold: f64,
) -> EigencountTable {
    let rows = spaces
        .iter()
        .map(|s| {
            let m_k = crit.iter().filter(|c| c.index == s.degree).count();
            EigencountRow {
                degree: s.degree,
                window_count: s.dim(),
                morse_count: m_k,
                matches: s.dim() == m_k,
            }
        })
        .collect();
    let threshold_met = t >= t3_threshold;
    EigencountTable {
        rows,
        threshold_met,
        banner: if threshold_met {
            None
        } else {
            Some(format!("threshold not met: T = {t} below configured T3 = {t3_threshold}"))
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BettiDegree {
    pub degree: usize,
    pub window_dim: usize,
    pub rank_out: usize,
    pub rank_in: usize,
    pub betti: usize,
    pub singular_values_out: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BettiReport {
    pub per_degree: Vec<BettiDegree>,
    pub rank_threshold_policy: String,
    pub warnings: Vec<String>,
}

impl BettiReport {
    pub fn betti_vector(&self) -> Vec<usize> {
        self.per_degree.iter().map(|d| d.betti).collect()
    }
}

/// Projected differentials `D_k`: the deformed differential compressed to
/// the window bases, one block per adjacent degree pair.
pub fn projected_differentials(
    spaces: &[InstantonSpace],
    differentials: &[CsrMatrix],
) -> Vec<nalgebra::DMatrix<f64>> {
    let n_deg = spaces.len();
    let mut projected: Vec<nalgebra::DMatrix<f64>> = Vec::new();
    for k in 0..n_deg - 1 {
        let rows = spaces[k + 1].dim();
        let cols = spaces[k].dim();
        let mut d = nalgebra::DMatrix::zeros(rows, cols);
        if rows > 0 && cols > 0 {
            let vol = spaces[k].pairs[0]
                .eigenvector
                .spacing
                .powi(spaces[k].pairs[0].eigenvector.dim as i32);
            for (j, src) in spaces[k].pairs.iter().enumerate() {
                let image = differentials[k].matvec_alloc(&src.eigenvector.data);
                for (i, dst) in spaces[k + 1].pairs.iter().enumerate() {
                    let dot: f64 = dst
                        .eigenvector
                        .data
                        .iter()
                        .zip(&image)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        * vol;
                    d[(i, j)] = dot;
                }
            }
        }
        projected.push(d);
    }
    projected
}

/// Project the deformed differential onto the window bases and read off
/// cohomology dimensions from ranks.
pub fn betti_numbers(spaces: &[InstantonSpace], differentials: &[CsrMatrix]) -> BettiReport {
    let n_deg = spaces.len();
    let mut warnings = Vec::new();
    let projected = projected_differentials(spaces, differentials);

    let rank_of = |m: &nalgebra::DMatrix<f64>, warnings: &mut Vec<String>| -> (usize, Vec<f64>) {
        if m.nrows() == 0 || m.ncols() == 0 {
            return (0, vec![]);
        }
        let svd = m.clone().svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let smax = sv.first().copied().unwrap_or(0.0);
        let tau = 1e-6 * if smax > 0.0 { smax } else { 1.0 };
        for s in &sv {
            if *s > tau / 10.0 && *s < tau * 10.0 {
                warnings.push(format!(
                    "rank ill-determined; singular value {s:.3e} within a factor 10 of tau = {tau:.3e}; adjust T or h"
                ));
            }
        }
        (sv.iter().filter(|s| **s > tau).count(), sv)
    };

    let mut per_degree = Vec::with_capacity(n_deg);
    for k in 0..n_deg {
        let (rank_out, sv_out) = if k < n_deg - 1 {
            rank_of(&projected[k], &mut warnings)
        } else {
            (0, vec![])
        };
        let (rank_in, _) = if k > 0 {
            rank_of(&projected[k - 1], &mut warnings)
        } else {
            (0, vec![])
        };
        let dim = spaces[k].dim();
        per_degree.push(BettiDegree {
            degree: k,
            window_dim: dim,
            rank_out,
            rank_in,
            betti: dim - rank_out - rank_in,
            singular_values_out: sv_out,
        });
    }
    BettiReport {
        per_degree,
        rank_threshold_policy:
            "tau_rank = 1e-6 * max singular value (1 when the block is empty or zero)".to_string(),
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_dsl::parse;
    use crate::geometry::{BoxModel, ScalarField};
    use crate::witten::assemble_witten_laplacian;

    fn field(src: &str, dim: usize) -> ScalarField {
        ScalarField::new(parse(src, dim).unwrap(), dim)
    }

    #[test]
    fn oscillator_ladder_via_tridiagonal_path() {
        let t = 10.0;
        let model = BoxModel::new(1, 6.0, 0.01);
        let f = field("x1^2/2", 1);
        let op = assemble_witten_laplacian(&model, &f, t, 0).unwrap();
        let pairs = lowest_eigenpairs(&op, 3, 1).unwrap();
        let expect = [0.0, 2.0 * t, 4.0 * t];
        for (p, e) in pairs.iter().zip(expect) {
            assert!(
                (p.eigenvalue - e).abs() <= 0.02 * (2.0 * t),
                "got {} want {e}",
                p.eigenvalue
            );
            assert!(p.residual < RESIDUAL_TOL);
            assert!(p.eigenvalue >= EIGENVALUE_FLOOR);
        }
    }

    #[test]
    fn plain_laplacian_first_mode() {
        let r = 4.0;
        let model = BoxModel::new(1, r, 0.05);
        let f = field("x1", 1);
        let op = assemble_witten_laplacian(&model, &f, 0.0, 0).unwrap();
        let pairs = lowest_eigenpairs(&op, 1, 1).unwrap();
        let expect = (std::f64::consts::PI / (2.0 * r)).powi(2);
        assert!((pairs[0].eigenvalue - expect).abs() < 0.01 * expect);
    }

    #[test]
    fn count_above_cap_errors() {
        let model = BoxModel::new(1, 4.0, 0.1);
        let f = field("x1^2/2", 1);
        let op = assemble_witten_laplacian(&model, &f, 1.0, 0).unwrap();
        assert!(matches!(
            lowest_eigenpairs(&op, 40, 1),
            Err(SpectraError::CountExceedsCap(40))
        ));
    }

    #[test]
    fn cubic_window_has_one_state_per_degree() {
        let t = 15.0;
        let model = BoxModel::new(1, 3.0, 0.01);
        let f = field("x1^3/3 - x1", 1);
        for k in 0..=1 {
            let op = assemble_witten_laplacian(&model, &f, t, k).unwrap();
            let w = spectral_window(&op, 3).unwrap();
            assert_eq!(w.dim(), 1, "degree {k}");
            assert!(w.gap_next > 1.0);
            assert!(gram_defect(&w) < 1e-6);
        }
    }

    #[test]
    fn gaussian_2d_degree_one_window_is_empty() {
        let t = 12.0;
        let model = BoxModel::new(2, 2.0, 0.05);
        let f = field("(x1^2 + x2^2)/2", 2);
        let op = assemble_witten_laplacian(&model, &f, t, 1).unwrap();
        let w = spectral_window(&op, 5).unwrap();
        assert_eq!(w.dim(), 0);
        assert!(w.gap_next > 1.0);
    }

    #[test]
    fn betti_of_gaussian_line() {
        let t = 12.0;
        let model = BoxModel::new(1, 4.0, 0.02);
        let f = field("x1^2/2", 1);
        let mut spaces = Vec::new();
        for k in 0..=1 {
            let op = assemble_witten_laplacian(&model, &f, t, k).unwrap();
            spaces.push(spectral_window(&op, 11).unwrap());
        }
        let d0 = crate::witten::assemble_witten_differential(&model, &f, t, 0).unwrap();
        let report = betti_numbers(&spaces, &[d0]);
        assert_eq!(report.betti_vector(), vec![1, 0]);
    }

    #[test]
    fn betti_of_cubic_line_vanishes() {
        let t = 15.0;
        let model = BoxModel::new(1, 3.0, 0.01);
        let f = field("x1^3/3 - x1", 1);
        let mut spaces = Vec::new();
        for k in 0..=1 {
            let op = assemble_witten_laplacian(&model, &f, t, k).unwrap();
            spaces.push(spectral_window(&op, 17).unwrap());
        }
        let d0 = crate::witten::assemble_witten_differential(&model, &f, t, 0).unwrap();
        let report = betti_numbers(&spaces, &[d0]);
        assert_eq!(report.betti_vector(), vec![0, 0], "report: {report:?}");
    }
}
