//! The integration chain map from window eigenforms to the dual counting
//! complex: entries are integrals of `exp(Tf) omega` over unstable
//! manifolds, evaluated at points for index 0, along shooting branches for
//! index 1, and over a trajectory fan with the transported area element
//! for index 2.

use nalgebra::DMatrix;

use super::complex::ThomSmaleComplex;
use super::{integrate_flow, FlowEnd, FlowField, FlowSpace, IntegrateOptions};
use crate::grid::Grid;
use crate::spectra::InstantonSpace;

/// Relative tail tolerance for unstable-manifold integrals.
pub const TAIL_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum ChainMapError {
    #[error("integral not converged (tail {tail:.3e} of {value:.3e}); extend t_max")]
    ExtendTmax { tail: f64, value: f64 },
    #[error("chain map requires a box model with a grid")]
    NeedsBoxModel,
    #[error("window dimension {window} does not match critical count {morse} in degree {degree}")]
    DimensionMismatch { degree: usize, window: usize, morse: usize },
}

#[derive(Debug, Clone)]
pub struct ChainMapMatrix {
    /// per degree k: rows = degree-k critical points, cols = window basis
    pub per_degree: Vec<DMatrix<f64>>,
}

impl ChainMapMatrix {
    /// Smallest and largest singular values per degree (empty blocks skipped).
    pub fn conditioning(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for (k, m) in self.per_degree.iter().enumerate() {
            if m.nrows() == 0 || m.ncols() == 0 {
                continue;
            }
            let svd = m.clone().svd(false, false);
            let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            out.push((k, *sv.last().unwrap(), sv[0]));
        }
        out
    }

    /// Frobenius norm over all degree blocks.
    pub fn norm(&self) -> f64 {
        self.per_degree
            .iter()
            .map(|m| m.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Commutation defect against the projected differentials and the counting
/// boundary: || J d - del' J || / || J || with Frobenius norms over the
/// stacked degree blocks.
pub fn commutation_defect(
    j: &ChainMapMatrix,
    projected: &[DMatrix<f64>],
    complex: &ThomSmaleComplex,
) -> f64 {
    let mut num2 = 0.0;
    for k in 0..projected.len() {
        if k + 1 >= j.per_degree.len() {
            break;
        }
        let jd = &j.per_degree[k + 1] * &projected[k];
        // del' J: (del' J omega)(x) = sum_y m(x,y) (J omega)(y) for x of
        // index k+1, i.e. the transpose of the boundary matrix block
        let m = complex.boundary_matrix(k).transpose();
        let dj = &m * &j.per_degree[k];
        num2 += (jd - dj).iter().map(|v| v * v).sum::<f64>();
    }
    num2.sqrt() / j.norm().max(1e-300)
}

fn interp_component(grid: &Grid, data: &[f64], comp: usize, p: &[f64]) -> f64 {
    let n = grid.node_count();
    grid.interpolate(&data[comp * n..(comp + 1) * n], p)
}

/// Integral of exp(T f) omega over one oriented index-1 branch polyline
/// (traversed outward from the critical point), including the straight
/// prefix from the critical point to the shooting seed and a closing
/// segment to the capture target when there is one.
fn branch_integral(
    field: &FlowField,
    grid: &Grid,
    omega: &[f64],
    crit_pos: &[f64],
    line: &super::FlowLine,
    target_pos: Option<&[f64]>,
) -> Result<f64, ChainMapError> {
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(line.polyline.len() + 2);
    points.push(crit_pos.to_vec());
    for pt in &line.polyline {
        points.push(pt.position.clone());
    }
    if let Some(t) = target_pos {
        points.push(t.to_vec());
    }
    let dim = grid.dim;
    let mut acc = 0.0;
    let mut last_contrib = 0.0;
    for w in points.windows(2) {
        let a = &w[0];
        let b = &w[1];
        if a.iter().any(|v| v.abs() > grid.half_width) && b.iter().any(|v| v.abs() > grid.half_width)
        {
            break;
        }
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let weight = (field.t * field.f_value(&mid)).exp();
        let mut pairing = 0.0;
        for c in 0..dim {
            pairing += interp_component(grid, omega, c, &mid) * (b[c] - a[c]);
        }
        last_contrib = weight * pairing;
        acc += last_contrib;
    }
    // tail estimate: for escaping branches the last in-grid contribution
    // bounds what truncation discarded
    if line.end == FlowEnd::Unresolved {
        let tail = last_contrib.abs();
        if tail > TAIL_TOL * acc.abs().max(1e-300) {
            return Err(ChainMapError::ExtendTmax { tail, value: acc });
        }
    }
    Ok(acc)
}

/// Build the chain map matrices for all degrees with a nonempty window.
pub fn chain_map(
    field: &FlowField,
    spaces: &[InstantonSpace],
    complex: &ThomSmaleComplex,
    r_shoot: f64,
    r_cap: f64,
    t_max: f64,
    fan_size: usize,
) -> Result<ChainMapMatrix, ChainMapError> {
    let (grid, dim) = match &field.space {
        FlowSpace::Box { model, .. } => (model.grid(), model.dim),
        FlowSpace::Surface { .. } => return Err(ChainMapError::NeedsBoxModel),
    };
    let t = field.t;
    let mut per_degree = Vec::new();
    for space in spaces {
        let k = space.degree;
        let crit_ids = &complex.by_degree[k];
        let rows = crit_ids.len();
        let cols = space.dim();
        if rows != cols {
            return Err(ChainMapError::DimensionMismatch { degree: k, window: cols, morse: rows });
        }
        let mut m = DMatrix::zeros(rows, cols);
        for (col, pair) in space.pairs.iter().enumerate() {
            let omega = &pair.eigenvector.data;
            for (row, &ci) in crit_ids.iter().enumerate() {
                let x = &complex.crits[ci];
                let entry = match k {
                    0 => (t * x.f_value).exp() * interp_component(&grid, omega, 0, &x.position),
                    1 => {
                        // oriented line: +branch minus -branch, both
                        // traversed outward
                        let mut total = 0.0;
                        for (from, branch, line) in &complex.branch_lines {
                            if *from != ci {
                                continue;
                            }
                            let target = match line.end {
                                FlowEnd::Captured(yi) => {
                                    Some(complex.crits[yi].position.clone())
                                }
                                _ => None,
                            };
                            let val = branch_integral(
                                field,
                                &grid,
                                omega,
                                &x.position,
                                line,
                                target.as_deref(),
                            )?;
                            total += branch * val;
                        }
                        total
                    }
                    2 => fan_integral(
                        field, &grid, omega, x, complex, r_shoot, r_cap, t_max, fan_size,
                    )?,
                    _ => 0.0,
                };
                m[(row, col)] = entry;
            }
        }
        let _ = dim;
        per_degree.push(m);
    }
    Ok(ChainMapMatrix { per_degree })
}

/// Integral over the 2-dimensional unstable manifold of an index-2 point:
/// a fan of trajectories with the angular variation transported by the
/// linearized flow supplies the area element; the central disk is added in
/// the tangent approximation.
#[allow(clippy::too_many_arguments)]
fn fan_integral(
    field: &FlowField,
    grid: &Grid,
    omega: &[f64],
    x: &crate::geometry::CriticalPoint,
    complex: &ThomSmaleComplex,
    r_shoot: f64,
    r_cap: f64,
    t_max: f64,
    fan_size: usize,
) -> Result<f64, ChainMapError> {
    let t = field.t;
    // unstable frame at x (ascending eigenvalues, both negative for index 2)
    let j = field.f.jet(&x.position);
    let eig = nalgebra::SymmetricEigen::new(j.hessian.clone());
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..2)
        .map(|i| {
            (
                eig.eigenvalues[i],
                eig.eigenvectors.column(i).iter().copied().collect(),
            )
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let e1 = pairs[0].1.clone();
    let e2 = pairs[1].1.clone();
    // keep the frame right-handed so the fan orientation matches (e1, e2)
    let handed = e1[0] * e2[1] - e1[1] * e2[0];
    let e2: Vec<f64> = if handed < 0.0 { e2.iter().map(|v| -v).collect() } else { e2 };

    let crits = &complex.crits;
    let dtheta = 2.0 * std::f64::consts::PI / fan_size as f64;
    let mut total = 0.0;
    let mut worst_tail: f64 = 0.0;
    for j_ray in 0..fan_size {
        let theta = dtheta * j_ray as f64;
        let dir: Vec<f64> = e1
            .iter()
            .zip(&e2)
            .map(|(a, b)| theta.cos() * a + theta.sin() * b)
            .collect();
        let angular: Vec<f64> = e1
            .iter()
            .zip(&e2)
            .map(|(a, b)| -theta.sin() * a + theta.cos() * b)
            .collect();
        let seed: Vec<f64> = x
            .position
            .iter()
            .zip(&dir)
            .map(|(p, d)| p + r_shoot * d)
            .collect();
        let mut io = IntegrateOptions::new(crits, r_cap, t_max);
        io.frame = vec![angular.iter().map(|v| v * r_shoot).collect()];
        let line = integrate_flow(field, &seed, &io);
        // ray integral: sum over steps of exp(Tf) omega12 det(velocity, v) dt dtheta
        let mut ray = 0.0;
        let mut last = 0.0;
        for i in 0..line.polyline.len().saturating_sub(1) {
            let a = &line.polyline[i];
            let b = &line.polyline[i + 1];
            let mid: Vec<f64> = a
                .position
                .iter()
                .zip(&b.position)
                .map(|(x, y)| 0.5 * (x + y))
                .collect();
            if mid.iter().any(|v| v.abs() > grid.half_width) {
                break;
            }
            let dt = b.t - a.t;
            let vel = field.velocity(&mid);
            // transported angular vector at this step: recorded direction
            // times the tracked magnitude (launch magnitude r_shoot)
            let vdir = &line.frame_dirs[i][0];
            let vmag = line.log_frame_volume[i].exp() * r_shoot;
            let det = vel[0] * vdir[1] * vmag - vel[1] * vdir[0] * vmag;
            let w12 = interp_component(grid, omega, 0, &mid);
            last = (t * field.f_value(&mid)).exp() * w12 * det * dt * dtheta;
            ray += last;
        }
        if line.end == FlowEnd::Unresolved {
            worst_tail = worst_tail.max(last.abs() / ray.abs().max(1e-300));
        }
        total += ray;
    }
    if worst_tail > TAIL_TOL {
        return Err(ChainMapError::ExtendTmax { tail: worst_tail, value: total });
    }
    // central disk in the tangent approximation
    total += (t * x.f_value).exp()
        * interp_component(grid, omega, 0, &x.position)
        * std::f64::consts::PI
        * r_shoot
        * r_shoot;
    Ok(total)
}
