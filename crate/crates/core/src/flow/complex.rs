//! The counting complex: critical points graded by index, boundary
//! matrices from signed connecting orbits found by shooting from unstable
//! spheres.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::{integrate_flow, FlowEnd, FlowField, FlowLine, FlowSpace, IntegrateOptions};
use crate::geometry::{surface_hessian, surface_frame, CriticalPoint, ScalarField};

#[derive(Debug, thiserror::Error)]
pub enum ThomSmaleError {
    #[error("transversality suspect: connections to the same target within angular tolerance")]
    TransversalitySuspect,
    #[error("critical point {0} has no unstable directions to shoot from")]
    NoUnstableDirections(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct Connection {
    pub from: usize,
    pub to: usize,
    pub sign: i64,
    /// launch parameter (branch sign in 1D shooting, fan angle in 2D)
    pub launch: f64,
    pub line: FlowLine,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThomSmaleComplex {
    pub crits: Vec<CriticalPoint>,
    /// global critical point indices per Morse index
    pub by_degree: Vec<Vec<usize>>,
    /// boundary[k] maps degree k+1 to degree k: rows = degree-k points,
    /// cols = degree-(k+1) points, integer entries
    pub boundary: Vec<Vec<Vec<i64>>>,
    pub connections: Vec<Connection>,
    /// branch lines from every index-1 critical point (used by the chain
    /// map and diagnostics)
    pub branch_lines: Vec<(usize, f64, FlowLine)>,
    pub dropped_orbits: usize,
    pub warnings: Vec<String>,
}

impl ThomSmaleComplex {
    pub fn degree_count(&self, k: usize) -> usize {
        self.by_degree.get(k).map(|v| v.len()).unwrap_or(0)
    }

    /// Entry m(x, y) for x of index k+1 and y of index k.
    pub fn boundary_matrix(&self, k: usize) -> DMatrix<f64> {
        let rows = self.degree_count(k);
        let cols = self.degree_count(k + 1);
        let mut m = DMatrix::zeros(rows, cols);
        if k < self.boundary.len() {
            for (i, row) in self.boundary[k].iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    m[(i, j)] = *v as f64;
                }
            }
        }
        m
    }

    /// Max absolute entry of every composition boundary[k] boundary[k+1]
    /// (exactly zero for a genuine complex).
    pub fn d_squared_defect(&self) -> i64 {
        let n = self.by_degree.len() - 1;
        let mut worst = 0i64;
        for k in 0..n.saturating_sub(1) {
            // rows deg k, cols deg k+2
            let a = &self.boundary[k];
            let b = &self.boundary[k + 1];
            let rows = self.degree_count(k);
            let mid = self.degree_count(k + 1);
            let cols = self.degree_count(k + 2);
            for i in 0..rows {
                for j in 0..cols {
                    let mut acc = 0i64;
                    for l in 0..mid {
                        acc += a[i][l] * b[l][j];
                    }
                    worst = worst.max(acc.abs());
                }
            }
        }
        worst
    }

    /// The composition boundary[k] . boundary[k+1] as integer matrices,
    /// mapping degree k+2 to degree k.
    pub fn d_squared(&self, k: usize) -> Vec<Vec<i64>> {
        let rows = self.degree_count(k);
        let mid = self.degree_count(k + 1);
        let cols = self.degree_count(k + 2);
        let mut out = vec![vec![0i64; cols]; rows];
        for i in 0..rows {
            for j in 0..cols {
                for l in 0..mid {
                    out[i][j] += self.boundary[k][i][l] * self.boundary[k + 1][l][j];
                }
            }
        }
        out
    }
}

fn rank_of(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|s| **s > 1e-9 * smax).count()
}

/// Homology dimensions of the counting complex (meaningful only when the
/// boundary squares to zero).
pub fn homology_ranks(complex: &ThomSmaleComplex) -> Vec<usize> {
    let n = complex.by_degree.len();
    (0..n)
        .map(|k| {
            let dim = complex.degree_count(k);
            let rank_in = if k >= 1 { rank_of(&complex.boundary_matrix(k - 1)) } else { 0 };
            let rank_out = if k + 1 < n { rank_of(&complex.boundary_matrix(k)) } else { 0 };
            dim - rank_in - rank_out
        })
        .collect()
}

/// Unstable directions at a critical point, ordered by ascending Hessian
/// eigenvalue, with a deterministic sign convention (largest-magnitude
/// component positive).
fn unstable_directions(field: &FlowField, crit: &CriticalPoint) -> Vec<Vec<f64>> {
    all_hessian_directions(field, crit)
        .into_iter()
        .filter(|(l, _)| *l < 0.0)
        .map(|(_, v)| v)
        .collect()
}

fn seed_from(crit: &CriticalPoint, dir: &[f64], r_shoot: f64) -> Vec<f64> {
    crit.position
        .iter()
        .zip(dir)
        .map(|(p, d)| p + r_shoot * d)
        .collect()
}

/// Label describing where a fan trajectory ends up, used to bracket
/// connecting orbits between adjacent launch angles.
#[derive(Debug, Clone, PartialEq)]
enum Outcome {
    Captured(usize, i8),
    Escaped(i8),
    Stuck,
    Unresolved,
}

fn outcome_of(field: &FlowField, line: &FlowLine, crits: &[CriticalPoint]) -> Outcome {
    match line.end {
        FlowEnd::Captured(ci) => {
            // side tag: separates basins approaching the same target from
            // different directions, so label changes bracket connections.
            // Approaches align with the slowest stable direction, so the
            // sign of that projection is the robust discriminator.
            let last = &line.polyline.last().unwrap().position;
            let target = &crits[ci].position;
            let d: Vec<f64> = last.iter().zip(target).map(|(a, b)| a - b).collect();
            let slow = slowest_stable_direction(field, &crits[ci]);
            let proj: f64 = d.iter().zip(&slow).map(|(a, b)| a * b).sum();
            let side = if proj >= 0.0 { 1i8 } else { -1i8 };
            Outcome::Captured(ci, side)
        }
        FlowEnd::Escaped => {
            let last = &line.polyline.last().unwrap().position;
            let mut imax = 0;
            for i in 1..last.len() {
                if last[i].abs() > last[imax].abs() {
                    imax = i;
                }
            }
            Outcome::Escaped(if last[imax] >= 0.0 { imax as i8 + 1 } else { -(imax as i8 + 1) })
        }
        FlowEnd::Stuck => Outcome::Stuck,
        FlowEnd::Unresolved => Outcome::Unresolved,
    }
}

/// Eigenvector of the smallest positive Hessian eigenvalue at a critical
/// point: generic approaches to a sink align with it.
fn slowest_stable_direction(field: &FlowField, crit: &CriticalPoint) -> Vec<f64> {
    let all = all_hessian_directions(field, crit);
    all.iter()
        .filter(|(l, _)| *l > 0.0)
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .map(|(_, v)| v.clone())
        .unwrap_or_else(|| all[0].1.clone())
}

/// All Hessian eigenpairs (intrinsic for surfaces) with deterministic
/// eigenvector signs, ascending eigenvalue.
fn all_hessian_directions(field: &FlowField, crit: &CriticalPoint) -> Vec<(f64, Vec<f64>)> {
    let fix_sign = |mut v: Vec<f64>| -> Vec<f64> {
        let mut imax = 0;
        for i in 1..v.len() {
            if v[i].abs() > v[imax].abs() {
                imax = i;
            }
        }
        if v[imax] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        v
    };
    let mut pairs: Vec<(f64, Vec<f64>)> = match &field.space {
        FlowSpace::Box { .. } => {
            let j = field.f.jet(&crit.position);
            let eig = SymmetricEigen::new(j.hessian.clone());
            (0..eig.eigenvalues.len())
                .map(|i| {
                    (
                        eig.eigenvalues[i],
                        fix_sign(eig.eigenvectors.column(i).iter().copied().collect()),
                    )
                })
                .collect()
        }
        FlowSpace::Surface { surface, .. } => {
            let p = [crit.position[0], crit.position[1], crit.position[2]];
            let h2 = surface_hessian(&field.f, surface, &p);
            let jc = surface.constraint.eval_jet(&p).expect("constraint");
            let fr = surface_frame(&jc.gradient);
            let eig = SymmetricEigen::new(h2);
            (0..2)
                .map(|i| {
                    let c0 = eig.eigenvectors[(0, i)];
                    let c1 = eig.eigenvectors[(1, i)];
                    let v3 = (0..3)
                        .map(|d| c0 * fr.tangent[0][d] + c1 * fr.tangent[1][d])
                        .collect::<Vec<f64>>();
                    (eig.eigenvalues[i], fix_sign(v3))
                })
                .collect()
        }
    };
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs
}

/// Orientation sign of a connecting orbit from an index-2 point: the
/// transported orientation frame of the unstable disk, expressed against
/// (incoming flow direction, unstable orientation of the target).
fn orientation_sign_2d(
    field: &FlowField,
    line: &FlowLine,
    target: &CriticalPoint,
) -> i64 {
    let p = &line.polyline.last().unwrap().position;
    let v = field.velocity(p);
    let vn = (v.iter().map(|x| x * x).sum::<f64>()).sqrt().max(1e-300);
    let d: Vec<f64> = v.iter().map(|x| x / vn).collect();
    let u_dirs = unstable_directions(field, target);
    let u = u_dirs.first().cloned().unwrap_or_else(|| d.clone());
    let a = &line.final_frame[0];
    let b = &line.final_frame[1];
    let dot = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).map(|(p, q)| p * q).sum() };
    let det = dot(a, &d) * dot(b, &u) - dot(a, &u) * dot(b, &d);
    if det >= 0.0 {
        1
    } else {
        -1
    }
}

pub struct ThomSmaleOptions {
    pub shoot_count: usize,
    pub r_shoot: f64,
    pub r_cap: f64,
    pub t_max: f64,
}

/// Build the counting complex by shooting from unstable spheres: two
/// points for one unstable direction, a uniform fan for two, clustering
/// captured trajectories into connecting orbits and summing orientation
/// signs.
pub fn build_thom_smale(
    field: &FlowField,
    f: &ScalarField,
    crits: &[CriticalPoint],
    opts: &ThomSmaleOptions,
) -> Result<ThomSmaleComplex, ThomSmaleError> {
    let _ = f;
    let n = match &field.space {
        FlowSpace::Box { model, .. } => model.dim,
        FlowSpace::Surface { .. } => 2,
    };
    let mut by_degree = vec![Vec::new(); n + 1];
    for (i, c) in crits.iter().enumerate() {
        by_degree[c.index].push(i);
    }
    let mut connections: Vec<Connection> = Vec::new();
    let mut branch_lines: Vec<(usize, f64, FlowLine)> = Vec::new();
    let mut warnings = Vec::new();
    let mut dropped = 0usize;

    for (xi, x) in crits.iter().enumerate() {
        if x.index == 0 {
            continue;
        }
        let dirs = unstable_directions(field, x);
        if dirs.is_empty() {
            return Err(ThomSmaleError::NoUnstableDirections(xi));
        }
        if x.index == 1 {
            // oriented interval: the +branch bounds positively
            for branch in [1.0f64, -1.0] {
                let dir: Vec<f64> = dirs[0].iter().map(|v| v * branch).collect();
                let seed = seed_from(x, &dir, opts.r_shoot);
                let io = IntegrateOptions::new(crits, opts.r_cap, opts.t_max);
                let line = integrate_flow(field, &seed, &io);
                match line.end {
                    FlowEnd::Captured(yi) if crits[yi].index == 0 => {
                        connections.push(Connection {
                            from: xi,
                            to: yi,
                            sign: branch as i64,
                            launch: branch,
                            line: line.clone(),
                        });
                    }
                    FlowEnd::Stuck => {
                        dropped += 1;
                        warnings.push(format!(
                            "orbit from critical point {xi} (branch {branch:+}) dropped: stuck"
                        ));
                    }
                    FlowEnd::Unresolved => {
                        warnings.push(format!(
                            "orbit from critical point {xi} (branch {branch:+}) unresolved at t_max"
                        ));
                    }
                    _ => {}
                }
                branch_lines.push((xi, branch, line));
            }
        } else if x.index == 2 {
            let m = opts.shoot_count.max(8);
            let e1 = &dirs[0];
            let e2 = &dirs[1];
            let launch_dir = |theta: f64| -> Vec<f64> {
                e1.iter()
                    .zip(e2)
                    .map(|(a, b)| theta.cos() * a + theta.sin() * b)
                    .collect()
            };
            let shoot = |theta: f64, with_frame: bool| -> FlowLine {
                let dir = launch_dir(theta);
                let seed = seed_from(x, &dir, opts.r_shoot);
                let mut io = IntegrateOptions::new(crits, opts.r_cap, opts.t_max);
                if with_frame {
                    let radial = dir.clone();
                    let angular: Vec<f64> = e1
                        .iter()
                        .zip(e2)
                        .map(|(a, b)| -theta.sin() * a + theta.cos() * b)
                        .collect();
                    io.frame = vec![radial, angular];
                }
                integrate_flow(field, &seed, &io)
            };
            // Fan outcomes. Trajectories captured at an index-1 point sit
            // on a basin boundary; maximal runs of such "boundary" angles
            // (or direct label changes) each correspond to one connecting
            // orbit.
            #[derive(PartialEq, Clone)]
            enum FanEntry {
                Family(Outcome),
                Boundary(usize),
            }
            let fan: Vec<(f64, FanEntry)> = (0..m)
                .map(|j| {
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    let line = shoot(theta, false);
                    if line.end == FlowEnd::Stuck {
                        dropped += 1;
                    }
                    let entry = match line.end {
                        FlowEnd::Captured(ci) if crits[ci].index == 1 => FanEntry::Boundary(ci),
                        _ => FanEntry::Family(outcome_of(field, &line, crits)),
                    };
                    (theta, entry)
                })
                .collect();
            // walk transitions between consecutive non-boundary families
            let two_pi = 2.0 * std::f64::consts::PI;
            let family_idx: Vec<usize> = (0..m)
                .filter(|&j| matches!(fan[j].1, FanEntry::Family(_)))
                .collect();
            let mut found: Vec<(f64, usize)> = Vec::new();
            if family_idx.is_empty() {
                warnings.push(format!(
                    "entire fan from critical point {xi} sits on basin boundaries"
                ));
            } else {
                for w in 0..family_idx.len() {
                    let ja = family_idx[w];
                    let jb = family_idx[(w + 1) % family_idx.len()];
                    let gap_boundaries: Vec<usize> = {
                        let mut v = Vec::new();
                        let mut j = (ja + 1) % m;
                        while j != jb {
                            if let FanEntry::Boundary(ci) = fan[j].1 {
                                v.push(ci);
                            }
                            j = (j + 1) % m;
                        }
                        v
                    };
                    let out_a = match &fan[ja].1 {
                        FanEntry::Family(o) => o.clone(),
                        _ => unreachable!(),
                    };
                    let out_b = match &fan[jb].1 {
                        FanEntry::Family(o) => o.clone(),
                        _ => unreachable!(),
                    };
                    if out_a == out_b && gap_boundaries.is_empty() {
                        continue;
                    }
                    if out_a == out_b && !gap_boundaries.is_empty() {
                        // same family on both sides of a boundary run: a
                        // tangential pair the fan cannot separate
                        return Err(ThomSmaleError::TransversalitySuspect);
                    }
                    if !gap_boundaries.is_empty() {
                        // representative angle: middle of the boundary run
                        let mid_pos = gap_boundaries.len() / 2;
                        let mut j = (ja + 1) % m;
                        let mut seen = 0;
                        let mut theta_star = fan[ja].0;
                        while j != jb {
                            if matches!(fan[j].1, FanEntry::Boundary(_)) {
                                if seen == mid_pos {
                                    theta_star = fan[j].0;
                                    break;
                                }
                                seen += 1;
                            }
                            j = (j + 1) % m;
                        }
                        found.push((theta_star, gap_boundaries[mid_pos]));
                        continue;
                    }
                    // direct label change: bisect for the boundary orbit
                    let th_a = fan[ja].0;
                    let mut th_b = fan[jb].0;
                    if th_b <= th_a {
                        th_b += two_pi;
                    }
                    let mut lo = th_a;
                    let mut hi = th_b;
                    let mut hit: Option<(f64, usize)> = None;
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        let line = shoot(mid, false);
                        match line.end {
                            FlowEnd::Captured(ci) if crits[ci].index == 1 => {
                                hit = Some((mid, ci));
                                break;
                            }
                            _ => {
                                let out_mid = outcome_of(field, &line, crits);
                                if out_mid == out_a {
                                    lo = mid;
                                } else {
                                    hi = mid;
                                }
                            }
                        }
                        if hi - lo < 1e-13 {
                            break;
                        }
                    }
                    if let Some((theta_star, yi)) = hit {
                        found.push((theta_star % two_pi, yi));
                    } else {
                        warnings.push(format!(
                            "fan transition from {xi} between {th_a:.4} and {th_b:.4} \
                             did not refine to a connecting orbit"
                        ));
                    }
                }
            }
            for (theta_star, yi) in found {
                let line = shoot(theta_star, true);
                if line.end != FlowEnd::Captured(yi) {
                    warnings.push(format!(
                        "refined orbit from {xi} at angle {theta_star:.6} lost its capture"
                    ));
                    continue;
                }
                let sign = orientation_sign_2d(field, &line, &crits[yi]);
                connections.push(Connection { from: xi, to: yi, sign, launch: theta_star, line });
            }
        } else {
            warnings.push(format!(
                "critical point {xi} has index {} > 2; counting skipped",
                x.index
            ));
        }
    }

    // boundary matrices
    let mut boundary = Vec::new();
    for k in 0..n {
        let rows = by_degree[k].len();
        let cols = by_degree[k + 1].len();
        let mut m = vec![vec![0i64; cols]; rows];
        for c in &connections {
            if crits[c.from].index == k + 1 && crits[c.to].index == k {
                let i = by_degree[k].iter().position(|&g| g == c.to).unwrap();
                let j = by_degree[k + 1].iter().position(|&g| g == c.from).unwrap();
                m[i][j] += c.sign;
            }
        }
        boundary.push(m);
    }

    Ok(ThomSmaleComplex {
        crits: crits.to_vec(),
        by_degree,
        boundary,
        connections,
        branch_lines,
        dropped_orbits: dropped,
        warnings,
    })
}
