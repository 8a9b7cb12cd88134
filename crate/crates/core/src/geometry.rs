//! Manifold models, critical point location and classification, the
//! tameness audit, and selection of the compact core.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::field_dsl::{Expr, JetValue};
use crate::grid::{dijkstra, Grid};

/// Hessian eigenvalues closer to zero than this are treated as degenerate.
pub const MORSE_DEGENERACY_TOL: f64 = 1e-8;
/// Gradient norm required of a reported critical point (after projection).
pub const CRITICAL_GRAD_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("field is not Morse at resolution: |hessian eigenvalue| {0:.3e} below tolerance near {1:?}")]
    NotMorse(f64, Vec<f64>),
    #[error("shell radius {0} lies outside the truncation box (R = {1})")]
    ShellOutsideBox(f64, f64),
    #[error("required core exceeds the truncation box; enlarge R")]
    EnlargeR,
    #[error("field evaluation failed: {0}")]
    Eval(#[from] crate::field_dsl::EvalError),
}

/// Flat box model, optionally with a conformal factor multiplying the
/// metric (2D only downstream).
#[derive(Debug, Clone)]
pub struct BoxModel {
    pub dim: usize,
    pub half_width: f64,
    pub spacing: f64,
    pub conformal_factor: Option<Expr>,
}

impl BoxModel {
    pub fn new(dim: usize, half_width: f64, spacing: f64) -> Self {
        // Grid::new checks R/h integrality and the >= 16 floor.
        let _ = Grid::new(dim, half_width, spacing);
        BoxModel { dim, half_width, spacing, conformal_factor: None }
    }

    pub fn with_conformal_factor(mut self, factor: Expr) -> Self {
        assert_eq!(self.dim, 2, "conformal factors are supported in 2D only");
        self.conformal_factor = Some(factor);
        self
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dim, self.half_width, self.spacing)
    }

    /// Metric factor at a point (1 for the flat metric).
    pub fn factor_at(&self, p: &[f64]) -> f64 {
        match &self.conformal_factor {
            None => 1.0,
            Some(e) => e.eval(p).expect("conformal factor evaluation failed"),
        }
    }
}

/// Surface embedded in 3-space as a regular zero level set.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    pub constraint: Expr,
    pub seeds: Vec<[f64; 3]>,
    /// Length scale playing the role of the grid spacing (capture radii,
    /// dedup radii).
    pub mesh_scale: f64,
}

#[derive(Debug, Clone)]
pub enum ManifoldModel {
    EuclideanBox(BoxModel),
    EmbeddedSurface(SurfaceModel),
}

impl ManifoldModel {
    pub fn dim(&self) -> usize {
        match self {
            ManifoldModel::EuclideanBox(b) => b.dim,
            ManifoldModel::EmbeddedSurface(_) => 2,
        }
    }

    pub fn length_scale(&self) -> f64 {
        match self {
            ManifoldModel::EuclideanBox(b) => b.spacing,
            ManifoldModel::EmbeddedSurface(s) => s.mesh_scale,
        }
    }
}

/// Field body: a closed-form expression, or one extended along a collar
/// axis by the boundary-escape construction.
#[derive(Debug, Clone)]
pub enum FieldBody {
    Closed(Expr),
    Collar(Box<crate::collar::CollarField>),
}

/// A Morse function (or metric factor) with jet evaluators.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub body: FieldBody,
    pub dim: usize,
}

impl ScalarField {
    pub fn new(expr: Expr, dim: usize) -> Self {
        assert!(expr.arity() <= dim, "expression uses more variables than the model dimension");
        ScalarField { body: FieldBody::Closed(expr), dim }
    }

    pub fn collar(field: crate::collar::CollarField, dim: usize) -> Self {
        assert!(field.axis < dim);
        ScalarField { body: FieldBody::Collar(Box::new(field)), dim }
    }

    pub fn describe(&self) -> String {
        match &self.body {
            FieldBody::Closed(e) => e.to_string(),
            FieldBody::Collar(c) => c.describe(),
        }
    }

    pub fn jet(&self, p: &[f64]) -> JetValue {
        self.try_jet(p).expect("field evaluation failed")
    }

    pub fn try_jet(&self, p: &[f64]) -> Result<JetValue, crate::field_dsl::EvalError> {
        match &self.body {
            FieldBody::Closed(e) => e.eval_jet(p),
            FieldBody::Collar(c) => {
                let n = p.len();
                let mut jet = match &c.base {
                    Some(b) => b.eval_jet(p)?,
                    None => JetValue {
                        value: 0.0,
                        gradient: DVector::zeros(n),
                        hessian: DMatrix::zeros(n, n),
                    },
                };
                let prof = c.profile.jet(p[c.axis]);
                jet.value += prof.v;
                jet.gradient[c.axis] += prof.d1;
                jet.hessian[(c.axis, c.axis)] += prof.d2;
                Ok(jet)
            }
        }
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        self.jet(p).value
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub position: Vec<f64>,
    pub index: usize,
    pub f_value: f64,
    pub hessian_eigs: Vec<f64>,
}

/// Tangent frame data at a surface point.
pub struct SurfaceFrame {
    pub normal: [f64; 3],
    pub tangent: [[f64; 3]; 2],
}

fn norm3(v: &[f64]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn surface_frame(constraint_grad: &DVector<f64>) -> SurfaceFrame {
    let g = [constraint_grad[0], constraint_grad[1], constraint_grad[2]];
    let n = norm3(&g);
    let normal = [g[0] / n, g[1] / n, g[2] / n];
    // pick the axis least aligned with the normal to seed the frame
    let mut axis = [0.0, 0.0, 0.0];
    let k = (0..3).min_by(|&a, &b| normal[a].abs().partial_cmp(&normal[b].abs()).unwrap()).unwrap();
    axis[k] = 1.0;
    let dot = axis[0] * normal[0] + axis[1] * normal[1] + axis[2] * normal[2];
    let mut t1 = [axis[0] - dot * normal[0], axis[1] - dot * normal[1], axis[2] - dot * normal[2]];
    let n1 = norm3(&t1);
    for v in t1.iter_mut() {
        *v /= n1;
    }
    let t2 = [
        normal[1] * t1[2] - normal[2] * t1[1],
        normal[2] * t1[0] - normal[0] * t1[2],
        normal[0] * t1[1] - normal[1] * t1[0],
    ];
    SurfaceFrame { normal, tangent: [t1, t2] }
}

/// Project a nearby point back onto the surface along the constraint
/// gradient (a couple of Newton steps are plenty at these scales).
pub fn project_to_surface(surface: &SurfaceModel, p: &[f64; 3]) -> [f64; 3] {
    let mut q = *p;
    for _ in 0..8 {
        let j = surface.constraint.eval_jet(&q).expect("constraint evaluation");
        let g = &j.gradient;
        let g2 = g.dot(g);
        if g2 == 0.0 {
            break;
        }
        let step = j.value / g2;
        q[0] -= step * g[0];
        q[1] -= step * g[1];
        q[2] -= step * g[2];
        if j.value.abs() < 1e-14 {
            break;
        }
    }
    q
}

/// Tangential gradient of `f` on the surface at `p`.
pub fn surface_gradient(f: &ScalarField, surface: &SurfaceModel, p: &[f64; 3]) -> [f64; 3] {
    let jf = f.jet(p);
    let jc = surface.constraint.eval_jet(p).expect("constraint evaluation");
    let frame = surface_frame(&jc.gradient);
    let d = jf.gradient[0] * frame.normal[0]
        + jf.gradient[1] * frame.normal[1]
        + jf.gradient[2] * frame.normal[2];
    [
        jf.gradient[0] - d * frame.normal[0],
        jf.gradient[1] - d * frame.normal[1],
        jf.gradient[2] - d * frame.normal[2],
    ]
}

/// Intrinsic Hessian of `f|_S` in an orthonormal tangent frame. Valid at
/// critical points; away from them it is the second fundamental form
/// corrected expression.
pub fn surface_hessian(f: &ScalarField, surface: &SurfaceModel, p: &[f64; 3]) -> DMatrix<f64> {
    let jf = f.jet(p);
    let jc = surface.constraint.eval_jet(p).expect("constraint evaluation");
    let frame = surface_frame(&jc.gradient);
    let gnorm = jc.gradient.norm();
    let fn_dot = jf.gradient[0] * frame.normal[0]
        + jf.gradient[1] * frame.normal[1]
        + jf.gradient[2] * frame.normal[2];
    let mut h = DMatrix::zeros(2, 2);
    for a in 0..2 {
        for b in 0..2 {
            let ta = frame.tangent[a];
            let tb = frame.tangent[b];
            let mut hf = 0.0;
            let mut hc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    hf += ta[i] * jf.hessian[(i, j)] * tb[j];
                    hc += ta[i] * jc.hessian[(i, j)] * tb[j];
                }
            }
            h[(a, b)] = hf - fn_dot / gnorm * hc;
        }
    }
    // symmetrize away roundoff
    let ht = h.transpose();
    (h + ht) * 0.5
}

fn classify(eigs: &[f64], position: &[f64]) -> Result<(usize, Vec<f64>), GeometryError> {
    let mut sorted = eigs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if let Some(bad) = sorted.iter().find(|e| e.abs() < MORSE_DEGENERACY_TOL) {
        return Err(GeometryError::NotMorse(bad.abs(), position.to_vec()));
    }
    let index = sorted.iter().filter(|e| **e < 0.0).count();
    Ok((index, sorted))
}

fn newton_euclidean(f: &ScalarField, start: &[f64], half_width: f64) -> Option<Vec<f64>> {
    let mut x = DVector::from_column_slice(start);
    for _ in 0..60 {
        let j = f.try_jet(x.as_slice()).ok()?;
        if !j.is_finite() {
            return None;
        }
        let g = j.gradient.clone();
        if g.norm() < 1e-13 {
            return Some(x.as_slice().to_vec());
        }
        let h = j.hessian.clone();
        let step = h.lu().solve(&g)?;
        let mut step = step;
        let cap = 0.5 * half_width;
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        x -= step;
        if x.iter().any(|v| v.abs() > 3.0 * half_width) {
            return None;
        }
    }
    let j = f.try_jet(x.as_slice()).ok()?;
    if j.gradient.norm() < CRITICAL_GRAD_TOL {
        Some(x.as_slice().to_vec())
    } else {
        None
    }
}

fn newton_surface(f: &ScalarField, surface: &SurfaceModel, start: &[f64; 3]) -> Option<[f64; 3]> {
    let mut p = project_to_surface(surface, start);
    let jf0 = f.try_jet(&p).ok()?;
    let jc0 = surface.constraint.eval_jet(&p).ok()?;
    let mut lambda = jf0.gradient.dot(&jc0.gradient) / jc0.gradient.dot(&jc0.gradient);
    for _ in 0..80 {
        let jf = f.try_jet(&p).ok()?;
        let jc = surface.constraint.eval_jet(&p).ok()?;
        let mut residual = DVector::zeros(4);
        for i in 0..3 {
            residual[i] = jf.gradient[i] - lambda * jc.gradient[i];
        }
        residual[3] = jc.value;
        let tangential = {
            let frame = surface_frame(&jc.gradient);
            let g = &jf.gradient;
            let d = g[0] * frame.normal[0] + g[1] * frame.normal[1] + g[2] * frame.normal[2];
            ((g[0] - d * frame.normal[0]).powi(2)
                + (g[1] - d * frame.normal[1]).powi(2)
                + (g[2] - d * frame.normal[2]).powi(2))
            .sqrt()
        };
        if tangential < 1e-12 && jc.value.abs() < 1e-12 {
            return Some(p);
        }
        let mut jac = DMatrix::zeros(4, 4);
        for i in 0..3 {
            for j in 0..3 {
                jac[(i, j)] = jf.hessian[(i, j)] - lambda * jc.hessian[(i, j)];
            }
            jac[(i, 3)] = -jc.gradient[i];
            jac[(3, i)] = jc.gradient[i];
        }
        let step = jac.lu().solve(&residual)?;
        let mut cap = 1.0;
        let snorm = (step[0] * step[0] + step[1] * step[1] + step[2] * step[2]).sqrt();
        if snorm > 0.5 {
            cap = 0.5 / snorm;
        }
        p[0] -= cap * step[0];
        p[1] -= cap * step[1];
        p[2] -= cap * step[2];
        lambda -= cap * step[3];
        if norm3(&p) > 1e3 {
            return None;
        }
    }
    None
}

/// Warning messages attached to a critical point search.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CriticalSearchDiagnostics {
    pub warnings: Vec<String>,
}

pub fn find_critical_points(
    model: &ManifoldModel,
    f: &ScalarField,
) -> Result<(Vec<CriticalPoint>, CriticalSearchDiagnostics), GeometryError> {
    let mut diags = CriticalSearchDiagnostics::default();
    let mut found: Vec<CriticalPoint> = Vec::new();
    match model {
        ManifoldModel::EuclideanBox(b) => {
            let dedup = 2.0 * b.spacing;
            let seeds_per_axis = 17usize;
            let step = 2.0 * b.half_width / (seeds_per_axis - 1) as f64;
            let seed_coord = |i: usize| -b.half_width + i as f64 * step;
            let seeds: Vec<Vec<f64>> = match b.dim {
                1 => (0..seeds_per_axis).map(|i| vec![seed_coord(i)]).collect(),
                2 => {
                    let mut s = Vec::new();
                    for i in 0..seeds_per_axis {
                        for j in 0..seeds_per_axis {
                            s.push(vec![seed_coord(i), seed_coord(j)]);
                        }
                    }
                    s
                }
                _ => unreachable!(),
            };
            for seed in &seeds {
                if let Some(root) = newton_euclidean(f, seed, b.half_width) {
                    if root.iter().any(|v| v.abs() > b.half_width) {
                        continue;
                    }
                    if found.iter().any(|c| {
                        c.position
                            .iter()
                            .zip(&root)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                            < dedup
                    }) {
                        continue;
                    }
                    let j = f.jet(&root);
                    let eigs = SymmetricEigen::new(j.hessian.clone()).eigenvalues;
                    let (index, sorted) = classify(eigs.as_slice(), &root)?;
                    found.push(CriticalPoint {
                        position: root,
                        index,
                        f_value: j.value,
                        hessian_eigs: sorted,
                    });
                }
            }
            // Flag coarse cells where every gradient component changes sign
            // but no root was found nearby.
            let scan = 33usize;
            let sstep = 2.0 * b.half_width / (scan - 1) as f64;
            let grad = |p: &[f64]| f.jet(p).gradient;
            if b.dim == 1 {
                for i in 0..scan - 1 {
                    let a = -b.half_width + i as f64 * sstep;
                    let gl = grad(&[a])[0];
                    let gr = grad(&[a + sstep])[0];
                    if gl * gr < 0.0 {
                        let mid = a + 0.5 * sstep;
                        let near = found
                            .iter()
                            .any(|c| (c.position[0] - mid).abs() < 2.0 * sstep);
                        if !near {
                            diags.warnings.push(format!(
                                "possible missed critical point near x = {mid:.4}"
                            ));
                        }
                    }
                }
            }
        }
        ManifoldModel::EmbeddedSurface(s) => {
            let dedup = 2.0 * s.mesh_scale;
            for seed in &s.seeds {
                if let Some(root) = newton_surface(f, s, seed) {
                    if found.iter().any(|c| {
                        c.position
                            .iter()
                            .zip(root.iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                            < dedup
                    }) {
                        continue;
                    }
                    let h = surface_hessian(f, s, &root);
                    let eigs = SymmetricEigen::new(h).eigenvalues;
                    let (index, sorted) = classify(eigs.as_slice(), &root)?;
                    found.push(CriticalPoint {
                        position: root.to_vec(),
                        index,
                        f_value: f.value(&root),
                        hessian_eigs: sorted,
                    });
                }
            }
        }
    }
    found.sort_by(|a, b| {
        a.position
            .partial_cmp(&b.position)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok((found, diags))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TamenessVerdict {
    StronglyTame,
    WellTame,
    NotTame,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShellSample {
    pub radius: f64,
    pub sup_ratio: f64,
    pub inf_grad: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TamenessReport {
    pub c_f_estimate: f64,
    pub epsilon_f_estimate: f64,
    pub verdict: TamenessVerdict,
    pub shell_samples: Vec<ShellSample>,
    /// Verdicts are statements at sample resolution, not limits.
    pub note: String,
}

fn operator_norm(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()))
}

/// Metric-aware |grad f| and |Hess f| at a point of a box model.
fn box_point_data(b: &BoxModel, f: &ScalarField, p: &[f64]) -> (f64, f64) {
    let j = f.jet(p);
    match &b.conformal_factor {
        None => (j.gradient.norm(), operator_norm(&j.hessian)),
        Some(mu) => {
            let jm = mu.eval_jet(p).expect("conformal factor evaluation");
            let m = jm.value;
            assert!(m > 0.0, "conformal factor must be positive");
            let grad_g = j.gradient.norm() / m;
            // covariant Hessian of the conformal metric in an orthonormal
            // frame: (H_ij - Gamma^k_ij f_k) / m^2 with
            // Gamma^k_ij = d_i(log m) delta_jk + d_j(log m) delta_ik
            //            - d_k(log m) delta_ij
            let n = b.dim;
            let dlog: Vec<f64> = (0..n).map(|k| jm.gradient[k] / m).collect();
            let mut hcov = DMatrix::zeros(n, n);
            for i in 0..n {
                for jx in 0..n {
                    let mut corr = 0.0;
                    corr += dlog[i] * j.gradient[jx];
                    corr += dlog[jx] * j.gradient[i];
                    if i == jx {
                        for k in 0..n {
                            corr -= dlog[k] * j.gradient[k];
                        }
                    }
                    hcov[(i, jx)] = (j.hessian[(i, jx)] - corr) / (m * m);
                }
            }
            (grad_g, operator_norm(&hcov))
        }
    }
}

/// Points on the sphere of radius `r` intersected with the surface, found
/// by a two-constraint Newton from scattered directions. Empty when the
/// surface does not reach that radius.
fn surface_shell_points(s: &SurfaceModel, r: f64, count: usize) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    for i in 0..count {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
        let rho = (1.0 - z * z).sqrt();
        let th = golden * i as f64;
        let dir = [rho * th.cos(), rho * th.sin(), z];
        let mut p = [dir[0] * r, dir[1] * r, dir[2] * r];
        let mut ok = false;
        for _ in 0..50 {
            let jc = match s.constraint.eval_jet(&p) {
                Ok(j) => j,
                Err(_) => break,
            };
            let cr = p[0] * p[0] + p[1] * p[1] + p[2] * p[2] - r * r;
            if jc.value.abs() < 1e-10 && cr.abs() < 1e-10 {
                ok = true;
                break;
            }
            // solve [grad c; 2p]^T step = [c; cr] in least squares
            let a = DMatrix::from_row_slice(
                2,
                3,
                &[
                    jc.gradient[0],
                    jc.gradient[1],
                    jc.gradient[2],
                    2.0 * p[0],
                    2.0 * p[1],
                    2.0 * p[2],
                ],
            );
            let rhs = DVector::from_column_slice(&[jc.value, cr]);
            let ata = &a * a.transpose();
            let sol = match ata.lu().solve(&rhs) {
                Some(s) => a.transpose() * s,
                None => break,
            };
            p[0] -= sol[0];
            p[1] -= sol[1];
            p[2] -= sol[2];
            if !p.iter().all(|v| v.is_finite()) {
                break;
            }
        }
        if ok && !pts.iter().any(|q: &[f64; 3]| {
            ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt() < 1e-6
        }) {
            pts.push(p);
        }
    }
    pts
}

pub fn check_tameness(
    model: &ManifoldModel,
    f: &ScalarField,
    shells: &[f64],
) -> Result<TamenessReport, GeometryError> {
    assert!(shells.windows(2).all(|w| w[0] < w[1]), "shells must be strictly increasing");
    let mut samples = Vec::new();
    let mut compact_exhausted = false;
    match model {
        ManifoldModel::EuclideanBox(b) => {
            for &r in shells {
                if r > b.half_width {
                    return Err(GeometryError::ShellOutsideBox(r, b.half_width));
                }
                let count = (64 * b.dim).max(2);
                let pts: Vec<Vec<f64>> = match b.dim {
                    1 => vec![vec![-r], vec![r]],
                    2 => (0..count)
                        .map(|k| {
                            let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                            vec![r * th.cos(), r * th.sin()]
                        })
                        .collect(),
                    _ => unreachable!(),
                };
                let mut sup_ratio = 0.0f64;
                let mut inf_grad = f64::INFINITY;
                for p in &pts {
                    let (g, h) = box_point_data(b, f, p);
                    inf_grad = inf_grad.min(g);
                    let ratio = if g > 0.0 { h / (g * g) } else { f64::INFINITY };
                    sup_ratio = sup_ratio.max(ratio);
                }
                samples.push(ShellSample { radius: r, sup_ratio, inf_grad });
            }
        }
        ManifoldModel::EmbeddedSurface(s) => {
            for &r in shells {
                let pts = surface_shell_points(s, r, 128);
                if pts.is_empty() {
                    compact_exhausted = true;
                    continue;
                }
                let mut sup_ratio = 0.0f64;
                let mut inf_grad = f64::INFINITY;
                for p in &pts {
                    let g = norm3(&surface_gradient(f, s, p));
                    let h = operator_norm(&surface_hessian(f, s, p));
                    inf_grad = inf_grad.min(g);
                    let ratio = if g > 0.0 { h / (g * g) } else { f64::INFINITY };
                    sup_ratio = sup_ratio.max(ratio);
                }
                samples.push(ShellSample { radius: r, sup_ratio, inf_grad });
            }
        }
    }

    if samples.is_empty() && compact_exhausted {
        return Ok(TamenessReport {
            c_f_estimate: 0.0,
            epsilon_f_estimate: f64::INFINITY,
            verdict: TamenessVerdict::StronglyTame,
            shell_samples: samples,
            note: "compact model at sample resolution: growth conditions hold vacuously"
                .to_string(),
        });
    }

    let outer: Vec<&ShellSample> = samples.iter().rev().take(3).rev().collect();
    let c_f = outer.iter().fold(0.0f64, |m, s| m.max(s.sup_ratio));
    let eps_f = outer.iter().fold(f64::INFINITY, |m, s| m.min(s.inf_grad));

    let ratio_decreasing = outer.windows(2).all(|w| {
        w[1].sup_ratio < w[0].sup_ratio * (1.0 - 1e-9) || w[1].sup_ratio < 1e-12
    });
    let ratio_vanishing = outer
        .last()
        .map(|s| s.sup_ratio < 1e-9 || s.sup_ratio <= 0.75 * outer[0].sup_ratio)
        .unwrap_or(false);
    let grad_increasing = outer.windows(2).all(|w| w[1].inf_grad > w[0].inf_grad * (1.0 + 1e-9));
    let grad_unbounded = outer
        .last()
        .map(|s| s.inf_grad >= 1.2 * outer[0].inf_grad)
        .unwrap_or(false);
    let grad_collapsing = outer
        .last()
        .map(|s| s.inf_grad <= 0.5 * outer[0].inf_grad)
        .unwrap_or(false);
    let ratio_exploding = outer
        .last()
        .map(|s| s.sup_ratio > 10.0 * outer[0].sup_ratio.max(1e-12) && s.sup_ratio > 1e3)
        .unwrap_or(false);

    let verdict = if grad_collapsing || ratio_exploding || eps_f < 1e-9 {
        TamenessVerdict::NotTame
    } else if ratio_decreasing && ratio_vanishing && grad_increasing && grad_unbounded {
        TamenessVerdict::StronglyTame
    } else {
        TamenessVerdict::WellTame
    };

    Ok(TamenessReport {
        c_f_estimate: c_f,
        epsilon_f_estimate: eps_f,
        verdict,
        shell_samples: samples,
        note: "verdict holds at sample resolution over the listed shells".to_string(),
    })
}

/// Compact core: a grid-aligned box certified against a distance target in
/// the rescaled metric.
#[derive(Debug, Clone, Serialize)]
pub struct CompactCore {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub contains: Vec<CriticalPoint>,
    pub d_margin: f64,
    pub description: String,
}

impl CompactCore {
    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }
}

/// Agmon edge weight on the grid graph: bT * mean of |grad f|_g at the two
/// endpoints * metric edge length.
pub fn agmon_edge_weight(
    b_model: &BoxModel,
    f: &ScalarField,
    t: f64,
    b: f64,
    grad_norm: &[f64],
    grid: &Grid,
    p: usize,
    q: usize,
) -> f64 {
    let cp = grid.coords(p);
    let cq = grid.coords(q);
    let mut len2 = 0.0;
    for d in 0..grid.dim {
        len2 += (cp[d] - cq[d]) * (cp[d] - cq[d]);
    }
    let mut len = len2.sqrt();
    if b_model.conformal_factor.is_some() {
        let mid: Vec<f64> = cp.iter().zip(&cq).map(|(a, c)| 0.5 * (a + c)).collect();
        len *= b_model.factor_at(&mid);
    }
    let _ = f;
    b * t * 0.5 * (grad_norm[p] + grad_norm[q]) * len
}

/// Metric gradient norms at every grid node.
pub fn grad_norm_field(b_model: &BoxModel, f: &ScalarField, grid: &Grid) -> Vec<f64> {
    (0..grid.node_count())
        .map(|n| {
            let p = grid.coords(n);
            let j = f.jet(&p);
            match &b_model.conformal_factor {
                None => j.gradient.norm(),
                Some(mu) => j.gradient.norm() / mu.eval(&p).expect("conformal factor"),
            }
        })
        .collect()
}

fn expand_box_to_distance(
    b_model: &BoxModel,
    f: &ScalarField,
    t: f64,
    b: f64,
    crits: &[CriticalPoint],
    target: f64,
    anchor: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
    let grid = b_model.grid();
    let h = b_model.spacing;
    let dim = b_model.dim;
    // quantize expansions so core selection is stable across nearby T
    let quantum = h * (0.05 / h).ceil().max(1.0);
    let grad = grad_norm_field(b_model, f, &grid);

    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for c in crits {
        for d in 0..dim {
            lo[d] = lo[d].min(c.position[d]);
            hi[d] = hi[d].max(c.position[d]);
        }
    }
    for d in 0..dim {
        lo[d] = lo[d].min(anchor[d]) - h;
        hi[d] = hi[d].max(anchor[d]) + h;
    }

    let crit_nodes: Vec<usize> = crits.iter().map(|c| grid.nearest_node(&c.position)).collect();
    let anchor_node = grid.nearest_node(anchor);

    loop {
        for d in 0..dim {
            if lo[d] < -b_model.half_width + h || hi[d] > b_model.half_width - h {
                return Err(GeometryError::EnlargeR);
            }
        }
        // boundary ring of the candidate box
        let mut sources = Vec::new();
        for n in 0..grid.node_count() {
            let p = grid.coords(n);
            let inside =
                (0..dim).all(|d| p[d] >= lo[d] - 0.5 * h && p[d] <= hi[d] + 0.5 * h);
            if !inside {
                continue;
            }
            let interior = (0..dim).all(|d| p[d] > lo[d] + 0.6 * h && p[d] < hi[d] - 0.6 * h);
            if !interior {
                sources.push(n);
            }
        }
        if !sources.is_empty() {
            let dist = dijkstra(&grid, &sources, |p, q| {
                agmon_edge_weight(b_model, f, t, b, &grad, &grid, p, q)
            });
            let mut worst = f64::INFINITY;
            for &cn in crit_nodes.iter().chain(std::iter::once(&anchor_node)) {
                worst = worst.min(dist[cn]);
            }
            if worst > target {
                return Ok((lo, hi));
            }
        }
        for d in 0..dim {
            lo[d] -= quantum;
            hi[d] += quantum;
        }
    }
}

/// Select the compact core: the smallest quantized grid box whose boundary
/// sits farther than `D + 1` from every critical point in the rescaled
/// metric, with `D` computed from critical values and the base point.
pub fn select_core(
    model: &ManifoldModel,
    f: &ScalarField,
    t: f64,
    b: f64,
    critical_points: &[CriticalPoint],
) -> Result<CompactCore, GeometryError> {
    assert!(b > 0.0 && b < 1.0, "b must lie in (0,1)");
    let b_model = match model {
        ManifoldModel::EuclideanBox(m) => m,
        ManifoldModel::EmbeddedSurface(_) => {
            panic!("core selection applies to box models; surfaces are handled by the flow stage")
        }
    };
    // base point: critical point of minimal |f|; origin when there are none
    let p0: Vec<f64> = critical_points
        .iter()
        .min_by(|a, c| {
            a.f_value
                .abs()
                .partial_cmp(&c.f_value.abs())
                .unwrap()
                .then(a.position.partial_cmp(&c.position).unwrap_or(std::cmp::Ordering::Equal))
        })
        .map(|c| c.position.clone())
        .unwrap_or_else(|| vec![0.0; b_model.dim]);
    let f0 = f.value(&p0);
    let mut d_sup = 0.0f64;
    for x in critical_points {
        for y in critical_points {
            let v = (x.f_value - f0).abs() + (x.f_value - y.f_value).abs();
            d_sup = d_sup.max(v);
        }
    }
    let d_margin = b * t * d_sup;
    let (lo, hi) =
        expand_box_to_distance(b_model, f, t, b, critical_points, d_margin + 1.0, &p0)?;
    Ok(CompactCore {
        lo,
        hi,
        contains: critical_points.to_vec(),
        d_margin,
        description: format!("sublevel-box core, D = {d_margin:.6}, margin target D+1"),
    })
}

/// Small core used by the decay diagnostics: critical points plus a unit
/// margin in the rescaled metric (the spectral-section core, which keeps
/// the far field visible to the decay fits).
pub fn decay_core(
    model: &ManifoldModel,
    f: &ScalarField,
    t: f64,
    b: f64,
    critical_points: &[CriticalPoint],
) -> Result<CompactCore, GeometryError> {
    let b_model = match model {
        ManifoldModel::EuclideanBox(m) => m,
        ManifoldModel::EmbeddedSurface(_) => panic!("decay core applies to box models"),
    };
    let anchor: Vec<f64> = critical_points
        .first()
        .map(|c| c.position.clone())
        .unwrap_or_else(|| vec![0.0; b_model.dim]);
    let (lo, hi) = expand_box_to_distance(b_model, f, t, b, critical_points, 1.0, &anchor)?;
    Ok(CompactCore {
        lo,
        hi,
        contains: critical_points.to_vec(),
        d_margin: 0.0,
        description: "decay core: critical set with unit margin in the rescaled metric"
            .to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_dsl::parse;

    fn field(src: &str, dim: usize) -> ScalarField {
        ScalarField::new(parse(src, dim).unwrap(), dim)
    }

    #[test]
    fn cubic_critical_points() {
        let model = ManifoldModel::EuclideanBox(BoxModel::new(1, 4.0, 0.05));
        let f = field("x1^3/3 - x1", 1);
        let (crits, _) = find_critical_points(&model, &f).unwrap();
        assert_eq!(crits.len(), 2);
        let saddle = &crits[0];
        let min = &crits[1];
        assert!((saddle.position[0] + 1.0).abs() < 1e-9);
        assert_eq!(saddle.index, 1);
        assert!((saddle.f_value - 2.0 / 3.0).abs() < 1e-12);
        assert!((min.position[0] - 1.0).abs() < 1e-9);
        assert_eq!(min.index, 0);
        assert!((min.f_value + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn paraboloid_critical_point() {
        let model = ManifoldModel::EuclideanBox(BoxModel::new(2, 2.0, 0.1));
        let f = field("x1^2 + x2^2", 2);
        let (crits, _) = find_critical_points(&model, &f).unwrap();
        assert_eq!(crits.len(), 1);
        assert_eq!(crits[0].index, 0);
        assert!(crits[0].position.iter().all(|v| v.abs() < 1e-10));
    }

    fn unit_sphere() -> SurfaceModel {
        let constraint = parse("x1^2 + x2^2 + x3^2 - 1", 3).unwrap();
        let mut seeds = Vec::new();
        for i in 0..8 {
            for j in 0..4 {
                let th = std::f64::consts::PI * (j as f64 + 0.5) / 4.0;
                let ph = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
                seeds.push([th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
            }
        }
        seeds.push([0.0, 0.0, 1.0]);
        seeds.push([0.0, 0.0, -1.0]);
        SurfaceModel { constraint, seeds, mesh_scale: 0.02 }
    }

    /// Lagrange-multiplier oracle: grad(x^2 + z) = lambda grad(|p|^2 - 1)
    /// has solutions (0,0,±1) and (±sqrt(3)/2, 0, 1/2).
    #[test]
    fn sphere_height_critical_points() {
        let surface = unit_sphere();
        let model = ManifoldModel::EmbeddedSurface(surface);
        let f = field("x1^2 + x3", 3);
        let (crits, _) = find_critical_points(&model, &f).unwrap();
        assert_eq!(crits.len(), 4, "found: {crits:?}");
        let mut maxima = 0;
        let mut saddles = 0;
        let mut minima = 0;
        for c in &crits {
            match c.index {
                2 => {
                    maxima += 1;
                    assert!((c.f_value - 1.25).abs() < 1e-8);
                    assert!((c.position[0].abs() - 3.0f64.sqrt() / 2.0).abs() < 1e-7);
                    assert!(c.position[1].abs() < 1e-7);
                    assert!((c.position[2] - 0.5).abs() < 1e-7);
                }
                1 => {
                    saddles += 1;
                    assert!((c.f_value - 1.0).abs() < 1e-8);
                    assert!((c.position[2] - 1.0).abs() < 1e-7);
                }
                0 => {
                    minima += 1;
                    assert!((c.f_value + 1.0).abs() < 1e-8);
                    assert!((c.position[2] + 1.0).abs() < 1e-7);
                }
                _ => panic!("unexpected index"),
            }
        }
        assert_eq!((maxima, saddles, minima), (2, 1, 1));
    }

    #[test]
    fn cubic_is_strongly_tame_on_wide_shells() {
        let model = ManifoldModel::EuclideanBox(BoxModel::new(1, 20.0, 0.5));
        let f = field("x1^3/3 - x1", 1);
        let report = check_tameness(&model, &f, &[4.0, 8.0, 16.0]).unwrap();
        assert_eq!(report.verdict, TamenessVerdict::StronglyTame, "{report:?}");
        let s = &report.shell_samples;
        assert!(s[0].sup_ratio > s[1].sup_ratio && s[1].sup_ratio > s[2].sup_ratio);
        assert!(s[0].inf_grad < s[1].inf_grad && s[1].inf_grad < s[2].inf_grad);
    }

    #[test]
    fn linear_field_is_well_tame_only() {
        let model = ManifoldModel::EuclideanBox(BoxModel::new(1, 10.0, 0.25));
        let f = field("x1", 1);
        let report = check_tameness(&model, &f, &[4.0, 8.0]).unwrap();
        assert_eq!(report.verdict, TamenessVerdict::WellTame);
        assert!(report.shell_samples.iter().all(|s| s.sup_ratio == 0.0));
        assert!(report.shell_samples.iter().all(|s| (s.inf_grad - 1.0).abs() < 1e-12));
    }

    #[test]
    fn shell_outside_box_errors() {
        let model = ManifoldModel::EuclideanBox(BoxModel::new(1, 4.0, 0.1));
        let f = field("x1", 1);
        assert!(matches!(
            check_tameness(&model, &f, &[2.0, 8.0]),
            Err(GeometryError::ShellOutsideBox(..))
        ));
    }

    #[test]
    fn single_minimum_core_is_small() {
        let model = ManifoldModel::EuclideanBox(BoxModel::new(1, 6.0, 0.05));
        let f = field("x1^2/2", 1);
        let (crits, _) = find_critical_points(&model, &f).unwrap();
        let core = select_core(&model, &f, 10.0, 0.9, &crits).unwrap();
        assert_eq!(core.d_margin, 0.0);
        // rescaled radius 1 around 0: 0.9*10*x^2/2 = 1 -> x ~ 0.47
        assert!(core.hi[0] > 0.4 && core.hi[0] < 0.8, "core: {core:?}");
        assert!(core.contains_point(&[0.0]));
    }

    /// D per the critical-value formula: sup over pairs of
    /// bT(|f(x)-f(p0)| + |f(x)-f(y)|) with p0 the minimal-|f| critical
    /// point. For the cubic at T = 10, b = 0.9 this is 0.9*10*(4/3 + 4/3).
    #[test]
    fn cubic_core_margin_formula() {
        let model = ManifoldModel::EuclideanBox(BoxModel::new(1, 4.0, 0.05));
        let f = field("x1^3/3 - x1", 1);
        let (crits, _) = find_critical_points(&model, &f).unwrap();
        let core = select_core(&model, &f, 10.0, 0.9, &crits).unwrap();
        assert!((core.d_margin - 24.0).abs() < 1e-6, "D = {}", core.d_margin);
    }

    #[test]
    fn core_grows_unboundedly_with_t_errors() {
        let model = ManifoldModel::EuclideanBox(BoxModel::new(1, 2.0, 0.05));
        let f = field("x1^3/3 - x1", 1);
        let (crits, _) = find_critical_points(&model, &f).unwrap();
        assert!(matches!(
            select_core(&model, &f, 50.0, 0.9, &crits),
            Err(GeometryError::EnlargeR)
        ));
    }

    #[test]
    fn core_selection_monotone_in_t() {
        let model = ManifoldModel::EuclideanBox(BoxModel::new(1, 4.0, 0.01));
        let f = field("x1^3/3 - x1", 1);
        let (crits, _) = find_critical_points(&model, &f).unwrap();
        let c1 = select_core(&model, &f, 15.0, 0.9, &crits).unwrap();
        let c2 = select_core(&model, &f, 30.0, 0.9, &crits).unwrap();
        assert!(c2.lo[0] <= c1.lo[0] + 1e-12 && c2.hi[0] >= c1.hi[0] - 1e-12);
    }
}
