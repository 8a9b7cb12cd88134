//! The rescaled negative gradient flow: trajectory integration with
//! capture/escape/stuck resolution, linearized-flow frame transport, the
//! counting complex built from signed connecting orbits, and the
//! integration chain map onto its dual.

mod chain_map;
mod complex;

pub use chain_map::{chain_map, commutation_defect, ChainMapError, ChainMapMatrix};
pub use complex::{
    build_thom_smale, homology_ranks, Connection, ThomSmaleComplex, ThomSmaleError,
    ThomSmaleOptions,
};

use serde::Serialize;

use crate::agmon::AgmonField;
use crate::collar::smooth_step;
use crate::collar::Scalar2;
use crate::geometry::{
    project_to_surface, surface_gradient, BoxModel, CompactCore, CriticalPoint, ScalarField,
    SurfaceModel,
};

/// Trajectories entering this ball are declared stuck and dropped; this is
/// how the puncture is realized (flow lines are invariant under conformal
/// changes, so removing the point is what the flow sees).
#[derive(Debug, Clone, Serialize)]
pub struct PunctureMask {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub enum FlowSpace {
    Box {
        model: BoxModel,
        core_lo: Vec<f64>,
        core_hi: Vec<f64>,
    },
    Surface {
        surface: SurfaceModel,
        mask: Option<PunctureMask>,
        escape_radius: f64,
    },
}

/// The vector field `-F grad f` with `F = 1/(T^2 |grad f|^2)` away from
/// the core and a smooth positive interpolation inside (constant
/// `1/(T^2 m0)` deep inside, `m0` the median squared gradient on the core
/// boundary). Any positive rescale preserves trajectories.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub f: ScalarField,
    pub t: f64,
    pub space: FlowSpace,
    pub blend_floor: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        1.0
    } else {
        v[v.len() / 2]
    }
}

impl FlowField {
    pub fn for_box(f: &ScalarField, t: f64, model: &BoxModel, core: &CompactCore) -> Self {
        // median |grad f|^2 over core boundary samples
        let mut samples = Vec::new();
        let dim = model.dim;
        let n_side = 65;
        for d in 0..dim {
            for side in [0, 1] {
                for k in 0..n_side {
                    let mut p = vec![0.0; dim];
                    p[d] = if side == 0 { core.lo[d] } else { core.hi[d] };
                    if dim == 2 {
                        let o = 1 - d;
                        p[o] = core.lo[o]
                            + (core.hi[o] - core.lo[o]) * k as f64 / (n_side - 1) as f64;
                    }
                    samples.push(f.jet(&p).gradient.norm_squared());
                }
            }
        }
        FlowField {
            f: f.clone(),
            t,
            space: FlowSpace::Box {
                model: model.clone(),
                core_lo: core.lo.clone(),
                core_hi: core.hi.clone(),
            },
            blend_floor: median(samples).max(1e-12),
        }
    }

    pub fn for_surface(
        f: &ScalarField,
        t: f64,
        surface: &SurfaceModel,
        mask: Option<PunctureMask>,
        escape_radius: f64,
    ) -> Self {
        let samples: Vec<f64> = surface
            .seeds
            .iter()
            .map(|s| {
                let p = project_to_surface(surface, s);
                let g = surface_gradient(f, surface, &p);
                g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
            })
            .collect();
        FlowField {
            f: f.clone(),
            t,
            space: FlowSpace::Surface { surface: surface.clone(), mask, escape_radius },
            blend_floor: median(samples).max(1e-12),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match &self.space {
            FlowSpace::Box { model, .. } => model.dim,
            FlowSpace::Surface { .. } => 3,
        }
    }

    /// Smooth indicator of the core interior (1 deep inside, 0 outside).
    fn core_blend(&self, p: &[f64]) -> f64 {
        match &self.space {
            FlowSpace::Surface { .. } => {
                // surfaces regularize by gradient magnitude instead
                let g = self.raw_gradient(p);
                let g2: f64 = g.iter().map(|v| v * v).sum();
                let m0 = self.blend_floor;
                if g2 >= m0 {
                    0.0
                } else {
                    1.0 - smooth_step(Scalar2::var(g2 / m0)).v
                }
            }
            FlowSpace::Box { core_lo, core_hi, .. } => {
                let mut chi = 1.0;
                for d in 0..p.len() {
                    let half = 0.5 * (core_hi[d] - core_lo[d]);
                    let center = 0.5 * (core_hi[d] + core_lo[d]);
                    let margin = (0.2 * half).max(1e-9);
                    let xi = ((p[d] - center).abs() - (half - margin)) / margin;
                    chi *= 1.0 - smooth_step(Scalar2::var(xi)).v;
                }
                chi
            }
        }
    }

    fn raw_gradient(&self, p: &[f64]) -> Vec<f64> {
        match &self.space {
            FlowSpace::Box { .. } => {
                let j = self.f.jet(p);
                j.gradient.as_slice().to_vec()
            }
            FlowSpace::Surface { surface, .. } => {
                let q = [p[0], p[1], p[2]];
                surface_gradient(&self.f, surface, &q).to_vec()
            }
        }
    }

    /// The rescale factor F at a point.
    pub fn rescale(&self, p: &[f64]) -> f64 {
        let g = self.raw_gradient(p);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let chi = self.core_blend(p);
        let denom = ((1.0 - chi) * g2 + chi * self.blend_floor).max(1e-300);
        1.0 / (self.t * self.t * denom)
    }

    pub fn velocity(&self, p: &[f64]) -> Vec<f64> {
        let g = self.raw_gradient(p);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let chi = self.core_blend(p);
        let denom = ((1.0 - chi) * g2 + chi * self.blend_floor).max(1e-300);
        let scale = -1.0 / (self.t * self.t * denom);
        g.iter().map(|v| v * scale).collect()
    }

    /// Jacobian of the velocity by central differences (used by the
    /// linearized flow).
    pub fn velocity_jacobian(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let n = p.len();
        let mut cols = Vec::with_capacity(n);
        let scale: f64 = p.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let delta = 1e-6 * scale;
        for d in 0..n {
            let mut pp = p.to_vec();
            let mut pm = p.to_vec();
            pp[d] += delta;
            pm[d] -= delta;
            let vp = self.velocity(&pp);
            let vm = self.velocity(&pm);
            cols.push(
                vp.iter()
                    .zip(&vm)
                    .map(|(a, b)| (a - b) / (2.0 * delta))
                    .collect::<Vec<f64>>(),
            );
        }
        cols
    }

    pub fn f_value(&self, p: &[f64]) -> f64 {
        self.f.value(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FlowEnd {
    /// Index of the capturing critical point (in the list passed in).
    Captured(usize),
    Escaped,
    Stuck,
    Unresolved,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolyPoint {
    pub t: f64,
    pub position: Vec<f64>,
    pub f_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowLine {
    pub end: FlowEnd,
    pub polyline: Vec<PolyPoint>,
    pub sign: Option<i8>,
    /// log of the parallelepiped volume spanned by the transported frame
    /// relative to its launch volume, one entry per polyline point.
    pub log_frame_volume: Vec<f64>,
    /// normalized transported frame vectors per polyline point (empty when
    /// no frame was requested).
    pub frame_dirs: Vec<Vec<Vec<f64>>>,
    /// transported frame vectors at the final recorded point.
    pub final_frame: Vec<Vec<f64>>,
}

pub struct IntegrateOptions<'a> {
    pub crits: &'a [CriticalPoint],
    pub capture_radius: f64,
    pub t_max: f64,
    pub error_tol: f64,
    /// tangent vectors to transport with the linearized flow
    pub frame: Vec<Vec<f64>>,
}

impl<'a> IntegrateOptions<'a> {
    pub fn new(crits: &'a [CriticalPoint], capture_radius: f64, t_max: f64) -> Self {
        IntegrateOptions { crits, capture_radius, t_max, error_tol: 1e-9, frame: Vec::new() }
    }
}

fn project_state(space: &FlowSpace, p: &mut [f64]) {
    if let FlowSpace::Surface { surface, .. } = space {
        let q = project_to_surface(surface, &[p[0], p[1], p[2]]);
        p.copy_from_slice(&q);
    }
}

fn project_frame(space: &FlowSpace, f: &ScalarField, p: &[f64], frame: &mut [Vec<f64>]) {
    if let FlowSpace::Surface { surface, .. } = space {
        let _ = f;
        let jc = surface.constraint.eval_jet(p).expect("constraint");
        let fr = crate::geometry::surface_frame(&jc.gradient);
        for v in frame.iter_mut() {
            let d = v[0] * fr.normal[0] + v[1] * fr.normal[1] + v[2] * fr.normal[2];
            for k in 0..3 {
                v[k] -= d * fr.normal[k];
            }
        }
    }
}

fn normalized_frame(frame: &[Vec<f64>]) -> Vec<Vec<f64>> {
    frame
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            v.iter().map(|x| x / n).collect()
        })
        .collect()
}

fn frame_volume(frame: &[Vec<f64>]) -> f64 {
    match frame.len() {
        0 => 1.0,
        1 => frame[0].iter().map(|v| v * v).sum::<f64>().sqrt(),
        k => {
            // Gram determinant
            let mut gram = nalgebra::DMatrix::zeros(k, k);
            for i in 0..k {
                for j in 0..k {
                    gram[(i, j)] = frame[i].iter().zip(&frame[j]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            gram.determinant().abs().sqrt()
        }
    }
}

/// Integrate the rescaled flow from `start` until capture at a critical
/// point, escape through the domain boundary, step collapse or the mask
/// (stuck), or the time horizon.
pub fn integrate_flow(field: &FlowField, start: &[f64], opts: &IntegrateOptions) -> FlowLine {
    let dim = field.ambient_dim();
    assert_eq!(start.len(), dim);
    let mut p = start.to_vec();
    project_state(&field.space, &mut p);
    let mut frame = opts.frame.clone();
    project_frame(&field.space, &field.f, &p, &mut frame);
    let mut log_vol_offset = 0.0;
    let initial_vol = frame_volume(&frame).max(1e-300);

    let mut t = 0.0;
    let mut dt = 0.05;
    let dt_min = 1e-13;
    let dt_max = opts.t_max / 16.0;

    let mut polyline = vec![PolyPoint { t, position: p.clone(), f_value: field.f_value(&p) }];
    let mut log_volumes = vec![0.0];
    let mut frame_dirs: Vec<Vec<Vec<f64>>> = if frame.is_empty() {
        Vec::new()
    } else {
        vec![normalized_frame(&frame)]
    };
    let mut capture_candidate: Option<(usize, usize)> = None; // (crit, confirmations)

    // derivative of the augmented state (position + frame vectors)
    let deriv = |p: &[f64], frame: &[Vec<f64>]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let v = field.velocity(p);
        if frame.is_empty() {
            return (v, Vec::new());
        }
        let jac = field.velocity_jacobian(p); // jac[d] = column d
        let dv = frame
            .iter()
            .map(|w| {
                let mut out = vec![0.0; p.len()];
                for (d, col) in jac.iter().enumerate() {
                    for i in 0..p.len() {
                        out[i] += col[i] * w[d];
                    }
                }
                out
            })
            .collect();
        (v, dv)
    };

    let max_steps = 2_000_000usize;
    for _ in 0..max_steps {
        if t >= opts.t_max {
            return FlowLine {
                end: FlowEnd::Unresolved,
                polyline,
                sign: None,
                log_frame_volume: log_volumes,
                frame_dirs,
                final_frame: frame,
            };
        }
        // embedded RK step: two half steps of RK4 against one full step
        let step_rk4 = |p0: &Vec<f64>, fr0: &Vec<Vec<f64>>, h: f64| -> (Vec<f64>, Vec<Vec<f64>>) {
            let add = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> {
                a.iter().zip(b).map(|(x, y)| x + s * y).collect()
            };
            let addf = |a: &[Vec<f64>], b: &[Vec<f64>], s: f64| -> Vec<Vec<f64>> {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + s * v).collect())
                    .collect()
            };
            let (k1, fk1) = deriv(p0, fr0);
            let (k2, fk2) = deriv(&add(p0, &k1, h / 2.0), &addf(fr0, &fk1, h / 2.0));
            let (k3, fk3) = deriv(&add(p0, &k2, h / 2.0), &addf(fr0, &fk2, h / 2.0));
            let (k4, fk4) = deriv(&add(p0, &k3, h), &addf(fr0, &fk3, h));
            let mut pn = p0.clone();
            for i in 0..pn.len() {
                pn[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            let mut frn = fr0.clone();
            for (w, (a, (b, (c, d)))) in frn
                .iter_mut()
                .zip(fk1.iter().zip(fk2.iter().zip(fk3.iter().zip(fk4.iter()))))
            {
                for i in 0..w.len() {
                    w[i] += h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
                }
            }
            (pn, frn)
        };

        let (full_p, _) = step_rk4(&p, &frame, dt);
        let (half_p, half_f) = step_rk4(&p, &frame, dt / 2.0);
        let (two_p, two_f) = step_rk4(&half_p, &half_f, dt / 2.0);
        let err: f64 = full_p
            .iter()
            .zip(&two_p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let tol = opts.error_tol * dt.max(1e-30) * (1.0 + p.iter().map(|v| v * v).sum::<f64>().sqrt());
        if err > tol && dt > dt_min {
            dt = (dt * 0.5).max(dt_min);
            continue;
        }
        // accept (Richardson-extrapolated position)
        let mut new_p: Vec<f64> = two_p
            .iter()
            .zip(&full_p)
            .map(|(a, b)| a + (a - b) / 15.0)
            .collect();
        project_state(&field.space, &mut new_p);
        let mut new_frame = two_f;
        project_frame(&field.space, &field.f, &new_p, &mut new_frame);
        t += dt;
        p = new_p;
        frame = new_frame;
        // renormalize the frame to avoid overflow, tracking the log volume
        let vol = frame_volume(&frame);
        if !frame.is_empty() && (vol > 1e100 || vol < 1e-100) && vol > 0.0 {
            let k = frame.len() as f64;
            let s = vol.powf(-1.0 / k);
            for w in frame.iter_mut() {
                for v in w.iter_mut() {
                    *v *= s;
                }
            }
            log_vol_offset += vol.ln();
        }
        polyline.push(PolyPoint { t, position: p.clone(), f_value: field.f_value(&p) });
        log_volumes.push(log_vol_offset + (frame_volume(&frame).max(1e-300) / initial_vol).ln());
        if !frame.is_empty() {
            frame_dirs.push(normalized_frame(&frame));
        }
        if err < tol / 16.0 {
            dt = (dt * 2.0).min(dt_max);
        }

        // mask check
        if let FlowSpace::Surface { mask: Some(m), .. } = &field.space {
            let d2 = (p[0] - m.center[0]).powi(2)
                + (p[1] - m.center[1]).powi(2)
                + (p[2] - m.center[2]).powi(2);
            if d2.sqrt() < m.radius {
                return FlowLine {
                    end: FlowEnd::Stuck,
                    polyline,
                    sign: None,
                    log_frame_volume: log_volumes,
                    frame_dirs,
                    final_frame: frame,
                };
            }
        }
        // escape check
        let escaped = match &field.space {
            FlowSpace::Box { model, .. } => p.iter().any(|v| v.abs() > model.half_width),
            FlowSpace::Surface { escape_radius, .. } => {
                p.iter().map(|v| v * v).sum::<f64>().sqrt() > *escape_radius
            }
        };
        if escaped {
            return FlowLine {
                end: FlowEnd::Escaped,
                polyline,
                sign: None,
                log_frame_volume: log_volumes,
                frame_dirs,
                final_frame: frame,
            };
        }
        // capture check with confirmation steps
        let nearest = opts
            .crits
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let d2: f64 = c
                    .position
                    .iter()
                    .zip(&p)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (i, d2.sqrt())
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if let Some((ci, dist)) = nearest {
            if dist < opts.capture_radius {
                let f_now = polyline.last().unwrap().f_value;
                let f_prev = polyline[polyline.len().saturating_sub(2)].f_value;
                let decreasing = f_now <= f_prev + 1e-12 * (1.0 + f_prev.abs());
                capture_candidate = match capture_candidate {
                    Some((prev, conf)) if prev == ci && decreasing => Some((ci, conf + 1)),
                    _ => Some((ci, 0)),
                };
                if let Some((_, conf)) = capture_candidate {
                    if conf >= 3 {
                        return FlowLine {
                            end: FlowEnd::Captured(ci),
                            polyline,
                            sign: None,
                            log_frame_volume: log_volumes,
                            frame_dirs,
                            final_frame: frame,
                        };
                    }
                }
            } else {
                capture_candidate = None;
            }
        }
        if dt <= dt_min {
            return FlowLine {
                end: FlowEnd::Stuck,
                polyline,
                sign: None,
                log_frame_volume: log_volumes,
                frame_dirs,
                final_frame: frame,
            };
        }
    }
    FlowLine {
        end: FlowEnd::Unresolved,
        polyline,
        sign: None,
        log_frame_volume: log_volumes,
        frame_dirs,
        final_frame: frame,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowDistanceReport {
    pub lines_checked: usize,
    pub max_deviation: f64,
    pub max_drift: f64,
    pub pass: bool,
    pub skipped: usize,
}

/// Along escaping lines the distance field grows linearly at rate b/T in
/// flow time; the deviation from that model must stay bounded with
/// non-increasing drift.
pub fn flow_distance_check(
    field: &FlowField,
    rho: &AgmonField,
    lines: &[&FlowLine],
    b: f64,
) -> FlowDistanceReport {
    let t_param = field.t;
    let mut max_dev = 0.0f64;
    let mut max_drift = f64::NEG_INFINITY;
    let mut checked = 0;
    let mut skipped = 0;
    for line in lines {
        if line.end != FlowEnd::Escaped {
            skipped += 1;
            continue;
        }
        // samples outside the core and inside the grid
        let samples: Vec<(f64, f64)> = line
            .polyline
            .iter()
            .filter_map(|pt| {
                let inside_grid = pt
                    .position
                    .iter()
                    .all(|v| v.abs() < rho.grid.half_width - rho.grid.spacing);
                let r = if inside_grid { rho.value_at_point(&pt.position) } else { return None };
                if r > 0.0 {
                    Some((pt.t, r))
                } else {
                    None
                }
            })
            .collect();
        if samples.len() < 8 {
            skipped += 1;
            continue;
        }
        checked += 1;
        let rate = b / t_param;
        let c = samples.iter().map(|(t, r)| r - rate * t).sum::<f64>() / samples.len() as f64;
        let devs: Vec<f64> = samples.iter().map(|(t, r)| (r - rate * t - c).abs()).collect();
        let dev = devs.iter().cloned().fold(0.0, f64::max);
        max_dev = max_dev.max(dev);
        let third = devs.len() / 3;
        if third > 0 {
            let head: f64 = devs[..third].iter().sum::<f64>() / third as f64;
            let tail: f64 = devs[devs.len() - third..].iter().sum::<f64>() / third as f64;
            max_drift = max_drift.max(tail - head);
        }
    }
    let scale = max_dev.max(1e-9);
    FlowDistanceReport {
        lines_checked: checked,
        max_deviation: max_dev,
        max_drift: if max_drift.is_finite() { max_drift } else { 0.0 },
        pass: checked == 0 || max_drift <= 0.25 * scale + 1e-9,
        skipped,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobianGrowthReport {
    pub fitted_c: f64,
    pub fitted_slope: f64,
    pub allowed_slope: f64,
    pub pass: bool,
    pub points: usize,
}

/// Growth of the transported frame volume against the distance field:
/// `|det| <= C exp(k eps rho)` with C fitted; passes when the measured
/// log-volume slope against rho stays at or below `k * eps`.
pub fn jacobian_growth_check(
    line: &FlowLine,
    rho: Option<&AgmonField>,
    k: usize,
    epsilon: f64,
) -> JacobianGrowthReport {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (pt, logv) in line.polyline.iter().zip(&line.log_frame_volume) {
        let r = match rho {
            Some(field) => {
                let inside = pt
                    .position
                    .iter()
                    .all(|v| v.abs() < field.grid.half_width - field.grid.spacing);
                if !inside {
                    continue;
                }
                let r = field.value_at_point(&pt.position);
                // the core transit is absorbed by the fitted constant; the
                // growth bound is a statement about the far field
                if r <= 0.0 {
                    continue;
                }
                r
            }
            None => pt.t, // compact case: bounded growth in time
        };
        pts.push((r, *logv));
    }
    if pts.len() < 4 {
        return JacobianGrowthReport {
            fitted_c: 1.0,
            fitted_slope: 0.0,
            allowed_slope: k as f64 * epsilon,
            pass: true,
            points: pts.len(),
        };
    }
    let allowed = k as f64 * epsilon;
    let fitted_c = pts
        .iter()
        .map(|(r, lv)| lv - allowed * r)
        .fold(f64::NEG_INFINITY, f64::max)
        .exp();
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(r, _)| r).sum();
    let sy: f64 = pts.iter().map(|(_, v)| v).sum();
    let sxx: f64 = pts.iter().map(|(r, _)| r * r).sum();
    let sxy: f64 = pts.iter().map(|(r, v)| r * v).sum();
    let denom = m * sxx - sx * sx;
    let slope = if denom.abs() < 1e-30 { 0.0 } else { (m * sxy - sx * sy) / denom };
    JacobianGrowthReport {
        fitted_c,
        fitted_slope: slope,
        allowed_slope: allowed,
        pass: slope <= allowed + 1e-9 && fitted_c.is_finite(),
        points: pts.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_dsl::parse;
    use crate::geometry::{decay_core, find_critical_points, ManifoldModel};

    fn field(src: &str, dim: usize) -> ScalarField {
        ScalarField::new(parse(src, dim).unwrap(), dim)
    }

    fn cubic_flow(t: f64) -> (FlowField, Vec<CriticalPoint>) {
        let model = BoxModel::new(1, 3.0, 0.01);
        let f = field("x1^3/3 - x1", 1);
        let mm = ManifoldModel::EuclideanBox(model.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        let core = decay_core(&mm, &f, t, 0.9, &crits).unwrap();
        (FlowField::for_box(&f, t, &model, &core), crits)
    }

    #[test]
    fn descent_from_midpoint_is_captured_at_minimum() {
        let (flow, crits) = cubic_flow(10.0);
        let opts = IntegrateOptions::new(&crits, 0.02, 1e5);
        let line = integrate_flow(&flow, &[0.5], &opts);
        match line.end {
            FlowEnd::Captured(ci) => assert!((crits[ci].position[0] - 1.0).abs() < 1e-6),
            ref other => panic!("expected capture, got {other:?}"),
        }
        // monotone decrease of f along the line
        for w in line.polyline.windows(2) {
            assert!(w[1].f_value <= w[0].f_value + 1e-10);
        }
    }

    #[test]
    fn descent_to_the_left_escapes() {
        let (flow, crits) = cubic_flow(10.0);
        let opts = IntegrateOptions::new(&crits, 0.02, 1e5);
        let line = integrate_flow(&flow, &[-1.5], &opts);
        assert_eq!(line.end, FlowEnd::Escaped);
    }

    #[test]
    fn rescale_is_exact_outside_core() {
        let (flow, _) = cubic_flow(10.0);
        for x in [1.8f64, 2.2, -2.0, 2.7] {
            let p = [x];
            let v = flow.velocity(&p);
            let fval = flow.rescale(&p);
            // g(Y,Y) * F^{-1} = F |grad f|^2 = 1/T^2
            let speed2 = v[0] * v[0];
            assert!(
                (speed2 / fval - 1.0 / (flow.t * flow.t)).abs() < 1e-10 / (flow.t * flow.t),
                "x = {x}"
            );
        }
    }

    #[test]
    fn flow_distance_deviation_is_bounded_on_escaping_line() {
        let t = 10.0;
        let b = 0.9;
        let model = BoxModel::new(1, 3.0, 0.01);
        let f = field("x1^3/3 - x1", 1);
        let mm = ManifoldModel::EuclideanBox(model.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        let core = decay_core(&mm, &f, t, b, &crits).unwrap();
        let flow = FlowField::for_box(&f, t, &model, &core);
        let rho = crate::agmon::agmon_distance(&model, &f, t, b, &core);
        let opts = IntegrateOptions::new(&crits, 0.02, 1e6);
        let line = integrate_flow(&flow, &[-1.3], &opts);
        assert_eq!(line.end, FlowEnd::Escaped);
        let report = flow_distance_check(&flow, &rho, &[&line], b);
        assert_eq!(report.lines_checked, 1);
        assert!(report.pass, "report: {report:?}");
    }

    #[test]
    fn jacobian_growth_subexponential_on_escaping_branch() {
        let t = 10.0;
        let b = 0.9;
        let model = BoxModel::new(1, 3.0, 0.01);
        let f = field("x1^3/3 - x1", 1);
        let mm = ManifoldModel::EuclideanBox(model.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        let core = decay_core(&mm, &f, t, b, &crits).unwrap();
        let flow = FlowField::for_box(&f, t, &model, &core);
        let rho = crate::agmon::agmon_distance(&model, &f, t, b, &core);
        let mut opts = IntegrateOptions::new(&crits, 0.02, 1e6);
        opts.frame = vec![vec![1.0]];
        let line = integrate_flow(&flow, &[-1.3], &opts);
        let report = jacobian_growth_check(&line, Some(&rho), 1, 0.1);
        assert!(report.pass, "report: {report:?}");
    }
}

#[cfg(test)]
mod complex_tests {
    use super::*;
    use crate::field_dsl::parse;
    use crate::geometry::{
        decay_core, find_critical_points, BoxModel, ManifoldModel, SurfaceModel,
    };
    use complex::ThomSmaleOptions;

    fn field(src: &str, dim: usize) -> ScalarField {
        ScalarField::new(parse(src, dim).unwrap(), dim)
    }

    /// Explicit 1D phase portrait: the saddle at -1 connects to the
    /// minimum at +1 through a single orbit; the other branch escapes.
    #[test]
    fn cubic_boundary_operator() {
        let t = 12.0;
        let model = BoxModel::new(1, 3.0, 0.01);
        let f = field("x1^3/3 - x1", 1);
        let mm = ManifoldModel::EuclideanBox(model.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        let core = decay_core(&mm, &f, t, 0.9, &crits).unwrap();
        let flow = FlowField::for_box(&f, t, &model, &core);
        let opts = ThomSmaleOptions { shoot_count: 16, r_shoot: 0.1, r_cap: 0.02, t_max: 1e6 };
        let ts = build_thom_smale(&flow, &f, &crits, &opts).unwrap();
        assert_eq!(ts.degree_count(0), 1);
        assert_eq!(ts.degree_count(1), 1);
        assert_eq!(ts.boundary[0][0][0].abs(), 1, "boundary: {:?}", ts.boundary);
        assert_eq!(ts.d_squared_defect(), 0);
        assert_eq!(homology_ranks(&ts), vec![0, 0]);
        // doubling the shoot count changes nothing
        let opts2 = ThomSmaleOptions { shoot_count: 32, ..opts };
        let ts2 = build_thom_smale(&flow, &f, &crits, &opts2).unwrap();
        assert_eq!(ts.boundary, ts2.boundary);
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

    /// Height-like function on the sphere: the two meridian orbits from
    /// the saddle to the minimum cancel, and every composition vanishes.
    #[test]
    fn sphere_saddle_minimum_count_cancels() {
        let t = 10.0;
        let f = field("x1^2 + x3", 3);
        let surface = unit_sphere();
        let mm = ManifoldModel::EmbeddedSurface(surface.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        assert_eq!(crits.len(), 4);
        let flow = FlowField::for_surface(&f, t, &surface, None, 3.0);
        let opts = ThomSmaleOptions { shoot_count: 48, r_shoot: 0.2, r_cap: 0.04, t_max: 1e6 };
        let ts = build_thom_smale(&flow, &f, &crits, &opts).unwrap();
        assert_eq!(ts.degree_count(0), 1);
        assert_eq!(ts.degree_count(1), 1);
        assert_eq!(ts.degree_count(2), 2);
        // m(saddle, min) = 0 by the mirror symmetry y <-> -y
        assert_eq!(ts.boundary[0][0][0], 0, "saddle-min count");
        // each maximum connects to the saddle with a single signed orbit
        for col in 0..2 {
            assert_eq!(ts.boundary[1][0][col].abs(), 1, "boundary: {:?}", ts.boundary[1]);
        }
        assert_eq!(ts.d_squared_defect(), 0);
        assert_eq!(homology_ranks(&ts), vec![1, 0, 1]);
        assert_eq!(ts.dropped_orbits, 0);
    }

    /// Removing one point of the saddle-minimum orbit (the puncture mask)
    /// breaks the cancellation: the boundary no longer squares to zero.
    #[test]
    fn punctured_sphere_breaks_the_complex() {
        let t = 10.0;
        let f = field("x1^2 + x3", 3);
        let surface = unit_sphere();
        let mm = ManifoldModel::EmbeddedSurface(surface.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        let mask = PunctureMask { center: [0.0, 1.0, 0.0], radius: 0.05 };
        let flow = FlowField::for_surface(&f, t, &surface, Some(mask), 3.0);
        let opts = ThomSmaleOptions { shoot_count: 48, r_shoot: 0.2, r_cap: 0.04, t_max: 1e6 };
        let ts = build_thom_smale(&flow, &f, &crits, &opts).unwrap();
        assert_eq!(ts.boundary[0][0][0].abs(), 1, "one orbit must be dropped");
        assert!(ts.dropped_orbits >= 1);
        assert!(ts.d_squared_defect() > 0);
        // d^2 sends each maximum to (+/-) the minimum
        let dd = ts.d_squared(0);
        assert_eq!(dd.len(), 1);
        assert_eq!(dd[0].len(), 2);
        assert!(dd[0].iter().all(|v| v.abs() == 1), "d^2 = {dd:?}");
    }

    /// Trajectory started on the +y meridian just below the saddle runs
    /// into the mask and is declared stuck.
    #[test]
    fn meridian_trajectory_sticks_at_the_mask() {
        let t = 10.0;
        let f = field("x1^2 + x3", 3);
        let surface = unit_sphere();
        let mm = ManifoldModel::EmbeddedSurface(surface.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        let mask = PunctureMask { center: [0.0, 1.0, 0.0], radius: 0.05 };
        let flow = FlowField::for_surface(&f, t, &surface, Some(mask), 3.0);
        let start = [0.0, 0.15, (1.0f64 - 0.15f64 * 0.15).sqrt()];
        let opts = IntegrateOptions::new(&crits, 0.04, 1e6);
        let line = integrate_flow(&flow, &start, &opts);
        assert_eq!(line.end, FlowEnd::Stuck, "end: {:?}", line.end);
    }
}

#[cfg(test)]
mod chain_map_tests {
    use super::*;
    use crate::field_dsl::parse;
    use crate::geometry::{decay_core, find_critical_points, BoxModel, ManifoldModel};
    use crate::spectra::{projected_differentials, spectral_window};
    use crate::witten::{assemble_witten_differential, assemble_witten_laplacian};
    use complex::ThomSmaleOptions;

    fn field(src: &str, dim: usize) -> ScalarField {
        ScalarField::new(parse(src, dim).unwrap(), dim)
    }

    /// Single minimum: the degree-0 entry is a plain weighted evaluation
    /// at the minimum, nonzero.
    #[test]
    fn gaussian_degree_zero_entry_nonzero() {
        let t = 10.0;
        let model = BoxModel::new(1, 6.0, 0.01);
        let f = field("x1^2/2", 1);
        let mm = ManifoldModel::EuclideanBox(model.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        let core = decay_core(&mm, &f, t, 0.9, &crits).unwrap();
        let flow = FlowField::for_box(&f, t, &model, &core);
        let opts = ThomSmaleOptions { shoot_count: 8, r_shoot: 0.1, r_cap: 0.02, t_max: 1e6 };
        let ts = build_thom_smale(&flow, &f, &crits, &opts).unwrap();
        let op0 = assemble_witten_laplacian(&model, &f, t, 0).unwrap();
        let w0 = spectral_window(&op0, 3).unwrap();
        let j = chain_map(&flow, &[w0], &ts, 0.1, 0.02, 1e6, 64).unwrap();
        assert_eq!(j.per_degree[0].nrows(), 1);
        assert!(j.per_degree[0][(0, 0)].abs() > 1e-6, "J = {}", j.per_degree[0][(0, 0)]);
    }

    /// Both degree blocks are nonzero 1x1 matrices and the commutation
    /// defect against the counting boundary is small.
    #[test]
    fn cubic_chain_map_commutes() {
        let t = 15.0;
        let model = BoxModel::new(1, 3.0, 0.005);
        let f = field("x1^3/3 - x1", 1);
        let mm = ManifoldModel::EuclideanBox(model.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        let core = decay_core(&mm, &f, t, 0.9, &crits).unwrap();
        let flow = FlowField::for_box(&f, t, &model, &core);
        let opts = ThomSmaleOptions { shoot_count: 8, r_shoot: 0.05, r_cap: 0.01, t_max: 1e6 };
        let ts = build_thom_smale(&flow, &f, &crits, &opts).unwrap();
        let mut spaces = Vec::new();
        for k in 0..=1 {
            let op = assemble_witten_laplacian(&model, &f, t, k).unwrap();
            spaces.push(spectral_window(&op, 7).unwrap());
        }
        let d0 = assemble_witten_differential(&model, &f, t, 0).unwrap();
        let j = chain_map(&flow, &spaces, &ts, 0.05, 0.01, 1e6, 64).unwrap();
        for (k, m) in j.per_degree.iter().enumerate() {
            assert!(m[(0, 0)].abs() > 1e-12, "degree {k} entry vanishes");
        }
        // invertibility: 1x1 blocks, smallest = largest singular value
        for (k, smin, smax) in j.conditioning() {
            assert!(smin > 1e-3 * smax, "degree {k}: {smin} vs {smax}");
        }
        let projected = projected_differentials(&spaces, &[d0]);
        let defect = commutation_defect(&j, &projected, &ts);
        assert!(defect < 0.05, "commutation defect {defect}");
    }

    /// Index-2 fan integration against a direct grid quadrature: for a
    /// single maximum the unstable manifold is the whole plane, so the fan
    /// integral must reproduce the plain integral of exp(Tf) omega.
    #[test]
    fn fan_integral_matches_grid_quadrature() {
        let t = 12.0;
        let model = BoxModel::new(2, 1.6, 0.05);
        // single maximum at the origin inside the box
        let f = field("-(x1^2 + x2^2)/2 + (x1^4 + x2^4)/12", 2);
        let mm = ManifoldModel::EuclideanBox(model.clone());
        let (crits, _) = find_critical_points(&mm, &f).unwrap();
        assert_eq!(crits.len(), 1);
        assert_eq!(crits[0].index, 2);
        let core = decay_core(&mm, &f, t, 0.9, &crits).unwrap();
        let flow = FlowField::for_box(&f, t, &model, &core);
        let opts = ThomSmaleOptions { shoot_count: 16, r_shoot: 0.1, r_cap: 0.02, t_max: 2e5 };
        let ts = build_thom_smale(&flow, &f, &crits, &opts).unwrap();
        let op2 = assemble_witten_laplacian(&model, &f, t, 2).unwrap();
        let w2 = spectral_window(&op2, 9).unwrap();
        assert_eq!(w2.dim(), 1);
        let grid = model.grid();
        let omega = &w2.pairs[0].eigenvector;
        // direct quadrature of exp(Tf) omega12 over the box
        let vol = model.spacing * model.spacing;
        let mut direct = 0.0;
        for node in 0..grid.node_count() {
            let p = grid.coords(node);
            direct += (t * f.value(&p)).exp() * omega.data[node] * vol;
        }
        let j = chain_map(&flow, &[w2], &ts, 0.1, 0.02, 2e5, 128);
        // degree index: spaces has one entry of degree 2 -> per_degree[0]
        let j = j.unwrap();
        let fan = j.per_degree[0][(0, 0)];
        assert!(
            (fan - direct).abs() < 0.05 * direct.abs().max(1e-12),
            "fan {fan} vs direct {direct}"
        );
    }
}
