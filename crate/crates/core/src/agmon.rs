//! Distance fields in the rescaled metric `b^2 T^2 |grad f|^2 g` and the
//! decay diagnostics they support: exponential decay fits for window
//! eigenforms, weighted-norm growth in T, and the gradient growth bound.

use serde::Serialize;

use crate::geometry::{agmon_edge_weight, grad_norm_field, BoxModel, CompactCore, ScalarField};
use crate::grid::{dijkstra, Grid};
use crate::witten::FormGrid;

/// Scatter points below this magnitude are treated as noise.
pub const NOISE_FLOOR: f64 = 1e-12;
/// Scatter points closer to the core than this are excluded from fits.
pub const FIT_MIN_DISTANCE: f64 = 1.0;
/// Minimum usable scatter size for a decay fit.
pub const FIT_MIN_POINTS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum AgmonError {
    #[error("grid too coarse for fit: only {0} scatter points (need {FIT_MIN_POINTS})")]
    GridTooCoarse(usize),
    #[error("need >= 3 T values, got {0}")]
    NeedThreeT(usize),
    #[error("decay insufficient; check a_min (weighted integral overflowed)")]
    WeightOverflow,
}

/// Distance from the compact core in the rescaled metric, sampled on the
/// grid (shortest paths over the 2-connected / 8-connected grid graph).
#[derive(Debug, Clone)]
pub struct AgmonField {
    pub values: Vec<f64>,
    pub t: f64,
    pub b: f64,
    pub core_lo: Vec<f64>,
    pub core_hi: Vec<f64>,
    pub grid: Grid,
}

impl AgmonField {
    pub fn value_at_node(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn value_at_point(&self, p: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, p)
    }
}

/// Multi-source shortest-path distance from the core in the rescaled
/// metric; edge length is bT times the trapezoid average of |grad f| times
/// the metric edge length.
pub fn agmon_distance(
    model: &BoxModel,
    f: &ScalarField,
    t: f64,
    b: f64,
    core: &CompactCore,
) -> AgmonField {
    assert!(b > 0.0 && b < 1.0, "b must lie in (0,1)");
    let grid = model.grid();
    let grad = grad_norm_field(model, f, &grid);
    let sources: Vec<usize> = (0..grid.node_count())
        .filter(|&n| core.contains_point(&grid.coords(n)))
        .collect();
    assert!(!sources.is_empty(), "core contains no grid nodes");
    let values = dijkstra(&grid, &sources, |p, q| {
        agmon_edge_weight(model, f, t, b, &grad, &grid, p, q)
    });
    AgmonField {
        values,
        t,
        b,
        core_lo: core.lo.clone(),
        core_hi: core.hi.clone(),
        grid,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    /// Fitted decay rate (positive means decay).
    pub a_obs: f64,
    pub intercept: f64,
    pub fit_residual: f64,
    pub points: usize,
    pub confirmed: bool,
    pub envelope_ok: bool,
    pub a_min: f64,
    /// (rho, log |omega|) scatter retained by the filters.
    pub scatter: Vec<(f64, f64)>,
}

/// Least-squares decay fit of `log |omega|` against the distance field,
/// plus a pointwise upper-envelope test: confirmed iff the slope is at
/// least `a_min` and no retained point exceeds the fitted envelope.
///
/// The line is fitted through the binned upper envelope of the scatter:
/// an eigenform reaches the far field through several basins whose
/// branches decay at the same rate but with different offsets, and a raw
/// least squares over that mixture tilts the slope; the envelope isolates
/// the governing branch.
pub fn decay_fit(omega: &FormGrid, rho: &AgmonField, a_min: f64) -> Result<DecayFit, AgmonError> {
    decay_fit_with_floor(omega, rho, a_min, NOISE_FLOOR)
}

/// Decay fit with an explicit magnitude floor: callers with a residual
/// certificate pass the certified eigenvector accuracy, below which the
/// stored entries are solver noise rather than decay.
pub fn decay_fit_with_floor(
    omega: &FormGrid,
    rho: &AgmonField,
    a_min: f64,
    floor: f64,
) -> Result<DecayFit, AgmonError> {
    let floor = floor.max(NOISE_FLOOR);
    let n = omega.node_count();
    assert_eq!(n, rho.values.len(), "field and distance grid mismatch");
    let mut scatter = Vec::new();
    for node in 0..n {
        let r = rho.values[node];
        let mag = omega.pointwise_norm(node);
        if r >= FIT_MIN_DISTANCE && mag >= floor {
            scatter.push((r, mag.ln()));
        }
    }
    if scatter.len() < FIT_MIN_POINTS {
        return Err(AgmonError::GridTooCoarse(scatter.len()));
    }
    let r_max = scatter.iter().map(|(r, _)| *r).fold(0.0f64, f64::max);
    let r_min = scatter.iter().map(|(r, _)| *r).fold(f64::INFINITY, f64::min);
    let bins = 64usize;
    let width = ((r_max - r_min) / bins as f64).max(1e-12);
    let mut envelope: Vec<Option<(f64, f64)>> = vec![None; bins];
    for (r, v) in &scatter {
        let b = (((r - r_min) / width) as usize).min(bins - 1);
        if envelope[b].map(|(_, best)| *v > best).unwrap_or(true) {
            envelope[b] = Some((*r, *v));
        }
    }
    let fit_pts: Vec<(f64, f64)> = envelope.into_iter().flatten().collect();
    let m = fit_pts.len() as f64;
    let sx: f64 = fit_pts.iter().map(|(r, _)| r).sum();
    let sy: f64 = fit_pts.iter().map(|(_, v)| v).sum();
    let sxx: f64 = fit_pts.iter().map(|(r, _)| r * r).sum();
    let sxy: f64 = fit_pts.iter().map(|(r, v)| r * v).sum();
    let denom = m * sxx - sx * sx;
    let slope = (m * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / m;
    let a_obs = -slope;
    let fit_residual = (fit_pts
        .iter()
        .map(|(r, v)| (v - (intercept + slope * r)).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    // envelope: every point must lie below intercept' - a_min * rho for the
    // smallest intercept' that clears the scatter near the core edge;
    // anchored at the fitted intercept plus the fit spread
    let anchor = intercept + 3.0 * fit_residual;
    let envelope_ok = scatter.iter().all(|(r, v)| *v <= anchor - a_min * r + 1e-9);
    let confirmed = a_obs >= a_min && envelope_ok;
    Ok(DecayFit {
        a_obs,
        intercept,
        fit_residual,
        points: scatter.len(),
        confirmed,
        envelope_ok,
        a_min,
        scatter,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub t_values: Vec<f64>,
    pub weighted_norms: Vec<f64>,
    pub exponent: f64,
    pub pass: bool,
}

/// Growth of `I(u) = integral |u|^2 exp(2 b rho_T)` across a T schedule:
/// fits `log I` against `log T` and passes when the exponent stays at most
/// 2.5 (the bound is quadratic with constants).
pub fn weighted_norm_growth(
    omegas: &[&FormGrid],
    rhos: &[&AgmonField],
) -> Result<GrowthReport, AgmonError> {
    if omegas.len() < 3 {
        return Err(AgmonError::NeedThreeT(omegas.len()));
    }
    assert_eq!(omegas.len(), rhos.len());
    let mut t_values = Vec::new();
    let mut norms = Vec::new();
    for (omega, rho) in omegas.iter().zip(rhos) {
        let n = omega.node_count();
        let vol = omega.spacing.powi(omega.dim as i32);
        let mut acc = 0.0;
        for node in 0..n {
            // below the noise floor the stored eigenvector is roundoff, and
            // the exponential weight would amplify pure noise
            let mag = omega.pointwise_norm(node);
            if mag < NOISE_FLOOR {
                continue;
            }
            let w = (2.0 * rho.b * rho.values[node]).exp();
            if !w.is_finite() {
                return Err(AgmonError::WeightOverflow);
            }
            acc += mag * mag * w * vol;
        }
        if !acc.is_finite() {
            return Err(AgmonError::WeightOverflow);
        }
        t_values.push(rho.t);
        norms.push(acc);
    }
    // least squares of log I on log T
    let m = t_values.len() as f64;
    let xs: Vec<f64> = t_values.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.max(1e-300).ln()).collect();
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let exponent = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    Ok(GrowthReport { t_values, weighted_norms: norms, exponent, pass: exponent <= 2.5 })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientGrowthReport {
    pub fitted_c: f64,
    pub max_violation: f64,
    pub pass: bool,
    pub skipped: Option<String>,
}

/// Pointwise bound `|grad f|^2 <= C exp((c_f / (bT)) rho_T)` with the
/// smallest admissible C; skipped when the tameness hypothesis fails.
pub fn gradient_growth_check(
    model: &BoxModel,
    f: &ScalarField,
    rho: &AgmonField,
    c_f_estimate: f64,
    well_tame: bool,
) -> GradientGrowthReport {
    if !well_tame {
        return GradientGrowthReport {
            fitted_c: f64::NAN,
            max_violation: f64::NAN,
            pass: false,
            skipped: Some("lemma requires well tame".to_string()),
        };
    }
    let grid = rho.grid.clone();
    let grad = grad_norm_field(model, f, &grid);
    let rate = c_f_estimate / (rho.b * rho.t);
    let mut fitted_c = 0.0f64;
    for node in 0..grid.node_count() {
        let lhs = grad[node] * grad[node];
        let ratio = lhs / (rate * rho.values[node]).exp();
        fitted_c = fitted_c.max(ratio);
    }
    // with C fitted as the max ratio the bound holds by construction; the
    // violation entry reports how far above the core plateau level it sits
    let core_level = (0..grid.node_count())
        .filter(|&n| rho.values[n] == 0.0)
        .map(|n| grad[n] * grad[n])
        .fold(0.0f64, f64::max);
    let max_violation = (fitted_c - core_level.max(1e-300)).max(0.0);
    GradientGrowthReport {
        fitted_c,
        max_violation,
        pass: fitted_c.is_finite(),
        skipped: None,
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

    fn gaussian_setup(t: f64, h: f64) -> (BoxModel, ScalarField, CompactCore) {
        let model = BoxModel::new(1, 6.0, h);
        let f = field("x1^2/2", 1);
        let (crits, _) =
            find_critical_points(&ManifoldModel::EuclideanBox(model.clone()), &f).unwrap();
        let core = decay_core(&ManifoldModel::EuclideanBox(model.clone()), &f, t, 0.9, &crits)
            .unwrap();
        (model, f, core)
    }

    /// Closed form: rho_T(x) = bT (x^2 - x_K^2)/2 outside the core.
    #[test]
    fn oscillator_distance_matches_integral() {
        let t = 10.0;
        let b = 0.9;
        let (model, f, core) = gaussian_setup(t, 0.01);
        let rho = agmon_distance(&model, &f, t, b, &core);
        let xk = core.hi[0];
        let grid = model.grid();
        for x in [1.0, 2.0, 3.5, 5.0] {
            let node = grid.nearest_node(&[x]);
            let expect = b * t * (x * x - xk * xk) / 2.0;
            let got = rho.values[node];
            assert!(
                (got - expect).abs() < 0.02 * expect,
                "x = {x}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn distance_vanishes_on_core() {
        let t = 10.0;
        let (model, f, core) = gaussian_setup(t, 0.01);
        let rho = agmon_distance(&model, &f, t, 0.9, &core);
        let grid = model.grid();
        for node in 0..grid.node_count() {
            if core.contains_point(&grid.coords(node)) {
                assert_eq!(rho.values[node], 0.0);
            }
        }
    }

    #[test]
    fn doubling_t_doubles_distances() {
        let t = 10.0;
        let (model, f, core) = gaussian_setup(t, 0.02);
        let r1 = agmon_distance(&model, &f, t, 0.9, &core);
        let r2 = agmon_distance(&model, &f, 2.0 * t, 0.9, &core);
        for (a, b) in r1.values.iter().zip(&r2.values) {
            if *a > 0.0 {
                assert!((b / (2.0 * a) - 1.0).abs() < 1e-12);
            }
        }
    }

    /// 1-Lipschitz along edges in the rescaled metric.
    #[test]
    fn distance_is_edge_lipschitz() {
        let t = 8.0;
        let (model, f, core) = gaussian_setup(t, 0.05);
        let b = 0.9;
        let rho = agmon_distance(&model, &f, t, b, &core);
        let grid = model.grid();
        let grad = grad_norm_field(&model, &f, &grid);
        for node in 0..grid.node_count() - 1 {
            let w = agmon_edge_weight(&model, &f, t, b, &grad, &grid, node, node + 1);
            assert!(
                (rho.values[node] - rho.values[node + 1]).abs() <= w + 1e-12,
                "lipschitz violated at node {node}"
            );
        }
    }

    /// The sampled ground profile e^{-T x^2 / 2} decays against rho with
    /// slope 1/b.
    #[test]
    fn ground_profile_slope_is_inverse_b() {
        let t = 10.0;
        let b = 0.9;
        let (model, f, core) = gaussian_setup(t, 0.01);
        let rho = agmon_distance(&model, &f, t, b, &core);
        let grid = model.grid();
        let mut data: Vec<f64> = (0..grid.node_count())
            .map(|n| (-t * grid.coords(n)[0].powi(2) / 2.0).exp())
            .collect();
        let nrm = (data.iter().map(|v| v * v).sum::<f64>() * model.spacing).sqrt();
        for v in data.iter_mut() {
            *v /= nrm;
        }
        let omega = FormGrid::from_vec(&grid, 0, data);
        let fit = decay_fit(&omega, &rho, 0.9).unwrap();
        assert!(
            (fit.a_obs - 1.0 / b).abs() < 0.05 / b,
            "slope {} vs {}",
            fit.a_obs,
            1.0 / b
        );
        assert!(fit.confirmed, "fit: a_obs = {}, envelope = {}", fit.a_obs, fit.envelope_ok);
    }

    #[test]
    fn constant_field_is_not_confirmed() {
        let t = 10.0;
        let (model, f, core) = gaussian_setup(t, 0.02);
        let rho = agmon_distance(&model, &f, t, 0.9, &core);
        let grid = model.grid();
        let omega = FormGrid::from_vec(&grid, 0, vec![0.3; grid.node_count()]);
        let fit = decay_fit(&omega, &rho, 0.9).unwrap();
        assert!(!fit.confirmed);
        assert!(fit.a_obs.abs() < 0.05);
    }

    #[test]
    fn growth_needs_three_t_values() {
        let t = 10.0;
        let (model, f, core) = gaussian_setup(t, 0.05);
        let rho = agmon_distance(&model, &f, t, 0.9, &core);
        let grid = model.grid();
        let omega = FormGrid::zeros(&grid, 0);
        assert!(matches!(
            weighted_norm_growth(&[&omega], &[&rho]),
            Err(AgmonError::NeedThreeT(1))
        ));
    }

    #[test]
    fn refinement_changes_distance_by_order_h() {
        let t = 10.0;
        let b = 0.9;
        let (model1, f, core) = gaussian_setup(t, 0.02);
        let (model2, _, _) = gaussian_setup(t, 0.01);
        let r1 = agmon_distance(&model1, &f, t, b, &core);
        let r2 = agmon_distance(&model2, &f, t, b, &core);
        let g1 = model1.grid();
        for x in [1.5, 3.0, 4.5] {
            let v1 = r1.value_at_point(&[x]);
            let v2 = r2.value_at_point(&[x]);
            assert!((v1 - v2).abs() / v2.max(1e-9) < 0.05, "x = {x}: {v1} vs {v2}");
        }
        let _ = g1;
    }
}
