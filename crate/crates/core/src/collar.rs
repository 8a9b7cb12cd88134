//! Collar-extended scalar fields: a closed-form inner function modified
//! near declared boundary faces so that it escapes to infinity along an
//! attached cylindrical end, either capping (quadratic turnaround, keeping
//! the boundary critical points) or continuing linearly (no new critical
//! points). The cutoff is an exact smooth step (identically 0/1 outside
//! the blend), so the designated critical points sit exactly on the
//! boundary faces.

use crate::field_dsl::Expr;

/// One-variable second-order jet with exact arithmetic rules.
#[derive(Debug, Clone, Copy)]
pub struct Scalar2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Scalar2 {
    pub fn constant(v: f64) -> Self {
        Scalar2 { v, d1: 0.0, d2: 0.0 }
    }

    pub fn var(v: f64) -> Self {
        Scalar2 { v, d1: 1.0, d2: 0.0 }
    }

    pub fn add(self, o: Scalar2) -> Self {
        Scalar2 { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }

    pub fn sub(self, o: Scalar2) -> Self {
        Scalar2 { v: self.v - o.v, d1: self.d1 - o.d1, d2: self.d2 - o.d2 }
    }

    pub fn mul(self, o: Scalar2) -> Self {
        Scalar2 {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }

    pub fn scale(self, c: f64) -> Self {
        Scalar2 { v: c * self.v, d1: c * self.d1, d2: c * self.d2 }
    }

    /// Chain rule through g with g(v), g'(v), g''(v) supplied.
    pub fn compose(self, g0: f64, g1: f64, g2: f64) -> Self {
        Scalar2 {
            v: g0,
            d1: g1 * self.d1,
            d2: g1 * self.d2 + g2 * self.d1 * self.d1,
        }
    }
}

/// Smooth step: exactly 0 for t <= 0, exactly 1 for t >= 1, strictly
/// increasing in between (the classical exp(-1/t) partition).
pub fn smooth_step(t: Scalar2) -> Scalar2 {
    if t.v <= 0.0 {
        return Scalar2::constant(0.0);
    }
    if t.v >= 1.0 {
        return Scalar2::constant(1.0);
    }
    let tv = t.v;
    // a = exp(-1/t), b = exp(-1/(1-t)); eta = a / (a + b)
    let a = (-1.0 / tv).exp();
    let b = (-1.0 / (1.0 - tv)).exp();
    // derivatives of a and b in t
    let a1 = a / (tv * tv);
    let a2 = a * (1.0 / tv.powi(4) - 2.0 / tv.powi(3));
    let b1 = -b / ((1.0 - tv) * (1.0 - tv));
    let b2 = b * (1.0 / (1.0 - tv).powi(4) - 2.0 / (1.0 - tv).powi(3));
    let s = a + b;
    let s1 = a1 + b1;
    let s2 = a2 + b2;
    // eta = a/s
    let e0 = a / s;
    let e1 = (a1 * s - a * s1) / (s * s);
    let e2 = (a2 * s - a * s2) / (s * s) - 2.0 * s1 * (a1 * s - a * s1) / (s * s * s);
    t.compose(e0, e1, e2)
}

/// How a collar end escapes to infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscapeKind {
    /// Slope-opposing quadratic: creates a critical point exactly on the
    /// boundary face and turns the function around.
    Cap,
    /// Slope-continuing linear at half the boundary slope: no critical
    /// points, the function keeps its trend.
    Linear,
}

/// One end of the collar structure along the chosen axis.
#[derive(Debug, Clone)]
pub struct CollarEnd {
    /// Axis coordinate of the boundary face.
    pub at: f64,
    /// +1.0 if outward means increasing coordinate, -1.0 otherwise.
    pub outward: f64,
    pub escape: EscapeKind,
    /// Width of the blend region just inside the boundary.
    pub blend_width: f64,
}

/// Piecewise profile along one axis: the inner closed form between the two
/// ends, escape extensions beyond them.
#[derive(Debug, Clone)]
pub struct CollarProfile {
    /// Univariate expression in `x1` for the inner stretch.
    pub inner: Expr,
    pub ends: Vec<CollarEnd>,
}

impl CollarProfile {
    fn inner_jet(&self, w: f64) -> Scalar2 {
        let j = self.inner.eval_jet(&[w]).expect("collar inner profile evaluation");
        Scalar2 { v: j.value, d1: j.gradient[0], d2: j.hessian[(0, 0)] }
    }

    /// Boundary slope df/d(outward) at an end.
    pub fn boundary_slope(&self, end: &CollarEnd) -> f64 {
        self.inner_jet(end.at).d1 * end.outward
    }

    /// Value/first/second derivative of the extended profile at `w`.
    pub fn jet(&self, w: f64) -> Scalar2 {
        // find the governing end, if any
        for end in &self.ends {
            let r_tilde = 1.0 + (w - end.at) * end.outward; // 1 at the face
            if r_tilde > 1.0 - end.blend_width {
                return self.end_jet(end, w, r_tilde);
            }
        }
        self.inner_jet(w)
    }

    fn end_jet(&self, end: &CollarEnd, w: f64, r_tilde: f64) -> Scalar2 {
        let s = self.boundary_slope(end);
        let f_at = self.inner_jet(end.at).v;
        // jets with respect to r_tilde, then rescale to w (d r_tilde/dw = outward)
        let r = Scalar2::var(r_tilde);
        let q = match end.escape {
            // slope-opposing cap: the only escape with a boundary critical
            // point and no spurious zeros of the blended derivative
            EscapeKind::Cap => r.sub(Scalar2::constant(1.0)).mul(r.sub(Scalar2::constant(1.0))).scale(-1.0),
            EscapeKind::Linear => r.sub(Scalar2::constant(1.0)).scale(0.5),
        };
        let blended = if r_tilde >= 1.0 {
            q
        } else {
            // theta(r) = (f(w(r)) - f(at)) / s, exact closed form
            let inner = self.inner_jet(w);
            // convert d/dw jets to d/dr jets (linear reparametrization)
            let theta = Scalar2 {
                v: (inner.v - f_at) / s,
                d1: inner.d1 * end.outward / s,
                d2: inner.d2 / s,
            };
            let t = r
                .sub(Scalar2::constant(1.0 - end.blend_width))
                .scale(1.0 / end.blend_width);
            let eta = smooth_step(t);
            let one_minus = Scalar2::constant(1.0).sub(eta);
            one_minus.mul(theta).add(eta.mul(q))
        };
        let g_r = Scalar2::constant(f_at).add(blended.scale(s));
        // back to w-derivatives
        Scalar2 { v: g_r.v, d1: g_r.d1 * end.outward, d2: g_r.d2 }
    }
}

/// Scalar field of the form `base(p) + profile(p[axis])` where the profile
/// carries the collar extension.
#[derive(Debug, Clone)]
pub struct CollarField {
    /// Multivariate closed-form part, untouched by the extension. `None`
    /// means zero.
    pub base: Option<Expr>,
    pub axis: usize,
    pub profile: CollarProfile,
}

impl CollarField {
    pub fn describe(&self) -> String {
        let base = self
            .base
            .as_ref()
            .map(|e| format!("{e} + "))
            .unwrap_or_default();
        format!("{base}collar[{}]({})", self.axis, self.profile.inner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_dsl::parse;

    #[test]
    fn smooth_step_endpoints_and_monotone() {
        assert_eq!(smooth_step(Scalar2::var(-0.1)).v, 0.0);
        assert_eq!(smooth_step(Scalar2::var(1.2)).v, 1.0);
        let mut prev = 0.0;
        for k in 1..40 {
            let t = k as f64 / 40.0;
            let e = smooth_step(Scalar2::var(t));
            assert!(e.v > prev, "not monotone at t = {t}");
            assert!(e.d1 >= 0.0);
            prev = e.v;
        }
        // derivative against finite differences
        let h = 1e-6;
        for t in [0.2, 0.5, 0.8] {
            let e = smooth_step(Scalar2::var(t));
            let fd =
                (smooth_step(Scalar2::var(t + h)).v - smooth_step(Scalar2::var(t - h)).v) / (2.0 * h);
            assert!((e.d1 - fd).abs() < 1e-6 * e.d1.abs().max(1.0), "t={t}: {} vs {fd}", e.d1);
            let fd2 = (smooth_step(Scalar2::var(t + h)).v - 2.0 * e.v
                + smooth_step(Scalar2::var(t - h)).v)
                / (h * h);
            assert!((e.d2 - fd2).abs() < 1e-3 * e.d2.abs().max(1.0));
        }
    }

    fn interval_profile(escapes: [EscapeKind; 2]) -> CollarProfile {
        CollarProfile {
            inner: parse("-(x1 - 1/2)^2", 1).unwrap(),
            ends: vec![
                CollarEnd { at: 0.0, outward: -1.0, escape: escapes[0], blend_width: 0.25 },
                CollarEnd { at: 1.0, outward: 1.0, escape: escapes[1], blend_width: 0.25 },
            ],
        }
    }

    #[test]
    fn capped_interval_has_boundary_critical_points_only() {
        let p = interval_profile([EscapeKind::Cap, EscapeKind::Cap]);
        // derivative vanishes exactly at 0, 1/2, 1 and nowhere else
        let mut sign_changes = Vec::new();
        let mut prev = p.jet(-1.0).d1;
        let mut w = -1.0;
        while w < 2.0 {
            w += 1e-3;
            let d = p.jet(w).d1;
            if prev != 0.0 && d != 0.0 && prev.signum() != d.signum() {
                sign_changes.push(w);
            }
            prev = d;
        }
        assert_eq!(sign_changes.len(), 3, "sign changes at {sign_changes:?}");
        for (got, want) in sign_changes.iter().zip([0.0, 0.5, 1.0]) {
            assert!((got - want).abs() < 2e-3, "{got} vs {want}");
        }
        // boundary points are exact critical points
        assert!(p.jet(0.0).d1.abs() < 1e-14);
        assert!(p.jet(1.0).d1.abs() < 1e-14);
        // caps turn the function upward (minima), escaping to +infinity
        assert!(p.jet(0.0).d2 > 0.0);
        // exact escape value: f(1) + s * (-(r-1)^2) with s = -1, r = 3
        assert!((p.jet(3.0).v - 3.75).abs() < 1e-14);
    }

    #[test]
    fn linear_escape_keeps_monotonicity() {
        let p = CollarProfile {
            inner: parse("x1/4", 1).unwrap(),
            ends: vec![
                CollarEnd { at: 0.0, outward: -1.0, escape: EscapeKind::Linear, blend_width: 0.3 },
                CollarEnd { at: 1.0, outward: 1.0, escape: EscapeKind::Linear, blend_width: 0.3 },
            ],
        };
        let mut w = -3.0;
        while w < 4.0 {
            let d = p.jet(w).d1;
            assert!(d > 0.0, "derivative {d} at {w}");
            w += 1e-3;
        }
        assert!(p.jet(-5.0).v < -0.4);
        assert!(p.jet(6.0).v > 0.7);
    }

    #[test]
    fn profile_matches_inner_away_from_ends() {
        let p = interval_profile([EscapeKind::Cap, EscapeKind::Linear]);
        for w in [0.3, 0.5, 0.7] {
            let j = p.jet(w);
            let direct = -(w - 0.5) * (w - 0.5);
            assert!((j.v - direct).abs() < 1e-15);
        }
    }
}
