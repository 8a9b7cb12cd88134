//! Second-order dual numbers. A `Jet` carries a value, a gradient and the
//! upper triangle of a Hessian; arithmetic propagates all three exactly.

use nalgebra::{DMatrix, DVector};

use super::{EvalError, Expr, Span, UnaryFn};

/// Value, gradient and symmetric Hessian of a scalar field at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct JetValue {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Exactly symmetric: built from shared upper-triangular storage.
    pub hessian: DMatrix<f64>,
}

impl JetValue {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.gradient.iter().all(|g| g.is_finite())
            && self.hessian.iter().all(|h| h.is_finite())
    }
}

/// Internal second-order dual. Hessian stored as packed upper triangle
/// (row-major, `i <= j`), which makes symmetry structural.
#[derive(Clone)]
struct Jet {
    n: usize,
    v: f64,
    g: Vec<f64>,
    h: Vec<f64>,
}

fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn tri_idx(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * n - i * (i + 1) / 2 + j
}

impl Jet {
    fn constant(n: usize, v: f64) -> Self {
        Jet { n, v, g: vec![0.0; n], h: vec![0.0; tri_len(n)] }
    }

    fn variable(n: usize, idx: usize, v: f64) -> Self {
        let mut j = Jet::constant(n, v);
        j.g[idx] = 1.0;
        j
    }

    fn add(&self, o: &Jet) -> Jet {
        let mut r = self.clone();
        r.v += o.v;
        for (a, b) in r.g.iter_mut().zip(&o.g) {
            *a += b;
        }
        for (a, b) in r.h.iter_mut().zip(&o.h) {
            *a += b;
        }
        r
    }

    fn sub(&self, o: &Jet) -> Jet {
        let mut r = self.clone();
        r.v -= o.v;
        for (a, b) in r.g.iter_mut().zip(&o.g) {
            *a -= b;
        }
        for (a, b) in r.h.iter_mut().zip(&o.h) {
            *a -= b;
        }
        r
    }

    fn neg(&self) -> Jet {
        let mut r = self.clone();
        r.v = -r.v;
        for a in r.g.iter_mut() {
            *a = -*a;
        }
        for a in r.h.iter_mut() {
            *a = -*a;
        }
        r
    }

    fn mul(&self, o: &Jet) -> Jet {
        let n = self.n;
        let mut r = Jet::constant(n, self.v * o.v);
        for i in 0..n {
            r.g[i] = self.g[i] * o.v + self.v * o.g[i];
        }
        for i in 0..n {
            for j in i..n {
                let t = tri_idx(n, i, j);
                r.h[t] = self.h[t] * o.v
                    + self.v * o.h[t]
                    + self.g[i] * o.g[j]
                    + self.g[j] * o.g[i];
            }
        }
        r
    }

    /// Chain rule for a scalar function `f` applied to this jet:
    /// needs f(v), f'(v), f''(v).
    fn compose(&self, f0: f64, f1: f64, f2: f64) -> Jet {
        let n = self.n;
        let mut r = Jet::constant(n, f0);
        for i in 0..n {
            r.g[i] = f1 * self.g[i];
        }
        for i in 0..n {
            for j in i..n {
                let t = tri_idx(n, i, j);
                r.h[t] = f1 * self.h[t] + f2 * self.g[i] * self.g[j];
            }
        }
        r
    }

    fn recip(&self) -> Jet {
        let v = self.v;
        self.compose(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    fn powi(&self, k: i32) -> Jet {
        match k {
            0 => Jet::constant(self.n, 1.0),
            1 => self.clone(),
            _ => {
                let v = self.v;
                let kf = f64::from(k);
                // v^(k-2) may hit 0^negative; the caller checks domain first.
                let f0 = v.powi(k);
                let f1 = kf * v.powi(k - 1);
                let f2 = kf * (kf - 1.0) * v.powi(k - 2);
                self.compose(f0, f1, f2)
            }
        }
    }
}

fn domain_err(e: &Expr, span: Span, message: &str) -> EvalError {
    EvalError { message: message.to_string(), subexpr: e.to_string(), span }
}

fn eval_rec(e: &Expr, point: &[f64], n: usize) -> Result<Jet, EvalError> {
    Ok(match e {
        Expr::Var(i) => Jet::variable(n, *i, point[*i]),
        Expr::Const(c) => Jet::constant(n, *c),
        Expr::Neg(a) => eval_rec(a, point, n)?.neg(),
        Expr::Add(a, b) => eval_rec(a, point, n)?.add(&eval_rec(b, point, n)?),
        Expr::Sub(a, b) => eval_rec(a, point, n)?.sub(&eval_rec(b, point, n)?),
        Expr::Mul(a, b) => eval_rec(a, point, n)?.mul(&eval_rec(b, point, n)?),
        Expr::Div(a, b, span) => {
            let den = eval_rec(b, point, n)?;
            if den.v == 0.0 {
                return Err(domain_err(e, *span, "division by zero"));
            }
            eval_rec(a, point, n)?.mul(&den.recip())
        }
        Expr::Pow(a, k) => {
            let base = eval_rec(a, point, n)?;
            if *k < 0 && base.v == 0.0 {
                return Err(domain_err(
                    e,
                    Span { start: 0, end: 0 },
                    "division by zero (negative power of zero)",
                ));
            }
            base.powi(*k)
        }
        Expr::Unary(f, a, span) => {
            let inner = eval_rec(a, point, n)?;
            let v = inner.v;
            match f {
                UnaryFn::Exp => {
                    let ev = v.exp();
                    inner.compose(ev, ev, ev)
                }
                UnaryFn::Sin => inner.compose(v.sin(), v.cos(), -v.sin()),
                UnaryFn::Cos => inner.compose(v.cos(), -v.sin(), -v.cos()),
                UnaryFn::Sqrt => {
                    if v < 0.0 {
                        return Err(domain_err(e, *span, "sqrt of negative value"));
                    }
                    if v == 0.0 {
                        return Err(domain_err(e, *span, "sqrt not differentiable at zero"));
                    }
                    let s = v.sqrt();
                    inner.compose(s, 0.5 / s, -0.25 / (s * v))
                }
                UnaryFn::Tanh => {
                    let t = v.tanh();
                    let sech2 = 1.0 - t * t;
                    inner.compose(t, sech2, -2.0 * t * sech2)
                }
            }
        }
    })
}

pub(super) fn eval(e: &Expr, point: &[f64]) -> Result<JetValue, EvalError> {
    let n = point.len();
    let jet = eval_rec(e, point, n)?;
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = jet.h[tri_idx(n, i, j)];
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(JetValue {
        value: jet.v,
        gradient: DVector::from_vec(jet.g),
        hessian: hess,
    })
}
