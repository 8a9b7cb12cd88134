//! Closed-form scalar fields: a small expression language with exact
//! value/gradient/Hessian evaluation through second-order dual numbers.
//!
//! Every scenario function (the Morse function, conformal metric factors,
//! cutoffs) is configuration data written in this language, so the grammar
//! stays deliberately small: arithmetic, integer powers and a fixed catalog
//! of unary functions.

mod jet;
mod parser;

pub use jet::JetValue;
pub use parser::{parse, ParseError};

use std::fmt;

/// Unary functions available in expressions. The catalog is closed so that
/// automatic differentiation stays total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Exp,
    Sin,
    Cos,
    Sqrt,
    Tanh,
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Exp => "exp",
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Sqrt => "sqrt",
            UnaryFn::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => UnaryFn::Exp,
            "sin" => UnaryFn::Sin,
            "cos" => UnaryFn::Cos,
            "sqrt" => UnaryFn::Sqrt,
            "tanh" => UnaryFn::Tanh,
            _ => return None,
        })
    }
}

/// Source span (byte offsets) used in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

/// Expression AST over variables `x1..xn`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Variable index, zero-based (`x1` parses to `Var(0)`).
    Var(usize),
    Const(f64),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>, Span),
    /// Integer exponent only; negative exponents allowed.
    Pow(Box<Expr>, i32),
    Unary(UnaryFn, Box<Expr>, Span),
}

/// Domain failure while evaluating (division by zero, sqrt of a negative).
#[derive(Debug, Clone, thiserror::Error)]
#[error("{message} in `{subexpr}` at {start}..{end}", start = span.start, end = span.end)]
pub struct EvalError {
    pub message: String,
    pub subexpr: String,
    pub span: Span,
}

impl Expr {
    /// Largest variable index used, plus one. Zero for constant expressions.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Var(i) => i + 1,
            Expr::Const(_) => 0,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Unary(_, a, _) => a.arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b, _) => {
                a.arity().max(b.arity())
            }
        }
    }

    /// Evaluate value only.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        Ok(self.eval_jet(point)?.value)
    }

    /// Evaluate value, gradient and Hessian at `point` by forward-mode AD
    /// with second-order duals. The Hessian is exactly symmetric because
    /// only the upper triangle is propagated.
    pub fn eval_jet(&self, point: &[f64]) -> Result<JetValue, EvalError> {
        assert!(
            self.arity() <= point.len(),
            "point dimension {} below expression arity {}",
            point.len(),
            self.arity()
        );
        let jet = jet::eval(self, point)?;
        Ok(jet)
    }

    /// Substitute `replacements[i]` for variable `x(i+1)`. Used to pull a
    /// field back through a coordinate map (e.g. a stereographic chart).
    pub fn substitute(&self, replacements: &[Expr]) -> Expr {
        match self {
            Expr::Var(i) => replacements
                .get(*i)
                .cloned()
                .unwrap_or_else(|| panic!("no replacement for variable x{}", i + 1)),
            Expr::Const(c) => Expr::Const(*c),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(replacements))),
            Expr::Add(a, b) => Expr::Add(
                Box::new(a.substitute(replacements)),
                Box::new(b.substitute(replacements)),
            ),
            Expr::Sub(a, b) => Expr::Sub(
                Box::new(a.substitute(replacements)),
                Box::new(b.substitute(replacements)),
            ),
            Expr::Mul(a, b) => Expr::Mul(
                Box::new(a.substitute(replacements)),
                Box::new(b.substitute(replacements)),
            ),
            Expr::Div(a, b, s) => Expr::Div(
                Box::new(a.substitute(replacements)),
                Box::new(b.substitute(replacements)),
                *s,
            ),
            Expr::Pow(a, k) => Expr::Pow(Box::new(a.substitute(replacements)), *k),
            Expr::Unary(f, a, s) => Expr::Unary(*f, Box::new(a.substitute(replacements)), *s),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Var(..) | Expr::Const(..) | Expr::Unary(..) => 5,
        }
    }
}

fn fmt_child(f: &mut fmt::Formatter<'_>, child: &Expr, parent_prec: u8) -> fmt::Result {
    if child.precedence() < parent_prec {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                fmt_child(f, a, 4)
            }
            Expr::Add(a, b) => {
                fmt_child(f, a, 1)?;
                write!(f, " + ")?;
                fmt_child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                fmt_child(f, a, 1)?;
                write!(f, " - ")?;
                fmt_child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                fmt_child(f, a, 2)?;
                write!(f, "*")?;
                fmt_child(f, b, 3)
            }
            Expr::Div(a, b, _) => {
                fmt_child(f, a, 2)?;
                write!(f, "/")?;
                fmt_child(f, b, 3)
            }
            Expr::Pow(a, k) => {
                fmt_child(f, a, 5)?;
                if *k < 0 {
                    write!(f, "^({k})")
                } else {
                    write!(f, "^{k}")
                }
            }
            Expr::Unary(func, a, _) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str, dim: usize) -> Expr {
        parse(src, dim).expect("parse failure")
    }

    #[test]
    fn parses_cubic() {
        let e = p("x1^3/3 - x1", 1);
        assert_eq!(e.arity(), 1);
        assert!((e.eval(&[2.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn parses_radius_squared() {
        let e = p("x1^2 + x2^2", 2);
        assert_eq!(e.eval(&[1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn rejects_out_of_range_variable() {
        let err = parse("x1^2 + x3", 2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("x3"), "unexpected message: {msg}");
    }

    #[test]
    fn cubic_jet_by_hand() {
        let e = p("x1^3/3 - x1", 1);
        let j = e.eval_jet(&[2.0]).unwrap();
        assert!((j.value - 2.0 / 3.0).abs() < 1e-14);
        assert!((j.gradient[0] - 3.0).abs() < 1e-14);
        assert!((j.hessian[(0, 0)] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn paraboloid_jet_by_hand() {
        let e = p("x1^2 + x2^2", 2);
        let j = e.eval_jet(&[1.0, 1.0]).unwrap();
        assert_eq!(j.value, 2.0);
        assert_eq!(j.gradient.as_slice(), &[2.0, 2.0]);
        assert_eq!(j.hessian[(0, 0)], 2.0);
        assert_eq!(j.hessian[(0, 1)], 0.0);
        assert_eq!(j.hessian[(1, 1)], 2.0);
    }

    #[test]
    fn division_by_zero_reports_subexpression() {
        let e = p("1/(x1 - 1)", 1);
        let err = e.eval(&[1.0]).unwrap_err();
        assert!(err.message.contains("division by zero"));
    }

    #[test]
    fn sqrt_of_negative_reports_subexpression() {
        let e = p("sqrt(x1)", 1);
        let err = e.eval(&[-1.0]).unwrap_err();
        assert!(err.message.contains("sqrt"));
    }

    /// Central finite differences as an independent derivative oracle.
    fn fd_check(e: &Expr, x: &[f64]) {
        let n = x.len();
        let h = 1e-4;
        let j = e.eval_jet(x).unwrap();
        let f = |p: &[f64]| e.eval(p).unwrap();
        for i in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let g = (f(&xp) - f(&xm)) / (2.0 * h);
            let scale = j.gradient[i].abs().max(1.0);
            assert!(
                (g - j.gradient[i]).abs() / scale < 1e-6,
                "gradient mismatch at {i}: fd {g} vs ad {}",
                j.gradient[i]
            );
            for k in 0..n {
                let mut xpp = x.to_vec();
                let mut xpm = x.to_vec();
                let mut xmp = x.to_vec();
                let mut xmm = x.to_vec();
                xpp[i] += h;
                xpp[k] += h;
                xpm[i] += h;
                xpm[k] -= h;
                xmp[i] -= h;
                xmp[k] += h;
                xmm[i] -= h;
                xmm[k] -= h;
                let hess = (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * h * h);
                let scale = j.hessian[(i, k)].abs().max(1.0);
                assert!(
                    (hess - j.hessian[(i, k)]).abs() / scale < 1e-5,
                    "hessian mismatch at ({i},{k}): fd {hess} vs ad {}",
                    j.hessian[(i, k)]
                );
            }
        }
    }

    #[test]
    fn ad_matches_finite_differences_on_mixed_expression() {
        let e = p("exp(-x1^2/2)*sin(x2) + tanh(x1*x2) + sqrt(x1^2 + x2^2 + 1)", 2);
        let pts = [
            [0.3, -0.7],
            [1.1, 0.4],
            [-0.5, 0.9],
            [2.0, -1.5],
            [0.01, 0.02],
            [-1.2, -0.3],
            [0.7, 1.9],
            [1.5, 1.5],
            [-2.1, 0.6],
            [0.9, -0.9],
        ];
        for x in pts {
            fd_check(&e, &x);
        }
    }

    #[test]
    fn pretty_print_round_trip_is_structural_identity() {
        let sources = [
            ("x1^3/3 - x1", 1),
            ("x1^2 + x2^2", 2),
            ("-x1^2", 1),
            ("exp(-(x1^2 + x2^2)/2)", 2),
            ("x1*x2 - 2/(1 + x1^2)", 2),
            ("(x1 + x2)^2/(1 - x1*x2)", 2),
            ("tanh(x1 - 4)*sqrt(x1^2 + 1)", 1),
        ];
        for (src, dim) in sources {
            let a = p(src, dim);
            let b = parse(&a.to_string(), dim)
                .unwrap_or_else(|e| panic!("reparse of `{a}` failed: {e}"));
            assert_eq!(a, b, "round trip changed structure for `{src}`");
        }
    }

    #[test]
    fn substitute_composes_fields() {
        // f(u, v) = u^2 + v with u = x^2, v = 3x.
        let f = p("x1^2 + x2", 2);
        let u = p("x1^2", 1);
        let v = p("3*x1", 1);
        let g = f.substitute(&[u, v]);
        // g(x) = x^4 + 3x, g(2) = 22.
        assert!((g.eval(&[2.0]).unwrap() - 22.0).abs() < 1e-14);
    }
}
