//! Symbolic differentiation with light constant folding.
//!
//! Derivatives stay in the same [`Expr`] language, so a Lie derivative
//! `∂h/∂x · f(x)` is an ordinary expression that the grid scanner can
//! evaluate directly. Piecewise nodes differentiate branch-wise with the
//! guard unchanged; there is no distributional term at the guard, which is
//! why gradient-based estimators keep an exclusion band around guard zero
//! sets. `abs` turns into a sign-selected piecewise, `min`/`max` into the
//! corresponding branch selection.

use super::{BinaryOp, CmpOp, Expr, Guard, MinMaxOp, UnaryOp};

/// Partial derivative of `e` with respect to the variable at `var_index`.
///
/// Total on valid expressions; the result is folded with
/// [`fold_constants`] to keep residual trees small.
pub fn differentiate(e: &Expr, var_index: usize) -> Expr {
    fold_constants(&d(e, var_index))
}

fn d(e: &Expr, v: usize) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var { index, .. } => Expr::Const(if *index == v { 1.0 } else { 0.0 }),
        Expr::Unary(op, child) => {
            let du = d(child, v);
            let u = (**child).clone();
            match op {
                UnaryOp::Neg => neg(du),
                UnaryOp::Sin => mul(Expr::Unary(UnaryOp::Cos, bx(u)), du),
                UnaryOp::Cos => neg(mul(Expr::Unary(UnaryOp::Sin, bx(u)), du)),
                UnaryOp::Tan => {
                    // du / cos(u)^2
                    let c = Expr::Unary(UnaryOp::Cos, bx(u));
                    div(du, pow(c, Expr::Const(2.0)))
                }
                UnaryOp::Exp => mul(Expr::Unary(UnaryOp::Exp, bx(u)), du),
                UnaryOp::Log => div(du, u),
                UnaryOp::Sqrt => div(du, mul(Expr::Const(2.0), Expr::Unary(UnaryOp::Sqrt, bx(u)))),
                UnaryOp::Abs => {
                    // sign-based away from zero
                    let guard = Guard {
                        op: CmpOp::Ge,
                        lhs: u,
                        rhs: Expr::Const(0.0),
                    };
                    Expr::Piecewise {
                        guard: Box::new(guard),
                        then_branch: bx(du.clone()),
                        else_branch: bx(neg(du)),
                    }
                }
            }
        }
        Expr::Binary(op, lhs, rhs) => {
            let da = d(lhs, v);
            let db = d(rhs, v);
            let a = (**lhs).clone();
            let b = (**rhs).clone();
            match op {
                BinaryOp::Add => add(da, db),
                BinaryOp::Sub => sub(da, db),
                BinaryOp::Mul => add(mul(da, b), mul(a, db)),
                BinaryOp::Div => {
                    // (a'b - ab') / b^2
                    div(
                        sub(mul(da, b.clone()), mul(a, db)),
                        pow(b, Expr::Const(2.0)),
                    )
                }
                BinaryOp::Pow => match (&a, &b) {
                    (_, Expr::Const(c)) => {
                        // c * a^(c-1) * a'
                        mul(mul(Expr::Const(*c), pow(a.clone(), Expr::Const(c - 1.0))), da)
                    }
                    (Expr::Const(_), _) => {
                        // a^b * ln(a) * b'
                        mul(
                            mul(pow(a.clone(), b), Expr::Unary(UnaryOp::Log, bx(a))),
                            db,
                        )
                    }
                    _ => {
                        // a^b * (b' ln a + b a'/a)
                        let term = add(
                            mul(db, Expr::Unary(UnaryOp::Log, bx(a.clone()))),
                            div(mul(b.clone(), da), a.clone()),
                        );
                        mul(pow(a, b), term)
                    }
                },
            }
        }
        Expr::Piecewise {
            guard,
            then_branch,
            else_branch,
        } => Expr::Piecewise {
            guard: guard.clone(),
            then_branch: bx(d(then_branch, v)),
            else_branch: bx(d(else_branch, v)),
        },
        Expr::MinMax(op, lhs, rhs) => {
            let cmp = match op {
                MinMaxOp::Min => CmpOp::Le,
                MinMaxOp::Max => CmpOp::Ge,
            };
            Expr::Piecewise {
                guard: Box::new(Guard {
                    op: cmp,
                    lhs: (**lhs).clone(),
                    rhs: (**rhs).clone(),
                }),
                then_branch: bx(d(lhs, v)),
                else_branch: bx(d(rhs, v)),
            }
        }
    }
}

/// Bottom-up constant folding: collapses constant subtrees and the usual
/// algebraic identities (`x+0`, `x*1`, `x*0`, `x^1`, `x^0`, double negation,
/// statically decidable guards).
pub fn fold_constants(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var { .. } => e.clone(),
        Expr::Unary(op, child) => {
            let c = fold_constants(child);
            if let Expr::Const(v) = c {
                let folded = match op {
                    UnaryOp::Neg => Some(-v),
                    UnaryOp::Sin => Some(v.sin()),
                    UnaryOp::Cos => Some(v.cos()),
                    UnaryOp::Tan => Some(v.tan()),
                    UnaryOp::Exp => Some(v.exp()),
                    UnaryOp::Log => (v > 0.0).then(|| v.ln()),
                    UnaryOp::Sqrt => (v >= 0.0).then(|| v.sqrt()),
                    UnaryOp::Abs => Some(v.abs()),
                };
                if let Some(fv) = folded {
                    if fv.is_finite() {
                        return Expr::Const(fv);
                    }
                }
            }
            if *op == UnaryOp::Neg {
                if let Expr::Unary(UnaryOp::Neg, inner) = &c {
                    return (**inner).clone();
                }
            }
            Expr::Unary(*op, bx(c))
        }
        Expr::Binary(op, lhs, rhs) => {
            let a = fold_constants(lhs);
            let b = fold_constants(rhs);
            if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
                let folded = match op {
                    BinaryOp::Add => Some(x + y),
                    BinaryOp::Sub => Some(x - y),
                    BinaryOp::Mul => Some(x * y),
                    BinaryOp::Div => (*y != 0.0).then(|| x / y),
                    BinaryOp::Pow => Some(x.powf(*y)),
                };
                if let Some(fv) = folded {
                    if fv.is_finite() {
                        return Expr::Const(fv);
                    }
                }
            }
            match op {
                BinaryOp::Add => {
                    if is_zero(&a) {
                        return b;
                    }
                    if is_zero(&b) {
                        return a;
                    }
                }
                BinaryOp::Sub => {
                    if is_zero(&b) {
                        return a;
                    }
                    if is_zero(&a) {
                        return fold_constants(&neg(b));
                    }
                }
                BinaryOp::Mul => {
                    if is_zero(&a) || is_zero(&b) {
                        return Expr::Const(0.0);
                    }
                    if is_one(&a) {
                        return b;
                    }
                    if is_one(&b) {
                        return a;
                    }
                }
                BinaryOp::Div => {
                    if is_zero(&a) {
                        return Expr::Const(0.0);
                    }
                    if is_one(&b) {
                        return a;
                    }
                }
                BinaryOp::Pow => {
                    if is_one(&b) {
                        return a;
                    }
                    if is_zero(&b) {
                        return Expr::Const(1.0);
                    }
                }
            }
            Expr::Binary(*op, bx(a), bx(b))
        }
        Expr::Piecewise {
            guard,
            then_branch,
            else_branch,
        } => {
            let g = Guard {
                op: guard.op,
                lhs: fold_constants(&guard.lhs),
                rhs: fold_constants(&guard.rhs),
            };
            let t = fold_constants(then_branch);
            let f = fold_constants(else_branch);
            if let (Expr::Const(l), Expr::Const(r)) = (&g.lhs, &g.rhs) {
                let taken = match g.op {
                    CmpOp::Lt => l < r,
                    CmpOp::Le => l <= r,
                    CmpOp::Gt => l > r,
                    CmpOp::Ge => l >= r,
                };
                return if taken { t } else { f };
            }
            if t == f {
                return t;
            }
            Expr::Piecewise {
                guard: Box::new(g),
                then_branch: bx(t),
                else_branch: bx(f),
            }
        }
        Expr::MinMax(op, lhs, rhs) => {
            let a = fold_constants(lhs);
            let b = fold_constants(rhs);
            if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
                return Expr::Const(match op {
                    MinMaxOp::Min => x.min(*y),
                    MinMaxOp::Max => x.max(*y),
                });
            }
            Expr::MinMax(*op, bx(a), bx(b))
        }
    }
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 0.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 1.0)
}

fn bx(e: Expr) -> Box<Expr> {
    Box::new(e)
}

fn neg(e: Expr) -> Expr {
    Expr::Unary(UnaryOp::Neg, bx(e))
}

fn add(a: Expr, b: Expr) -> Expr {
    Expr::Binary(BinaryOp::Add, bx(a), bx(b))
}

fn sub(a: Expr, b: Expr) -> Expr {
    Expr::Binary(BinaryOp::Sub, bx(a), bx(b))
}

fn mul(a: Expr, b: Expr) -> Expr {
    Expr::Binary(BinaryOp::Mul, bx(a), bx(b))
}

fn div(a: Expr, b: Expr) -> Expr {
    Expr::Binary(BinaryOp::Div, bx(a), bx(b))
}

fn pow(a: Expr, b: Expr) -> Expr {
    Expr::Binary(BinaryOp::Pow, bx(a), bx(b))
}
