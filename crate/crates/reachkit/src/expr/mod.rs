//! Scalar math expressions over named state variables.
//!
//! Plants, controllers and set-defining functions enter the toolkit as text
//! in a small expression language (see [`parse`] for the grammar). An
//! expression is held as an immutable [`Expr`] tree that supports IEEE-double
//! [evaluation](Expr::eval) and [symbolic differentiation](differentiate).
//! Symbolic derivatives are what make the certification residual a plain
//! expression again, so the same evaluator drives both simulation and the
//! condition scan.
//!
//! Comparisons are not first-class values: a [`Guard`] may appear only as the
//! condition of an `if(...)` node, which keeps every expression real-valued by
//! construction.
//!
//! ```
//! use reachkit::expr::{parse, Env, VarSet};
//!
//! let vars = VarSet::new(["theta", "theta_dot"]);
//! let k = parse("-2*theta - 2*sin(theta) - 2*theta_dot", &vars)?;
//! let env = Env::new(&vars, &[-0.4, 0.3]);
//! assert!((k.eval(&env)? - 0.9788).abs() < 1e-3);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

mod diff;
mod parser;

pub use diff::{differentiate, fold_constants};
pub use parser::{parse, ParseError};

use std::fmt;
use thiserror::Error;

/// Ordered set of declared variable names. Expressions are parsed against a
/// `VarSet` and evaluated against value slices in the same order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSet {
    names: Vec<String>,
}

impl VarSet {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        VarSet {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Total assignment of the declared variables, borrowed for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    vars: &'a VarSet,
    values: &'a [f64],
}

impl<'a> Env<'a> {
    /// Panics if `values` does not cover the variable set exactly; an `Env`
    /// is total by definition.
    pub fn new(vars: &'a VarSet, values: &'a [f64]) -> Self {
        assert_eq!(
            vars.len(),
            values.len(),
            "environment must assign every declared variable"
        );
        Env { vars, values }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.vars.index_of(name).map(|i| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinMaxOp {
    Min,
    Max,
}

/// Comparison usable only as a piecewise condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub op: CmpOp,
    pub lhs: Expr,
    pub rhs: Expr,
}

impl Guard {
    /// `lhs - rhs`, the signed value whose zero set is the branch boundary.
    pub fn boundary_value(&self, values: &[f64]) -> Result<f64, EvalError> {
        Ok(self.lhs.eval_values(values)? - self.rhs.eval_values(values)?)
    }

    pub fn test(&self, values: &[f64]) -> Result<bool, EvalError> {
        let l = self.lhs.eval_values(values)?;
        let r = self.rhs.eval_values(values)?;
        Ok(match self.op {
            CmpOp::Lt => l < r,
            CmpOp::Le => l <= r,
            CmpOp::Gt => l > r,
            CmpOp::Ge => l >= r,
        })
    }
}

/// Expression tree. Variables carry their index into the enclosing
/// [`VarSet`], so evaluation is a slice lookup.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var { name: String, index: usize },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Piecewise {
        guard: Box<Guard>,
        then_branch: Box<Expr>,
        else_branch: Box<Expr>,
    },
    MinMax(MinMaxOp, Box<Expr>, Box<Expr>),
}

/// Evaluation failure at a specific node; the offending subexpression is
/// rendered into the message.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("log of non-positive value {value} in `{node}`")]
    LogDomain { value: f64, node: String },
    #[error("sqrt of negative value {value} in `{node}`")]
    SqrtDomain { value: f64, node: String },
    #[error("division by zero in `{node}`")]
    DivisionByZero { node: String },
    #[error("non-finite result in `{node}`")]
    NonFinite { node: String },
}

impl Expr {
    pub fn eval(&self, env: &Env) -> Result<f64, EvalError> {
        self.eval_values(env.values)
    }

    /// Evaluate against raw values ordered like the declaring [`VarSet`].
    pub fn eval_values(&self, values: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var { index, .. } => Ok(values[*index]),
            Expr::Unary(op, child) => {
                let v = child.eval_values(values)?;
                let out = match op {
                    UnaryOp::Neg => -v,
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Tan => v.tan(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Log => {
                        if v <= 0.0 {
                            return Err(EvalError::LogDomain {
                                value: v,
                                node: self.to_string(),
                            });
                        }
                        v.ln()
                    }
                    UnaryOp::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::SqrtDomain {
                                value: v,
                                node: self.to_string(),
                            });
                        }
                        v.sqrt()
                    }
                    UnaryOp::Abs => v.abs(),
                };
                self.check_finite(out)
            }
            Expr::Binary(op, lhs, rhs) => {
                let l = lhs.eval_values(values)?;
                let r = rhs.eval_values(values)?;
                let out = match op {
                    BinaryOp::Add => l + r,
                    BinaryOp::Sub => l - r,
                    BinaryOp::Mul => l * r,
                    BinaryOp::Div => {
                        if r == 0.0 {
                            return Err(EvalError::DivisionByZero {
                                node: self.to_string(),
                            });
                        }
                        l / r
                    }
                    BinaryOp::Pow => l.powf(r),
                };
                self.check_finite(out)
            }
            Expr::Piecewise {
                guard,
                then_branch,
                else_branch,
            } => {
                // Exactly one branch is evaluated.
                if guard.test(values)? {
                    then_branch.eval_values(values)
                } else {
                    else_branch.eval_values(values)
                }
            }
            Expr::MinMax(op, lhs, rhs) => {
                let l = lhs.eval_values(values)?;
                let r = rhs.eval_values(values)?;
                Ok(match op {
                    MinMaxOp::Min => l.min(r),
                    MinMaxOp::Max => l.max(r),
                })
            }
        }
    }

    fn check_finite(&self, v: f64) -> Result<f64, EvalError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite {
                node: self.to_string(),
            })
        }
    }

    /// Indices of the variables that occur in the tree.
    pub fn variable_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var { index, .. } => out.push(*index),
            Expr::Unary(_, c) => c.collect_vars(out),
            Expr::Binary(_, l, r) | Expr::MinMax(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Piecewise {
                guard,
                then_branch,
                else_branch,
            } => {
                guard.lhs.collect_vars(out);
                guard.rhs.collect_vars(out);
                then_branch.collect_vars(out);
                else_branch.collect_vars(out);
            }
        }
    }

    /// All piecewise guards in the tree, outermost first. Branch derivatives
    /// are invalid on their zero sets, so gradient-based estimators need the
    /// list to stay clear of them.
    pub fn guards(&self) -> Vec<&Guard> {
        let mut out = Vec::new();
        self.collect_guards(&mut out);
        out
    }

    fn collect_guards<'a>(&'a self, out: &mut Vec<&'a Guard>) {
        match self {
            Expr::Const(_) | Expr::Var { .. } => {}
            Expr::Unary(_, c) => c.collect_guards(out),
            Expr::Binary(_, l, r) | Expr::MinMax(_, l, r) => {
                l.collect_guards(out);
                r.collect_guards(out);
            }
            Expr::Piecewise {
                guard,
                then_branch,
                else_branch,
            } => {
                out.push(guard);
                guard.lhs.collect_guards(out);
                guard.rhs.collect_guards(out);
                then_branch.collect_guards(out);
                else_branch.collect_guards(out);
            }
        }
    }
}

// Precedence levels used by the printer; parser::climb uses matching values.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if *c < 0.0 => PREC_NEG,
            Expr::Const(_) | Expr::Var { .. } | Expr::MinMax(..) | Expr::Piecewise { .. } => {
                PREC_ATOM
            }
            Expr::Unary(UnaryOp::Neg, _) => PREC_NEG,
            Expr::Unary(..) => PREC_ATOM,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => PREC_ADD,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => PREC_MUL,
            Expr::Binary(BinaryOp::Pow, ..) => PREC_POW,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let prec = self.precedence();
        if prec < min_prec {
            write!(f, "(")?;
            self.fmt_prec(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var { name, .. } => write!(f, "{name}"),
            Expr::Unary(UnaryOp::Neg, c) => {
                write!(f, "-")?;
                c.fmt_prec(f, PREC_NEG + 1)
            }
            Expr::Unary(op, c) => {
                let name = match op {
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Tan => "tan",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Log => "log",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Abs => "abs",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}(")?;
                c.fmt_prec(f, 0)?;
                write!(f, ")")
            }
            Expr::Binary(op, l, r) => {
                let (sym, lp, rp) = match op {
                    BinaryOp::Add => (" + ", PREC_ADD, PREC_ADD + 1),
                    BinaryOp::Sub => (" - ", PREC_ADD, PREC_ADD + 1),
                    BinaryOp::Mul => ("*", PREC_MUL, PREC_MUL + 1),
                    BinaryOp::Div => ("/", PREC_MUL, PREC_MUL + 1),
                    // right-associative
                    BinaryOp::Pow => ("^", PREC_ATOM, PREC_POW),
                };
                l.fmt_prec(f, lp)?;
                write!(f, "{sym}")?;
                r.fmt_prec(f, rp)
            }
            Expr::Piecewise {
                guard,
                then_branch,
                else_branch,
            } => {
                write!(f, "if({guard}, ")?;
                then_branch.fmt_prec(f, 0)?;
                write!(f, ", ")?;
                else_branch.fmt_prec(f, 0)?;
                write!(f, ")")
            }
            Expr::MinMax(op, l, r) => {
                write!(
                    f,
                    "{}(",
                    match op {
                        MinMaxOp::Min => "min",
                        MinMaxOp::Max => "max",
                    }
                )?;
                l.fmt_prec(f, 0)?;
                write!(f, ", ")?;
                r.fmt_prec(f, 0)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sym = match self.op {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        };
        write!(f, "{} {} {}", self.lhs, sym, self.rhs)
    }
}
