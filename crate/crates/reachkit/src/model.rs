//! Problem instances: plant, controller, sets, and sampling parameters.
//!
//! A [`SystemSpec`] bundles a control-affine plant `ẋ = f(x) + g(x)u`, a
//! feedback law `k`, the three set-defining functions `h_D`, `h_C`, `h_G`,
//! the control set, and the sampled-data parameters (exponential rate `λ`,
//! sampling period `Δ`, measurement bound `ε`). Specs load from JSON (see
//! the crate docs for the schema) with every expression parsed against the
//! declared state variables, and are immutable afterwards, so all operations
//! here are pure and safe to call concurrently.
//!
//! Set membership follows the defining nesting `G = {x ∈ C | h_G(x) > 0}`,
//! `C = {x ∈ D | h_C(x) > 0}` with *strict* inequalities: a point with
//! `h_C(x) = 0` is outside `C`.
//!
//! ```
//! use reachkit::model::SystemSpec;
//!
//! let spec = SystemSpec::from_path(
//!     concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/pendulum.json"),
//! )?;
//!
//! // the origin sits in the goal set; the drift vanishes there
//! let m = spec.membership(&[0.0, 0.0])?;
//! assert!(m.in_g && m.in_c && m.in_d);
//! assert_eq!(spec.dynamics(&[0.0, 0.0], &[0.0])?, vec![0.0, 0.0]);
//!
//! // the safe-set boundary is excluded: h_C = 0 is outside C
//! let edge = spec.membership(&[0.5, 0.0])?;
//! assert_eq!(edge.h_c, 0.0);
//! assert!(!edge.in_c);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

use crate::expr::{differentiate, parse, Env, EvalError, Expr, ParseError, VarSet};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

/// Axis-aligned box known to contain the domain `D`; grids are laid out
/// over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Euclidean diagonal length.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(xi, (l, u))| *xi >= *l && *xi <= *u)
    }
}

/// Admissible control set. A `Ball` is the norm ball `‖u‖ ≤ ubar`; a `Box`
/// is a componentwise interval (asymmetric intervals are allowed).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ControlSet {
    Ball { ubar: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ControlSet {
    /// Euclidean diameter: `2·ubar` for a ball, the corner-to-corner
    /// distance for a box.
    pub fn diameter(&self) -> f64 {
        match self {
            ControlSet::Ball { ubar } => 2.0 * ubar,
            ControlSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| (u - l) * (u - l))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            ControlSet::Ball { ubar } => norm(u) <= *ubar,
            ControlSet::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(ui, (l, h))| *ui >= *l && *ui <= *h),
        }
    }

    /// Project `u` onto the set: radially for a ball, componentwise for a
    /// box. Returns the projection and whether it changed anything.
    pub fn clamp(&self, u: &[f64]) -> (Vec<f64>, bool) {
        match self {
            ControlSet::Ball { ubar } => {
                let n = norm(u);
                if n <= *ubar || n == 0.0 {
                    (u.to_vec(), false)
                } else {
                    let mut s = ubar / n;
                    // rounding can leave the scaled vector a hair outside
                    loop {
                        let v: Vec<f64> = u.iter().map(|ui| ui * s).collect();
                        if norm(&v) <= *ubar {
                            return (v, true);
                        }
                        s *= 1.0 - 1e-15;
                    }
                }
            }
            ControlSet::Box { lower, upper } => {
                let mut fired = false;
                let v = u
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(ui, (l, h))| {
                        let c = ui.clamp(*l, *h);
                        if c != *ui {
                            fired = true;
                        }
                        c
                    })
                    .collect();
                (v, fired)
            }
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// User-supplied values for any subset of the four constants; overrides the
/// grid estimate field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundsOverride {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub xi: Option<f64>,
}

/// Membership report for one point: the three function values plus the
/// nested strict-inequality flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SetMembership {
    pub h_d: f64,
    pub h_c: f64,
    pub h_g: f64,
    pub in_d: bool,
    pub in_c: bool,
    pub in_g: bool,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("failed to read config")]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON")]
    Json(#[from] serde_json::Error),
    #[error("in field `{field}`: {source}")]
    Expr {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("dimension mismatch: {what} has {found} entries, expected {expected}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: String, reason: String },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ControlConfig {
    Ball { ubar: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Deserialize)]
struct RawConfig {
    #[serde(default)]
    name: String,
    state: Vec<String>,
    f: Vec<String>,
    g: Vec<Vec<String>>,
    k: Vec<String>,
    control: ControlConfig,
    #[serde(rename = "h_D")]
    h_d: String,
    #[serde(rename = "h_C")]
    h_c: String,
    #[serde(rename = "h_G")]
    h_g: String,
    lambda: f64,
    delta: f64,
    epsilon: f64,
    domain_box: DomainBox,
    #[serde(default)]
    bounds_override: Option<BoundsOverride>,
}

/// A validated problem instance. Immutable after load; gradient and Jacobian
/// expressions are derived lazily and cached.
#[derive(Debug)]
pub struct SystemSpec {
    pub name: String,
    vars: VarSet,
    control_dim: usize,
    pub f: Vec<Expr>,
    pub g: Vec<Vec<Expr>>,
    pub k: Vec<Expr>,
    pub h_d: Expr,
    pub h_c: Expr,
    pub h_g: Expr,
    pub control_set: ControlSet,
    pub lambda: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub domain_box: DomainBox,
    pub bounds_override: Option<BoundsOverride>,
    grad_h_c: OnceLock<Vec<Expr>>,
    grad_h_g: OnceLock<Vec<Expr>>,
    jacobian_k: OnceLock<Vec<Vec<Expr>>>,
}

impl SystemSpec {
    /// Parse and validate a JSON config.
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        let raw: RawConfig = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, SpecError> {
        let n = raw.state.len();
        if n == 0 {
            return Err(SpecError::InvalidValue {
                field: "state".into(),
                reason: "at least one state variable is required".into(),
            });
        }
        let vars = VarSet::new(raw.state.clone());

        let parse_field = |field: String, text: &str| -> Result<Expr, SpecError> {
            parse(text, &vars).map_err(|source| SpecError::Expr { field, source })
        };

        if raw.f.len() != n {
            return Err(SpecError::DimensionMismatch {
                what: "f".into(),
                expected: n,
                found: raw.f.len(),
            });
        }
        if raw.g.len() != n {
            return Err(SpecError::DimensionMismatch {
                what: "g".into(),
                expected: n,
                found: raw.g.len(),
            });
        }
        let m = raw.g.first().map_or(0, Vec::len);
        if m == 0 {
            return Err(SpecError::InvalidValue {
                field: "g".into(),
                reason: "control dimension must be at least 1".into(),
            });
        }
        for (i, row) in raw.g.iter().enumerate() {
            if row.len() != m {
                return Err(SpecError::DimensionMismatch {
                    what: format!("g[{i}]"),
                    expected: m,
                    found: row.len(),
                });
            }
        }
        if raw.k.len() != m {
            return Err(SpecError::DimensionMismatch {
                what: "k".into(),
                expected: m,
                found: raw.k.len(),
            });
        }
        if raw.domain_box.lower.len() != n || raw.domain_box.upper.len() != n {
            return Err(SpecError::DimensionMismatch {
                what: "domain_box".into(),
                expected: n,
                found: raw.domain_box.lower.len().min(raw.domain_box.upper.len()),
            });
        }
        for i in 0..n {
            if raw.domain_box.lower[i] >= raw.domain_box.upper[i] {
                return Err(SpecError::InvalidValue {
                    field: format!("domain_box axis {i}"),
                    reason: "lower bound must be below upper bound".into(),
                });
            }
        }
        if !(raw.lambda > 0.0) {
            return Err(SpecError::InvalidValue {
                field: "lambda".into(),
                reason: format!("must be positive, got {}", raw.lambda),
            });
        }
        if raw.delta < 0.0 {
            return Err(SpecError::InvalidValue {
                field: "delta".into(),
                reason: format!("must be nonnegative, got {}", raw.delta),
            });
        }
        if raw.epsilon < 0.0 {
            return Err(SpecError::InvalidValue {
                field: "epsilon".into(),
                reason: format!("must be nonnegative, got {}", raw.epsilon),
            });
        }

        let control_set = match raw.control {
            ControlConfig::Ball { ubar } => {
                if !(ubar > 0.0) {
                    return Err(SpecError::InvalidValue {
                        field: "control.ubar".into(),
                        reason: format!("must be positive, got {ubar}"),
                    });
                }
                ControlSet::Ball { ubar }
            }
            ControlConfig::Box { lower, upper } => {
                if lower.len() != m || upper.len() != m {
                    return Err(SpecError::DimensionMismatch {
                        what: "control box".into(),
                        expected: m,
                        found: lower.len().min(upper.len()),
                    });
                }
                if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
                    return Err(SpecError::InvalidValue {
                        field: "control".into(),
                        reason: "box lower bounds must be below upper bounds".into(),
                    });
                }
                ControlSet::Box { lower, upper }
            }
        };

        let f = raw
            .f
            .iter()
            .enumerate()
            .map(|(i, s)| parse_field(format!("f[{i}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        let g = raw
            .g
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, s)| parse_field(format!("g[{i}][{j}]"), s))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let k = raw
            .k
            .iter()
            .enumerate()
            .map(|(j, s)| parse_field(format!("k[{j}]"), s))
            .collect::<Result<Vec<_>, _>>()?;
        let h_d = parse_field("h_D".into(), &raw.h_d)?;
        let h_c = parse_field("h_C".into(), &raw.h_c)?;
        let h_g = parse_field("h_G".into(), &raw.h_g)?;

        Ok(SystemSpec {
            name: raw.name,
            vars,
            control_dim: m,
            f,
            g,
            k,
            h_d,
            h_c,
            h_g,
            control_set,
            lambda: raw.lambda,
            delta: raw.delta,
            epsilon: raw.epsilon,
            domain_box: raw.domain_box,
            bounds_override: raw.bounds_override,
            grad_h_c: OnceLock::new(),
            grad_h_g: OnceLock::new(),
            jacobian_k: OnceLock::new(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.vars.len()
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn vars(&self) -> &VarSet {
        &self.vars
    }

    pub fn env<'a>(&'a self, x: &'a [f64]) -> Env<'a> {
        Env::new(&self.vars, x)
    }

    /// `f(x) + g(x)·u`, componentwise.
    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        debug_assert_eq!(u.len(), self.control_dim);
        let mut out = Vec::with_capacity(self.f.len());
        for i in 0..self.f.len() {
            let mut v = self.f[i].eval_values(x)?;
            for (j, uj) in u.iter().enumerate() {
                if *uj != 0.0 {
                    v += self.g[i][j].eval_values(x)? * uj;
                }
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Raw feedback law `k(x)`, unclamped.
    pub fn controller(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.k.iter().map(|kj| kj.eval_values(x)).collect()
    }

    /// `clamp(k(x))` plus whether the projection changed the value.
    pub fn clamped_controller(&self, x: &[f64]) -> Result<(Vec<f64>, bool), EvalError> {
        let u = self.controller(x)?;
        Ok(self.control_set.clamp(&u))
    }

    pub fn membership(&self, x: &[f64]) -> Result<SetMembership, EvalError> {
        let h_d = self.h_d.eval_values(x)?;
        let h_c = self.h_c.eval_values(x)?;
        let h_g = self.h_g.eval_values(x)?;
        let in_d = h_d > 0.0;
        let in_c = in_d && h_c > 0.0;
        let in_g = in_c && h_g > 0.0;
        Ok(SetMembership {
            h_d,
            h_c,
            h_g,
            in_d,
            in_c,
            in_g,
        })
    }

    /// Symbolic gradient of `h_C`, built once.
    pub fn grad_h_c(&self) -> &[Expr] {
        self.grad_h_c
            .get_or_init(|| gradient(&self.h_c, self.vars.len()))
    }

    /// Symbolic gradient of `h_G`, built once.
    pub fn grad_h_g(&self) -> &[Expr] {
        self.grad_h_g
            .get_or_init(|| gradient(&self.h_g, self.vars.len()))
    }

    /// Symbolic Jacobian of `k` (`m×n`, row `j` is `∇k_j`), built once.
    pub fn jacobian_k(&self) -> &[Vec<Expr>] {
        self.jacobian_k.get_or_init(|| {
            self.k
                .iter()
                .map(|kj| gradient(kj, self.vars.len()))
                .collect()
        })
    }

    /// Generous default simulation horizon: `50 · diam(domain_box) / α`.
    pub fn default_horizon(&self, alpha: f64) -> f64 {
        assert!(alpha > 0.0, "horizon needs a positive dynamics bound");
        50.0 * self.domain_box.diameter() / alpha
    }

    /// Copy of this spec with some sampled-data parameters replaced
    /// (experiment overrides; the range checks from loading still apply).
    pub fn with_parameters(
        &self,
        delta: Option<f64>,
        epsilon: Option<f64>,
        lambda: Option<f64>,
    ) -> Result<SystemSpec, SpecError> {
        let delta = delta.unwrap_or(self.delta);
        let epsilon = epsilon.unwrap_or(self.epsilon);
        let lambda = lambda.unwrap_or(self.lambda);
        if !(lambda > 0.0) {
            return Err(SpecError::InvalidValue {
                field: "lambda".into(),
                reason: format!("must be positive, got {lambda}"),
            });
        }
        if delta < 0.0 || epsilon < 0.0 {
            return Err(SpecError::InvalidValue {
                field: if delta < 0.0 { "delta" } else { "epsilon" }.into(),
                reason: "must be nonnegative".into(),
            });
        }
        Ok(SystemSpec {
            name: self.name.clone(),
            vars: self.vars.clone(),
            control_dim: self.control_dim,
            f: self.f.clone(),
            g: self.g.clone(),
            k: self.k.clone(),
            h_d: self.h_d.clone(),
            h_c: self.h_c.clone(),
            h_g: self.h_g.clone(),
            control_set: self.control_set.clone(),
            lambda,
            delta,
            epsilon,
            domain_box: self.domain_box.clone(),
            bounds_override: self.bounds_override.clone(),
            grad_h_c: OnceLock::new(),
            grad_h_g: OnceLock::new(),
            jacobian_k: OnceLock::new(),
        })
    }
}

fn gradient(e: &Expr, n: usize) -> Vec<Expr> {
    (0..n).map(|v| differentiate(e, v)).collect()
}

/// Geometry violation found by [`validate_geometry`].
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("h_C > 0 but h_D <= 0 at {point:?}: C is not contained in D")]
    SafeSetEscapesDomain { point: Vec<f64> },
    #[error("C + B_eps leaves D near {point:?} (offset {offset:?})")]
    MinkowskiMargin { point: Vec<f64>, offset: Vec<f64> },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Check the falsifiable set conditions on a centered grid with `per_axis`
/// points per dimension: `h_C(x) > 0 ⇒ h_D(x) > 0`, and for every grid point
/// in `C`, every sampled point on the `ε`-sphere around it stays in `D`
/// (the Minkowski-sum condition `C ⊕ B_ε ⊆ D`). Sphere samples are the `2n`
/// axis offsets plus the `2ⁿ` scaled corner directions.
pub fn validate_geometry(spec: &SystemSpec, per_axis: usize) -> Result<(), GeometryError> {
    let n = spec.state_dim();
    let bx = &spec.domain_box;
    let counts = vec![per_axis; n];
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let eps = spec.epsilon;

    let mut dirs: Vec<Vec<f64>> = Vec::new();
    if eps > 0.0 {
        for a in 0..n {
            for s in [-1.0, 1.0] {
                let mut d = vec![0.0; n];
                d[a] = s;
                dirs.push(d);
            }
        }
        let scale = 1.0 / (n as f64).sqrt();
        for corner in 0..(1usize << n) {
            let d = (0..n)
                .map(|a| if corner >> a & 1 == 1 { scale } else { -scale })
                .collect();
            dirs.push(d);
        }
    }

    loop {
        for a in 0..n {
            let w = bx.upper[a] - bx.lower[a];
            x[a] = bx.lower[a] + w * (idx[a] as f64 + 0.5) / counts[a] as f64;
        }
        let m = spec.membership(&x)?;
        if m.h_c > 0.0 && m.h_d <= 0.0 {
            return Err(GeometryError::SafeSetEscapesDomain { point: x.clone() });
        }
        if m.in_c && eps > 0.0 {
            for d in &dirs {
                let shifted: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + eps * di).collect();
                if spec.h_d.eval_values(&shifted)? <= 0.0 {
                    return Err(GeometryError::MinkowskiMargin {
                        point: x.clone(),
                        offset: d.clone(),
                    });
                }
            }
        }
        // odometer increment
        let mut a = 0;
        loop {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
            a += 1;
            if a == n {
                return Ok(());
            }
        }
    }
}
