//! Margin, shrunk goal sets, and the strengthened condition scan.
//!
//! A feedback law `k` certified by the exponential guidance-barrier
//! condition `𝓛_f h_C + 𝓛_g h_C·k − λ·h_C ≥ 0` on `C \ G` drives the
//! continuous closed loop into the goal set without leaving `C`. Its
//! zero-order-hold implementation with measurement error behaves like the
//! closed loop under a bounded input perturbation, so the condition must
//! hold with a margin:
//!
//! ```text
//! 𝓛_f h_C(x) + 𝓛_g h_C(x)·k(x) − λ·h_C(x) ≥ m,   m = γ·d̄,
//! d̄ = min{ β(αΔ + ε), diam(U) }
//! ```
//!
//! on `C \ Ĝ`, where `Ĝ` shrinks the goal set far enough that entry is
//! confirmable from measured states alone. The three thresholds on `h_G`
//! are `t1 = ξε` (measured state in `G₁` implies the exact state is in
//! `G`), `t2 = 2ξε` (exact state in `G₂` implies the measurement lands in
//! `G₁`), and `t̂ = ξαΔ + 2ξε` (touching `Ĝ` between samples implies the
//! *next sample* lands in `G₂`). With `Δ = ε = 0` everything collapses to
//! the nominal condition.
//!
//! [`scan_condition`] is a falsifier, not a proof: it evaluates the
//! residual on the full estimation point set and reports the minimum with a
//! witness. A negative residual is a definite violation at that point; a
//! nonnegative sweep means no violation *at the stated resolution*, which
//! the report discloses.

use crate::bounds::{BoundsSet, Grid, PointSet};
use crate::expr::EvalError;
use crate::model::SystemSpec;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Bounds(#[from] crate::bounds::BoundsError),
}

/// Superlevel thresholds on `h_G` for the shrunk goal sets `G₁ ⊇ G₂ ⊇ Ĝ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GoalThresholds {
    /// `ξε` — confirmation threshold for measured states.
    pub t1: f64,
    /// `2ξε`.
    pub t2: f64,
    /// `ξαΔ + 2ξε` — the scan region excludes `{h_G > t_hat}`.
    pub t_hat: f64,
}

impl GoalThresholds {
    /// Thresholds with measurement error and sampling period zeroed out;
    /// used when monitoring exact-state streams.
    pub fn exact() -> Self {
        GoalThresholds {
            t1: 0.0,
            t2: 0.0,
            t_hat: 0.0,
        }
    }
}

/// `t1 = ξε`, `t2 = 2ξε`, `t̂ = ξαΔ + 2ξε` from the resolved constants.
pub fn goal_thresholds(bounds: &BoundsSet, spec: &SystemSpec) -> GoalThresholds {
    let xi = bounds.xi.value;
    let alpha = bounds.alpha.value;
    GoalThresholds {
        t1: xi * spec.epsilon,
        t2: 2.0 * xi * spec.epsilon,
        t_hat: xi * alpha * spec.delta + 2.0 * xi * spec.epsilon,
    }
}

/// Perturbation bound and margin: `d̄ = min{β(αΔ + ε), diam(U)}`,
/// `m = γ·d̄`.
pub fn margin(bounds: &BoundsSet, spec: &SystemSpec) -> (f64, f64) {
    let dbar = (bounds.beta.value * (bounds.alpha.value * spec.delta + spec.epsilon))
        .min(spec.control_set.diameter());
    (dbar, bounds.gamma.value * dbar)
}

/// Strengthened-condition residual at one point:
/// `∇h_C·f + ∇h_C·g·k − λ·h_C − m`. Gradients are symbolic and cached on
/// the spec.
pub fn residual(spec: &SystemSpec, m: f64, x: &[f64]) -> Result<f64, EvalError> {
    let grad = spec.grad_h_c();
    let n = spec.state_dim();
    let mc = spec.control_dim();
    let mut lie = 0.0;
    let k: Vec<f64> = spec
        .k
        .iter()
        .map(|kj| kj.eval_values(x))
        .collect::<Result<_, _>>()?;
    for i in 0..n {
        let gi = grad[i].eval_values(x)?;
        if gi == 0.0 {
            continue;
        }
        let mut flow = spec.f[i].eval_values(x)?;
        for j in 0..mc {
            flow += spec.g[i][j].eval_values(x)? * k[j];
        }
        lie += gi * flow;
    }
    Ok(lie - spec.lambda * spec.h_c.eval_values(x)? - m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Scan outcome. `verdict` is `PASS` when the residual sweep over
/// `C \ Ĝ` stayed nonnegative and `Ĝ` is nonempty on the grid, `FAIL` when
/// either is violated (with `witness` the minimizing point), and
/// `INCONCLUSIVE` when the scan region contained no points. `admissible`
/// reports whether the raw feedback law stays inside the control set on
/// all of `D`; it is diagnostic and does not gate the verdict.
#[derive(Debug, Clone, Serialize)]
pub struct CertReport {
    pub dbar: f64,
    pub margin: f64,
    pub thresholds: GoalThresholds,
    /// Sublevel bound of the expanded safe set `Ĉ = {h_C > −m/λ}`.
    pub c_hat_threshold: f64,
    pub min_residual: Option<f64>,
    pub witness: Option<Vec<f64>>,
    pub ghat_nonempty: bool,
    pub admissible: bool,
    pub grid: Vec<usize>,
    pub verdict: Verdict,
}

#[derive(Default, Clone)]
struct ScanAcc {
    /// (residual, stable point id, point) — ties broken toward the smaller id.
    min: Option<(f64, usize, Vec<f64>)>,
    ghat_nonempty: bool,
    admissible: bool,
    region_seen: bool,
}

impl ScanAcc {
    fn new() -> Self {
        ScanAcc {
            min: None,
            ghat_nonempty: false,
            admissible: true,
            region_seen: false,
        }
    }

    fn merge(mut self, other: ScanAcc) -> ScanAcc {
        self.ghat_nonempty |= other.ghat_nonempty;
        self.admissible &= other.admissible;
        self.region_seen |= other.region_seen;
        self.min = match (self.min, other.min) {
            (Some(a), Some(b)) => {
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    Some(b)
                } else {
                    Some(a)
                }
            }
            (a, None) => a,
            (None, b) => b,
        };
        self
    }
}

/// Evaluate the strengthened condition over the estimation point set of
/// `grid` and assemble the report.
pub fn scan_condition(
    spec: &SystemSpec,
    bounds: &BoundsSet,
    grid: &Grid,
) -> Result<CertReport, CertifyError> {
    let pts = PointSet::build(spec, grid)?;
    scan_condition_over(spec, bounds, grid, &pts)
}

/// Same as [`scan_condition`] but reusing an already-built point set.
pub fn scan_condition_over(
    spec: &SystemSpec,
    bounds: &BoundsSet,
    grid: &Grid,
    pts: &PointSet,
) -> Result<CertReport, CertifyError> {
    let (dbar, m) = margin(bounds, spec);
    let thresholds = goal_thresholds(bounds, spec);

    let acc = pts
        .points
        .par_iter()
        .enumerate()
        .map(|(id, p)| -> Result<ScanAcc, EvalError> {
            let mut acc = ScanAcc::new();
            let mem = spec.membership(p)?;
            if mem.in_d {
                let u = spec.controller(p)?;
                if !spec.control_set.contains(&u) {
                    acc.admissible = false;
                }
            }
            if mem.in_c {
                if mem.h_g > thresholds.t_hat {
                    acc.ghat_nonempty = true;
                } else {
                    // x in C \ Ghat (boundary h_G = t_hat included)
                    acc.region_seen = true;
                    let r = residual(spec, m, p)?;
                    acc.min = Some((r, id, p.clone()));
                }
            }
            Ok(acc)
        })
        .try_reduce(ScanAcc::new, |a, b| Ok(a.merge(b)))?;

    let verdict = if !acc.region_seen {
        Verdict::Inconclusive
    } else {
        let min_ok = acc.min.as_ref().map(|(r, _, _)| *r >= 0.0).unwrap_or(true);
        if min_ok && acc.ghat_nonempty {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    };

    Ok(CertReport {
        dbar,
        margin: m,
        thresholds,
        c_hat_threshold: -m / spec.lambda,
        min_residual: acc.min.as_ref().map(|(r, _, _)| *r),
        witness: acc.min.map(|(_, _, p)| p),
        ghat_nonempty: acc.ghat_nonempty,
        admissible: acc.admissible,
        grid: grid.counts().to_vec(),
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::resolve_bounds;
    use crate::model::SystemSpec;
    use crate::test_configs::{cruise_json, pendulum_json};

    fn pend_bounds() -> (SystemSpec, BoundsSet) {
        let spec = SystemSpec::from_json(&pendulum_json(true)).unwrap();
        let grid = Grid::uniform(&spec.domain_box, 10);
        let bounds = resolve_bounds(&spec, &grid, 1.0).unwrap();
        (spec, bounds)
    }

    #[test]
    fn margin_matches_hand_computation() {
        let (spec, bounds) = pend_bounds();
        let (dbar, m) = margin(&bounds, &spec);
        let expect_dbar = 4.4721 * (3.6014 * 0.003 + 0.001);
        assert!((dbar - expect_dbar).abs() < 1e-12);
        assert!((m - 2.9665 * expect_dbar).abs() < 1e-12);
        assert!((m / 0.1566 - 1.0).abs() < 0.005, "m = {m}");
    }

    #[test]
    fn margin_uses_control_set_diameter() {
        // blow delta up so beta*(alpha*delta+eps) exceeds diam(U) = 5.2
        let json = pendulum_json(true).replace(r#""delta": 0.003"#, r#""delta": 10"#);
        let spec = SystemSpec::from_json(&json).unwrap();
        let grid = Grid::uniform(&spec.domain_box, 10);
        let bounds = resolve_bounds(&spec, &grid, 1.0).unwrap();
        let (dbar, _) = margin(&bounds, &spec);
        assert_eq!(dbar, 5.2);
    }

    #[test]
    fn zero_sampling_effects_zero_the_margin() {
        let json = pendulum_json(true)
            .replace(r#""delta": 0.003"#, r#""delta": 0"#)
            .replace(r#""epsilon": 0.001"#, r#""epsilon": 0"#);
        let spec = SystemSpec::from_json(&json).unwrap();
        let grid = Grid::uniform(&spec.domain_box, 10);
        let bounds = resolve_bounds(&spec, &grid, 1.0).unwrap();
        let (dbar, m) = margin(&bounds, &spec);
        assert_eq!((dbar, m), (0.0, 0.0));
        let t = goal_thresholds(&bounds, &spec);
        assert_eq!((t.t1, t.t2, t.t_hat), (0.0, 0.0, 0.0));
    }

    #[test]
    fn pendulum_goal_thresholds() {
        let (spec, bounds) = pend_bounds();
        let t = goal_thresholds(&bounds, &spec);
        assert!((t.t_hat - 0.01899).abs() < 2e-4, "t_hat = {}", t.t_hat);
        // shrunk-goal bound on theta_dot^2
        let bound = 0.05 - t.t_hat;
        assert!((0.0310..=0.0311).contains(&bound), "bound = {bound}");
    }

    #[test]
    fn residual_matches_paper_algebra_on_pendulum() {
        // Lie derivative along the pendulum loop collapses to 8*theta_dot^2
        let (spec, bounds) = pend_bounds();
        let (_, m) = margin(&bounds, &spec);
        let x = [0.3, 0.5];
        let r = residual(&spec, m, &x).unwrap();
        let h_c = 1.0 - 4.0 * 0.09 - 2.0 * 0.25;
        let expect = 8.0 * 0.25 - spec.lambda * h_c - m;
        assert!((r - expect).abs() < 1e-3, "{r} vs {expect}");
    }

    #[test]
    fn cruise_residual_on_fast_branch() {
        let spec = SystemSpec::from_json(&cruise_json(true)).unwrap();
        let grid = Grid::uniform(&spec.domain_box, 10);
        let bounds = resolve_bounds(&spec, &grid, 1.0).unwrap();
        let (_, m) = margin(&bounds, &spec);
        for x in [[6.0, 2.0, 1.0], [8.0, -3.0, -2.0], [7.0, 4.0, 0.5]] {
            let r = residual(&spec, m, &x).unwrap();
            let h_c = 25.0 - (x[0] - 7.0) * (x[0] - 7.0) - x[1] * x[1] - x[2] * x[2];
            let expect = 2.0 * x[1] * x[1] - spec.lambda * h_c - m;
            assert!((r - expect).abs() < 1e-9, "{r} vs {expect} at {x:?}");
        }
    }

    #[test]
    fn degenerate_point_residual_is_minus_margin_free() {
        // grad h_C = 0 and h_C = 0 at a synthetic point -> residual = -m; with m = 0 it is 0
        let json = pendulum_json(true)
            .replace(r#""delta": 0.003"#, r#""delta": 0"#)
            .replace(r#""epsilon": 0.001"#, r#""epsilon": 0"#);
        let spec = SystemSpec::from_json(&json).unwrap();
        // h_C = 1 - 4 th^2 - 2 thd^2 has zero gradient only at the origin where h_C = 1;
        // check the algebraic identity instead: residual + lambda*h_C + m == Lie derivative
        let r = residual(&spec, 0.0, &[0.0, 0.0]).unwrap();
        assert!((r - (0.0 - spec.lambda * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn scan_passes_pendulum_and_reports_witness() {
        let (spec, bounds) = pend_bounds();
        let grid = Grid::uniform(&spec.domain_box, 150);
        let report = scan_condition(&spec, &bounds, &grid).unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        assert!(report.ghat_nonempty);
        assert!(report.admissible);
        let w = report.witness.unwrap();
        // minimizer sits just outside the shrunk goal set
        assert!(w[1] * w[1] >= 0.05 - report.thresholds.t_hat - 1e-9);
        assert!((report.c_hat_threshold + report.margin / spec.lambda).abs() < 1e-12);
    }

    #[test]
    fn scan_fails_with_large_lambda_and_finite_witness() {
        let json = pendulum_json(true).replace(r#""lambda": 0.001"#, r#""lambda": 10"#);
        let spec = SystemSpec::from_json(&json).unwrap();
        let grid = Grid::uniform(&spec.domain_box, 80);
        let bounds = resolve_bounds(&spec, &grid, 1.0).unwrap();
        let report = scan_condition(&spec, &bounds, &grid).unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
        let min = report.min_residual.unwrap();
        assert!(min < 0.0);
        let w = report.witness.unwrap();
        let mem = spec.membership(&w).unwrap();
        assert!(mem.in_c && mem.h_g <= report.thresholds.t_hat);
        // closed-form check at the witness: 8 thd^2 - lambda h_C - m
        let expect = 8.0 * w[1] * w[1] - 10.0 * mem.h_c - report.margin;
        assert!((min - expect).abs() < 1e-9);
    }

    #[test]
    fn verdict_deterministic_across_thread_counts() {
        let (spec, bounds) = pend_bounds();
        let grid = Grid::uniform(&spec.domain_box, 60);
        let a = scan_condition(&spec, &bounds, &grid).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| scan_condition(&spec, &bounds, &grid).unwrap());
        assert_eq!(a.min_residual, b.min_residual);
        assert_eq!(a.witness, b.witness);
        assert_eq!(a.verdict, b.verdict);
    }

    #[test]
    fn empty_region_is_inconclusive() {
        // goal covers all of C: h_G = h_C, and with delta = eps = 0 the
        // scan region C \ G is empty
        let json = pendulum_json(true)
            .replace(r#""h_G": "0.05 - theta_dot^2""#, r#""h_G": "1 - 4*theta^2 - 2*theta_dot^2""#)
            .replace(r#""delta": 0.003"#, r#""delta": 0"#)
            .replace(r#""epsilon": 0.001"#, r#""epsilon": 0"#);
        let spec = SystemSpec::from_json(&json).unwrap();
        let grid = Grid::uniform(&spec.domain_box, 20);
        let bounds = resolve_bounds(&spec, &grid, 1.0).unwrap();
        let report = scan_condition(&spec, &bounds, &grid).unwrap();
        assert_eq!(report.verdict, Verdict::Inconclusive);
        assert!(report.min_residual.is_none());
    }
}
