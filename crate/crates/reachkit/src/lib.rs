//! Reach-avoid certification and simulation for sampled-data control
//! systems with bounded state-measurement error.
//!
//! A continuous-time feedback law certified by an exponential control
//! guidance-barrier function drives a control-affine plant into a goal set
//! `G` while keeping it inside a safe set `C`. Digital implementations
//! break both halves of that argument: the control is computed from a
//! *measured* state (off by up to `ε`) and *held* for a sampling period
//! `Δ`, and goal entry can only ever be confirmed through measurements
//! taken at sampling instants. This crate checks, numerically, whether a
//! given controller survives that implementation gap, and simulates the
//! resulting loops:
//!
//! * [`expr`] — the expression language in which plants, controllers and
//!   set functions are written; evaluation plus symbolic differentiation.
//! * [`model`] — problem instances ([`SystemSpec`]): dynamics, controller,
//!   the sets `D ⊇ C ⊇ G`, control set, and the `(λ, Δ, ε)` parameters.
//! * [`bounds`] — deterministic grid estimation of the four constants
//!   `α, β, γ, ξ` (dynamics bound, controller Lipschitz constant, gain-row
//!   bound, goal-function Lipschitz constant), or user overrides.
//! * [`certify`] — the robustness margin `m = γ·min{β(αΔ+ε), diam(U)}`,
//!   the shrunk goal thresholds `ξε`, `2ξε`, `ξαΔ+2ξε`, and a falsification
//!   scan of the strengthened condition over `C \ Ĝ`.
//! * [`simulate`] — RK4 integration of the continuous reference loop, the
//!   zero-order-hold loop with measurement noise, and the explicitly
//!   perturbed loop, all under an online reach-avoid monitor; seeded
//!   batches with aggregate statistics.
//!
//! The companion `reachkit` binary exposes all of this as subcommands
//! (`bounds`, `check`, `sim`, `batch`, `perturb`); the book under `book/`
//! walks through the concepts chapter by chapter.
//!
//! # Quick start
//!
//! Certify the bundled inverted pendulum and simulate one sampled run:
//!
//! ```
//! use reachkit::bounds::{resolve_bounds, Grid};
//! use reachkit::certify::{goal_thresholds, scan_condition, Verdict};
//! use reachkit::model::SystemSpec;
//! use reachkit::simulate::{simulate_sampled, NoiseModel, OutcomeKind};
//!
//! let spec = SystemSpec::from_path(
//!     concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/pendulum.json"),
//! )?;
//!
//! // constants come from the config's override block here; estimate
//! // them on a grid by loading the *_no_override.json twin instead
//! let grid = Grid::uniform(&spec.domain_box, 100);
//! let bounds = resolve_bounds(&spec, &grid, 1.0)?;
//! let report = scan_condition(&spec, &bounds, &grid)?;
//! assert_eq!(report.verdict, Verdict::Pass);
//!
//! let thresholds = goal_thresholds(&bounds, &spec);
//! let traj = simulate_sampled(&spec, &[-0.4, 0.3], 25.0, 10, NoiseModel::Ball, 7, &thresholds)?;
//! assert_eq!(traj.outcome.kind, OutcomeKind::GoalConfirmed);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! # Guarantees and their limits
//!
//! The condition scan is a *falsifier*: `FAIL` comes with a concrete
//! witness point and is definitive, while `PASS` means no violation was
//! found at the reported grid resolution. Reports embed the resolution so
//! the scan can be refined. Simulation checks safety at substep
//! resolution, which is likewise disclosed in the trajectory output.

pub mod bounds;
pub mod certify;
pub mod expr;
pub mod model;
pub mod simulate;

pub use model::SystemSpec;

#[cfg(test)]
pub(crate) mod test_configs {
    pub fn pendulum_json(with_override: bool) -> String {
        if with_override {
            include_str!("../../../configs/pendulum.json").to_string()
        } else {
            include_str!("../../../configs/pendulum_no_override.json").to_string()
        }
    }

    pub fn cruise_json(with_override: bool) -> String {
        if with_override {
            include_str!("../../../configs/cruise.json").to_string()
        } else {
            include_str!("../../../configs/cruise_no_override.json").to_string()
        }
    }
}
