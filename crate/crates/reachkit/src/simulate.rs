//! Closed-loop, sampled-data, and perturbed simulation with reach-avoid
//! monitoring.
//!
//! The sampled-data loop follows the zero-order-hold discipline: at each
//! sampling instant `tᵢ = iΔ` the exact state is measured with error at
//! most `ε`, the control `uᵢ = clamp(k(x̂ᵢ))` is computed from the
//! *measured* state and held constant over `[tᵢ, tᵢ₊₁)` while the plant is
//! integrated with classical RK4 at `Δ/substeps`. The monitor runs online:
//!
//! * **confirmation** fires at the first sample whose measured state
//!   satisfies `h_G(x̂ᵢ) > ξε` — strictly, with no float slack. By the
//!   Lipschitz bound on `h_G` this certifies `h_G(xᵢ) > 0` for the exact
//!   state even though the exact state is never observed.
//! * **safety violation** fires at the first substep whose *exact* state
//!   leaves `C` before confirmation. Measured states may leave `C` without
//!   consequence; those sample indices are recorded separately because no
//!   guarantee covers them.
//! * the horizon elapsing yields `Inconclusive` — the guarantee promises a
//!   finite hitting time but no bound on it.
//!
//! A single simulation is strictly sequential and reproducible: all
//! randomness comes from a counter-seeded ChaCha stream, so identical
//! `(spec, x0, seed, flags)` produce bit-identical trajectories. Batch runs
//! parallelize across runs with per-run streams derived by counter.

use crate::certify::GoalThresholds;
use crate::expr::EvalError;
use crate::model::{norm, SystemSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("initial state is outside the safe set (h_C = {h_c})")]
    InitialStateOutsideSafeSet { h_c: f64 },
    #[error("sampled-data simulation needs a positive sampling period")]
    ZeroSamplingPeriod,
    #[error("integration produced a non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("initial-state sampler exhausted {attempts} attempts without hitting C")]
    SamplerExhausted { attempts: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("trajectory write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// How measurements are drawn from the `ε`-ball around the exact state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Uniform direction, radius uniform on `[0, ε]` (default).
    Ball,
    /// Uniform direction, radius exactly `ε` — the worst case.
    Surface,
    /// No noise: `x̂ = x`.
    None,
}

impl std::str::FromStr for NoiseModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ball" => Ok(NoiseModel::Ball),
            "surface" => Ok(NoiseModel::Surface),
            "none" => Ok(NoiseModel::None),
            other => Err(format!("unknown noise model `{other}` (ball|surface|none)")),
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; the (0,1] shift keeps ln() in range
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Draw a measured state from the chosen noise model. The result always
/// satisfies `‖x̂ − x‖ ≤ ε`.
pub fn measure(x: &[f64], epsilon: f64, model: NoiseModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if epsilon == 0.0 || matches!(model, NoiseModel::None) {
        return x.to_vec();
    }
    let mut dir: Vec<f64> = x.iter().map(|_| standard_normal(rng)).collect();
    let dn = norm(&dir);
    if dn == 0.0 {
        return x.to_vec();
    }
    let radius = match model {
        NoiseModel::Ball => epsilon * rng.random::<f64>(),
        NoiseModel::Surface => epsilon,
        NoiseModel::None => unreachable!(),
    };
    dir.iter_mut().for_each(|d| *d *= radius / dn);
    // the bound is on the reconstructed difference (x + d) - x, which
    // rounding can push past ||d||; shave until it holds
    loop {
        let xh: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + di).collect();
        let diff: Vec<f64> = xh.iter().zip(x).map(|(a, b)| a - b).collect();
        if norm(&diff) <= epsilon {
            return xh;
        }
        dir.iter_mut().for_each(|d| *d *= 1.0 - 1e-12);
    }
}

/// One classical RK4 step of `ẋ = f(x) + g(x)u` with `u` frozen.
pub fn rk4_step(spec: &SystemSpec, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>, SimError> {
    debug_assert!(dt > 0.0);
    let k1 = spec.dynamics(x, u)?;
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(xi, k)| xi + 0.5 * dt * k).collect();
    let k2 = spec.dynamics(&x2, u)?;
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(xi, k)| xi + 0.5 * dt * k).collect();
    let k3 = spec.dynamics(&x3, u)?;
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(xi, k)| xi + dt * k).collect();
    let k4 = spec.dynamics(&x4, u)?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// RK4 for a time-varying field (closed loop and perturbed runs evaluate
/// the control inside each stage).
fn rk4_field<F>(t: f64, x: &[f64], dt: f64, mut field: F) -> Result<Vec<f64>, SimError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, SimError>,
{
    let k1 = field(t, x)?;
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(xi, k)| xi + 0.5 * dt * k).collect();
    let k2 = field(t + 0.5 * dt, &x2)?;
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(xi, k)| xi + 0.5 * dt * k).collect();
    let k3 = field(t + 0.5 * dt, &x3)?;
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(xi, k)| xi + dt * k).collect();
    let k4 = field(t + dt, &x4)?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutcomeKind {
    GoalConfirmed,
    SafetyViolated,
    Inconclusive,
}

/// Verdict of one run, with the evidence behind it.
#[derive(Debug, Clone, Serialize)]
pub struct ReachAvoidOutcome {
    pub kind: OutcomeKind,
    /// First sample index with `h_G(x̂ᵢ) > t1` (absent for exact-state
    /// monitoring, which has no samples).
    pub confirm_index: Option<usize>,
    pub confirm_time: Option<f64>,
    pub violation_time: Option<f64>,
    pub violation_state: Option<Vec<f64>>,
    /// Samples whose *measured* state had `h_C(x̂ᵢ) ≤ 0`. Informational:
    /// the guarantee speaks about exact states only.
    pub measured_safety_violations: Vec<usize>,
}

/// Online reach-avoid monitor. Feed it exact states at substep times and
/// measured states at sampling instants; it decides the outcome.
pub struct Monitor<'a> {
    spec: &'a SystemSpec,
    thresholds: GoalThresholds,
    confirm: Option<(Option<usize>, f64)>,
    violation: Option<(f64, Vec<f64>)>,
    measured_violations: Vec<usize>,
}

impl<'a> Monitor<'a> {
    pub fn new(spec: &'a SystemSpec, thresholds: GoalThresholds) -> Self {
        Monitor {
            spec,
            thresholds,
            confirm: None,
            violation: None,
            measured_violations: Vec::new(),
        }
    }

    /// Exact state at a substep; returns `true` when the run must stop
    /// because safety was violated.
    pub fn on_substep(&mut self, t: f64, x: &[f64]) -> Result<bool, EvalError> {
        let m = self.spec.membership(x)?;
        if !m.in_c {
            self.violation = Some((t, x.to_vec()));
            return Ok(true);
        }
        Ok(false)
    }

    /// Measured state at sampling instant `i`; returns `true` when goal
    /// entry is confirmed (strict threshold, no slack).
    pub fn on_sample(&mut self, i: usize, t: f64, x_hat: &[f64]) -> Result<bool, EvalError> {
        if self.spec.h_c.eval_values(x_hat)? <= 0.0 {
            self.measured_violations.push(i);
        }
        if self.spec.h_g.eval_values(x_hat)? > self.thresholds.t1 {
            self.confirm = Some((Some(i), t));
            return Ok(true);
        }
        Ok(false)
    }

    /// Exact-state confirmation for runs without measurements.
    pub fn on_exact_state_goal_check(&mut self, t: f64, x: &[f64]) -> Result<bool, EvalError> {
        if self.spec.h_g.eval_values(x)? > self.thresholds.t1 {
            self.confirm = Some((None, t));
            return Ok(true);
        }
        Ok(false)
    }

    pub fn into_outcome(self) -> ReachAvoidOutcome {
        let kind = if self.violation.is_some() {
            OutcomeKind::SafetyViolated
        } else if self.confirm.is_some() {
            OutcomeKind::GoalConfirmed
        } else {
            OutcomeKind::Inconclusive
        };
        ReachAvoidOutcome {
            kind,
            confirm_index: self.confirm.as_ref().and_then(|(i, _)| *i),
            confirm_time: self.confirm.as_ref().map(|(_, t)| *t),
            violation_time: self.violation.as_ref().map(|(t, _)| *t),
            violation_state: self.violation.map(|(_, x)| x),
            measured_safety_violations: self.measured_violations,
        }
    }
}

/// One sampling event of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Sample {
    pub index: usize,
    pub time: f64,
    pub exact: Vec<f64>,
    pub measured: Vec<f64>,
    /// `clamp(k(measured))`, held until the next sample.
    pub control: Vec<f64>,
}

/// Time-stamped record of one run at substep resolution.
#[derive(Debug, Clone, Serialize)]
pub struct SampledTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control in effect from `times[r]` on (staircase for sampled runs).
    pub controls: Vec<Vec<f64>>,
    pub samples: Vec<Sample>,
    pub substeps: usize,
    pub outcome: ReachAvoidOutcome,
    pub clamp_fired: bool,
    pub seed: u64,
}

fn check_initial_state(spec: &SystemSpec, x0: &[f64]) -> Result<(), SimError> {
    let m = spec.membership(x0)?;
    if !m.in_c {
        return Err(SimError::InitialStateOutsideSafeSet { h_c: m.h_c });
    }
    Ok(())
}

fn ensure_finite(x: &[f64], t: f64) -> Result<(), SimError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SimError::NonFiniteState { t })
    }
}

/// Integrate the continuous closed loop `ẋ = f + g·clamp(k(x))` over
/// `[0, horizon]`, the `Δ → 0` reference that sampled runs are compared
/// against. Confirmation uses exact states.
pub fn simulate_closed_loop(
    spec: &SystemSpec,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    thresholds: &GoalThresholds,
) -> Result<SampledTrajectory, SimError> {
    if dt <= 0.0 {
        return Err(SimError::InvalidParameter("dt must be positive".into()));
    }
    check_initial_state(spec, x0)?;
    let mut monitor = Monitor::new(spec, *thresholds);
    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let (u0, mut clamp_fired) = spec.clamped_controller(&x)?;
    let mut controls = vec![u0];

    let mut stop = monitor.on_exact_state_goal_check(0.0, &x)?;
    let mut step: u64 = 0;
    while !stop {
        let t = step as f64 * dt;
        if t + dt > horizon + 1e-12 {
            break;
        }
        let next = rk4_field(t, &x, dt, |_, y| {
            let (u, fired) = spec.clamped_controller(y)?;
            if fired {
                clamp_fired = true;
            }
            Ok(spec.dynamics(y, &u)?)
        })?;
        step += 1;
        let t_next = step as f64 * dt;
        ensure_finite(&next, t_next)?;
        x = next;
        let (u, fired) = spec.clamped_controller(&x)?;
        clamp_fired |= fired;
        times.push(t_next);
        states.push(x.clone());
        controls.push(u);
        if monitor.on_substep(t_next, &x)? {
            break;
        }
        stop = monitor.on_exact_state_goal_check(t_next, &x)?;
    }

    Ok(SampledTrajectory {
        times,
        states,
        controls,
        samples: Vec::new(),
        substeps: 1,
        outcome: monitor.into_outcome(),
        clamp_fired,
        seed: 0,
    })
}

/// Integrate the sampled-data loop: measure at `tᵢ = iΔ`, hold
/// `clamp(k(x̂ᵢ))` for one period, monitor online. Stops at confirmation,
/// violation, or the horizon.
pub fn simulate_sampled(
    spec: &SystemSpec,
    x0: &[f64],
    horizon: f64,
    substeps: usize,
    noise: NoiseModel,
    seed: u64,
    thresholds: &GoalThresholds,
) -> Result<SampledTrajectory, SimError> {
    if spec.delta <= 0.0 {
        return Err(SimError::ZeroSamplingPeriod);
    }
    if substeps == 0 {
        return Err(SimError::InvalidParameter("substeps must be at least 1".into()));
    }
    check_initial_state(spec, x0)?;

    let delta = spec.delta;
    let dt = delta / substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut monitor = Monitor::new(spec, *thresholds);

    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut controls: Vec<Vec<f64>> = vec![vec![0.0; spec.control_dim()]];
    let mut samples = Vec::new();
    let mut clamp_fired = false;

    let mut i: usize = 0;
    loop {
        let t_i = i as f64 * delta;
        let x_hat = measure(&x, spec.epsilon, noise, &mut rng);
        debug_assert!(norm(&x_hat.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()) <= spec.epsilon);
        let (u, fired) = spec.clamped_controller(&x_hat)?;
        clamp_fired |= fired;
        samples.push(Sample {
            index: i,
            time: t_i,
            exact: x.clone(),
            measured: x_hat.clone(),
            control: u.clone(),
        });
        *controls.last_mut().expect("at least the initial row") = u.clone();
        if monitor.on_sample(i, t_i, &x_hat)? {
            break;
        }
        if t_i + delta > horizon + 1e-12 {
            break;
        }
        let mut violated = false;
        for s in 1..=substeps {
            let next = rk4_step(spec, &x, &u, dt)?;
            let t = t_i + s as f64 * dt;
            ensure_finite(&next, t)?;
            x = next;
            times.push(t);
            states.push(x.clone());
            controls.push(u.clone());
            if monitor.on_substep(t, &x)? {
                violated = true;
                break;
            }
        }
        if violated {
            break;
        }
        i += 1;
    }

    Ok(SampledTrajectory {
        times,
        states,
        controls,
        samples,
        substeps,
        outcome: monitor.into_outcome(),
        clamp_fired,
        seed,
    })
}

/// Bounded perturbation signal `d(t)` with `‖d(t)‖ ≤ dbar` guaranteed by
/// radial clipping.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbationSpec {
    pub dbar: f64,
    pub signal: PerturbSignal,
}

#[derive(Debug, Clone, Serialize)]
pub enum PerturbSignal {
    Constant(Vec<f64>),
    /// `d_j(t) = amplitude_j · sin(2π · frequency_j · t)`.
    Sinusoid { amplitude: Vec<f64>, frequency: Vec<f64> },
    /// Redrawn uniformly in the `dbar`-ball every `dwell` seconds; a pure
    /// function of `(seed, ⌊t/dwell⌋)` so stage-time evaluation is exact.
    PiecewiseConstant { dwell: f64, seed: u64 },
}

impl PerturbationSpec {
    /// Evaluate (and clip) the signal at time `t`.
    pub fn at(&self, t: f64, m: usize) -> Vec<f64> {
        let mut d = match &self.signal {
            PerturbSignal::Constant(v) => v.clone(),
            PerturbSignal::Sinusoid { amplitude, frequency } => amplitude
                .iter()
                .zip(frequency)
                .map(|(a, f)| a * (std::f64::consts::TAU * f * t).sin())
                .collect(),
            PerturbSignal::PiecewiseConstant { dwell, seed } => {
                let segment = (t / dwell).floor().max(0.0) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(segment.wrapping_add(1));
                let mut dir: Vec<f64> = (0..m).map(|_| standard_normal(&mut rng)).collect();
                let dn = norm(&dir);
                if dn == 0.0 {
                    vec![0.0; m]
                } else {
                    let r = self.dbar * rng.random::<f64>();
                    dir.iter_mut().for_each(|x| *x *= r / dn);
                    dir
                }
            }
        };
        d.resize(m, 0.0);
        let n = norm(&d);
        if n > self.dbar {
            let s = if self.dbar == 0.0 { 0.0 } else { self.dbar / n };
            d.iter_mut().for_each(|x| *x *= s);
        }
        d
    }
}

/// Integrate the explicitly perturbed closed loop
/// `ẋ = f + g·(k(x) + d(t))` and monitor with exact-state thresholds
/// (`ε = 0`): this is the robustness route — any admissible perturbation,
/// sampling mismatch included, is covered by the margin.
pub fn simulate_perturbed(
    spec: &SystemSpec,
    x0: &[f64],
    pert: &PerturbationSpec,
    horizon: f64,
    dt: f64,
) -> Result<SampledTrajectory, SimError> {
    if dt <= 0.0 {
        return Err(SimError::InvalidParameter("dt must be positive".into()));
    }
    check_initial_state(spec, x0)?;
    let m = spec.control_dim();
    let mut monitor = Monitor::new(spec, GoalThresholds::exact());
    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let u0: Vec<f64> = {
        let k = spec.controller(&x)?;
        k.iter().zip(pert.at(0.0, m)).map(|(kj, dj)| kj + dj).collect()
    };
    let mut controls = vec![u0];

    let mut stop = monitor.on_exact_state_goal_check(0.0, &x)?;
    let mut step: u64 = 0;
    while !stop {
        let t = step as f64 * dt;
        if t + dt > horizon + 1e-12 {
            break;
        }
        let next = rk4_field(t, &x, dt, |tau, y| {
            let k = spec.controller(y)?;
            let d = pert.at(tau, m);
            let u: Vec<f64> = k.iter().zip(&d).map(|(kj, dj)| kj + dj).collect();
            Ok(spec.dynamics(y, &u)?)
        })?;
        step += 1;
        let t_next = step as f64 * dt;
        ensure_finite(&next, t_next)?;
        x = next;
        let k = spec.controller(&x)?;
        let d = pert.at(t_next, m);
        times.push(t_next);
        states.push(x.clone());
        controls.push(k.iter().zip(&d).map(|(kj, dj)| kj + dj).collect());
        if monitor.on_substep(t_next, &x)? {
            break;
        }
        stop = monitor.on_exact_state_goal_check(t_next, &x)?;
    }

    Ok(SampledTrajectory {
        times,
        states,
        controls,
        samples: Vec::new(),
        substeps: 1,
        outcome: monitor.into_outcome(),
        clamp_fired: false,
        seed: 0,
    })
}

/// Uniform rejection sampler over `C` (within the domain box).
pub fn sample_initial_state(spec: &SystemSpec, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SimError> {
    const MAX_ATTEMPTS: usize = 1_000_000;
    let bx = &spec.domain_box;
    let n = spec.state_dim();
    for _ in 0..MAX_ATTEMPTS {
        let x: Vec<f64> = (0..n)
            .map(|a| bx.lower[a] + (bx.upper[a] - bx.lower[a]) * rng.random::<f64>())
            .collect();
        if spec.membership(&x)?.in_c {
            return Ok(x);
        }
    }
    Err(SimError::SamplerExhausted {
        attempts: MAX_ATTEMPTS,
    })
}

/// Hitting-time spread of the confirmed runs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Aggregate outcome of a seeded batch.
#[derive(Debug, Clone, Serialize)]
pub struct BatchStats {
    pub runs: usize,
    pub confirmed: usize,
    pub violated: usize,
    pub inconclusive: usize,
    pub hitting_time_quantiles: Option<Quantiles>,
    pub base_seed: u64,
}

/// Run `n_runs` sampled-data simulations from initial states drawn
/// uniformly over `C`. Per-run seeds are `base_seed + run`, so the batch is
/// deterministic and independent of scheduling.
pub fn batch(
    spec: &SystemSpec,
    n_runs: usize,
    base_seed: u64,
    horizon: f64,
    substeps: usize,
    noise: NoiseModel,
    thresholds: &GoalThresholds,
) -> Result<BatchStats, SimError> {
    if n_runs == 0 {
        return Err(SimError::InvalidParameter("run count must be at least 1".into()));
    }
    let outcomes: Vec<(OutcomeKind, Option<f64>)> = (0..n_runs)
        .into_par_iter()
        .map(|run| -> Result<(OutcomeKind, Option<f64>), SimError> {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
            rng.set_stream(run as u64);
            let x0 = sample_initial_state(spec, &mut rng)?;
            let traj = simulate_sampled(
                spec,
                &x0,
                horizon,
                substeps,
                noise,
                base_seed.wrapping_add(run as u64),
                thresholds,
            )?;
            Ok((traj.outcome.kind, traj.outcome.confirm_time))
        })
        .collect::<Result<_, _>>()?;

    let confirmed = outcomes
        .iter()
        .filter(|(k, _)| *k == OutcomeKind::GoalConfirmed)
        .count();
    let violated = outcomes
        .iter()
        .filter(|(k, _)| *k == OutcomeKind::SafetyViolated)
        .count();
    let inconclusive = n_runs - confirmed - violated;

    let mut hits: Vec<f64> = outcomes.iter().filter_map(|(_, t)| *t).collect();
    hits.sort_by(|a, b| a.partial_cmp(b).expect("finite hitting times"));
    let quantiles = if hits.is_empty() {
        None
    } else {
        let q = |p: f64| hits[((hits.len() - 1) as f64 * p).round() as usize];
        Some(Quantiles {
            min: hits[0],
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: hits[hits.len() - 1],
        })
    };

    Ok(BatchStats {
        runs: n_runs,
        confirmed,
        violated,
        inconclusive,
        hitting_time_quantiles: quantiles,
        base_seed,
    })
}

/// Write the substep-resolution CSV:
/// `t, x_1..x_n, u_1..u_m, h_C, h_G, is_sample, xhat_1..xhat_n, confirmed`
/// with measured-state columns blank except on sample rows.
pub fn write_trajectory_csv<W: Write>(
    spec: &SystemSpec,
    traj: &SampledTrajectory,
    out: &mut W,
) -> Result<(), SimError> {
    let n = spec.state_dim();
    let m = spec.control_dim();
    write!(out, "t")?;
    for i in 1..=n {
        write!(out, ",x_{i}")?;
    }
    for j in 1..=m {
        write!(out, ",u_{j}")?;
    }
    write!(out, ",h_C,h_G,is_sample")?;
    for i in 1..=n {
        write!(out, ",xhat_{i}")?;
    }
    writeln!(out, ",confirmed")?;

    let confirm_time = traj.outcome.confirm_time;
    let mut next_sample = 0usize;
    for (r, t) in traj.times.iter().enumerate() {
        let x = &traj.states[r];
        let u = &traj.controls[r];
        let h_c = spec.h_c.eval_values(x)?;
        let h_g = spec.h_g.eval_values(x)?;
        let sample = traj
            .samples
            .get(next_sample)
            .filter(|s| s.index * traj.substeps == r);
        write!(out, "{t}")?;
        for xi in x {
            write!(out, ",{xi}")?;
        }
        for uj in u {
            write!(out, ",{uj}")?;
        }
        write!(out, ",{h_c},{h_g},{}", u8::from(sample.is_some()))?;
        match sample {
            Some(s) => {
                for v in &s.measured {
                    write!(out, ",{v}")?;
                }
                next_sample += 1;
            }
            None => {
                for _ in 0..n {
                    write!(out, ",")?;
                }
            }
        }
        let confirmed = confirm_time.map(|ct| *t >= ct).unwrap_or(false);
        writeln!(out, ",{}", u8::from(confirmed))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{resolve_bounds, Grid};
    use crate::certify::goal_thresholds;
    use crate::model::SystemSpec;
    use crate::test_configs::{cruise_json, pendulum_json};

    fn pend() -> SystemSpec {
        SystemSpec::from_json(&pendulum_json(true)).unwrap()
    }

    fn pend_thresholds(spec: &SystemSpec) -> GoalThresholds {
        let grid = Grid::uniform(&spec.domain_box, 10);
        let bounds = resolve_bounds(spec, &grid, 1.0).unwrap();
        goal_thresholds(&bounds, spec)
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        // the cruise v2 subsystem is v2' = -v2
        let spec = SystemSpec::from_json(&cruise_json(true)).unwrap();
        let mut x = vec![7.0, 0.0, 1.0];
        for _ in 0..10 {
            x = rk4_step(&spec, &x, &[0.0], 0.1).unwrap();
        }
        assert!((x[2] - (-1.0f64).exp()).abs() < 1e-6, "v2 = {}", x[2]);
    }

    #[test]
    fn rk4_identity_on_zero_field() {
        let json = pendulum_json(true)
            .replace(r#""f": ["theta_dot", "2*sin(theta)"]"#, r#""f": ["0", "0"]"#)
            .replace(r#""g": [["0"], ["1"]]"#, r#""g": [["0"], ["0"]]"#);
        let spec = SystemSpec::from_json(&json).unwrap();
        let x = rk4_step(&spec, &[0.1, -0.2], &[1.0], 0.05).unwrap();
        assert_eq!(x, vec![0.1, -0.2]);
    }

    #[test]
    fn rk4_single_step_error_is_fifth_order()
    {
        let spec = SystemSpec::from_json(&cruise_json(true)).unwrap();
        let step_err = |dt: f64| {
            let x = rk4_step(&spec, &[7.0, 0.0, 1.0], &[0.0], dt).unwrap();
            (x[2] - (-dt).exp()).abs()
        };
        let e1 = step_err(0.2);
        let e2 = step_err(0.1);
        let ratio = e1 / e2;
        assert!((20.0..45.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn measure_zero_epsilon_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [0.3, -0.1];
        assert_eq!(measure(&x, 0.0, NoiseModel::Ball, &mut rng), x.to_vec());
        assert_eq!(measure(&x, 0.5, NoiseModel::None, &mut rng), x.to_vec());
    }

    #[test]
    fn measure_surface_has_exact_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = [0.0, 0.0];
        let xh = measure(&x, 1e-3, NoiseModel::Surface, &mut rng);
        assert!((norm(&xh) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn measure_is_deterministic_per_seed() {
        let x = [0.1, 0.2, 0.3];
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(
            measure(&x, 0.01, NoiseModel::Ball, &mut a),
            measure(&x, 0.01, NoiseModel::Ball, &mut b)
        );
    }

    #[test]
    fn measurement_bound_holds_across_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = [0.5, -0.5];
        for model in [NoiseModel::Ball, NoiseModel::Surface] {
            for _ in 0..10_000 {
                let xh = measure(&x, 0.001, model, &mut rng);
                let d: Vec<f64> = xh.iter().zip(&x).map(|(a, b)| a - b).collect();
                assert!(norm(&d) <= 0.001);
            }
        }
    }

    #[test]
    fn pendulum_sampled_run_confirms_goal() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let traj =
            simulate_sampled(&spec, &[-0.4, 0.3], 25.0, 10, NoiseModel::Ball, 7, &th).unwrap();
        assert_eq!(traj.outcome.kind, OutcomeKind::GoalConfirmed);
        // Lemma-style soundness: exact state is truly inside the goal set
        let i = traj.outcome.confirm_index.unwrap();
        let s = &traj.samples[i];
        assert!(spec.h_g.eval_values(&s.exact).unwrap() > 0.0);
        assert!(!traj.clamp_fired);
        // every recorded pair obeys the measurement bound
        for s in &traj.samples {
            let d: Vec<f64> = s.exact.iter().zip(&s.measured).map(|(a, b)| a - b).collect();
            assert!(norm(&d) <= spec.epsilon + 1e-15);
        }
    }

    #[test]
    fn sampled_run_is_bit_identical_per_seed() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let a = simulate_sampled(&spec, &[-0.4, 0.3], 25.0, 10, NoiseModel::Ball, 9, &th).unwrap();
        let b = simulate_sampled(&spec, &[-0.4, 0.3], 25.0, 10, NoiseModel::Ball, 9, &th).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(
            a.samples.iter().map(|s| &s.measured).collect::<Vec<_>>(),
            b.samples.iter().map(|s| &s.measured).collect::<Vec<_>>()
        );
    }

    #[test]
    fn initial_state_outside_c_is_rejected() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let err = simulate_sampled(&spec, &[0.5, 0.4], 1.0, 10, NoiseModel::None, 0, &th)
            .unwrap_err();
        assert!(matches!(err, SimError::InitialStateOutsideSafeSet { .. }));
    }

    #[test]
    fn start_inside_goal_confirms_at_time_zero() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let traj = simulate_sampled(&spec, &[0.0, 0.0], 1.0, 10, NoiseModel::None, 0, &th).unwrap();
        assert_eq!(traj.outcome.kind, OutcomeKind::GoalConfirmed);
        assert_eq!(traj.outcome.confirm_index, Some(0));
        assert_eq!(traj.outcome.confirm_time, Some(0.0));
    }

    #[test]
    fn inadmissible_constant_control_violates_between_samples() {
        // drive the pendulum with a constant full-torque control; the exact
        // state exits C strictly between sampling instants
        let json = pendulum_json(true).replace(
            r#""k": ["-2*theta - 2*sin(theta) - 2*theta_dot"]"#,
            r#""k": ["2.6"]"#,
        );
        let spec = SystemSpec::from_json(&json).unwrap();
        let th = pend_thresholds(&pend());
        let traj =
            simulate_sampled(&spec, &[0.05, 0.4], 5.0, 10, NoiseModel::None, 3, &th).unwrap();
        assert_eq!(traj.outcome.kind, OutcomeKind::SafetyViolated);
        let t_v = traj.outcome.violation_time.unwrap();
        let phase = (t_v / spec.delta).fract();
        assert!(phase > 1e-9 && phase < 1.0 - 1e-9, "violation at sample instant {t_v}");
        // all samples recorded strictly before the violation stayed in C
        for s in &traj.samples {
            if s.time < t_v {
                assert!(spec.h_c.eval_values(&s.exact).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn monitor_threshold_is_strict() {
        let spec = pend();
        let th = GoalThresholds {
            t1: 0.0014832,
            t2: 2.0 * 0.0014832,
            t_hat: 0.0189,
        };
        let mut mon = Monitor::new(&spec, th);
        // measured h_G exactly at t1: 0.05 - thd^2 = t1
        let thd = (0.05f64 - th.t1).sqrt();
        assert!(!mon.on_sample(0, 0.0, &[0.0, thd]).unwrap());
        // a hair inside confirms
        let thd = (0.05f64 - th.t1 - 1e-12).sqrt();
        assert!(mon.on_sample(1, 0.003, &[0.0, thd]).unwrap());
    }

    #[test]
    fn perturbed_with_zero_signal_matches_closed_loop() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let pert = PerturbationSpec {
            dbar: 0.0,
            signal: PerturbSignal::Constant(vec![0.0]),
        };
        let a = simulate_perturbed(&spec, &[-0.4, 0.3], &pert, 2.0, 1e-3).unwrap();
        let b = simulate_closed_loop(&spec, &[-0.4, 0.3], 2.0, 1e-3, &th).unwrap();
        // clamp never fires on this trajectory, so the loops coincide
        let rows = a.states.len().min(b.states.len());
        for r in 0..rows {
            for i in 0..2 {
                assert!((a.states[r][i] - b.states[r][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oversized_sinusoid_is_clipped_to_zero() {
        let pert = PerturbationSpec {
            dbar: 0.0,
            signal: PerturbSignal::Sinusoid {
                amplitude: vec![5.0],
                frequency: vec![1.0],
            },
        };
        for t in [0.1, 0.37, 2.2] {
            assert_eq!(pert.at(t, 1), vec![0.0]);
        }
    }

    #[test]
    fn piecewise_constant_signal_respects_bound_and_dwell() {
        let pert = PerturbationSpec {
            dbar: 0.05,
            signal: PerturbSignal::PiecewiseConstant { dwell: 0.5, seed: 11 },
        };
        let within = pert.at(0.1, 2);
        let same_segment = pert.at(0.3, 2);
        assert_eq!(within, same_segment);
        for t in [0.0, 0.49, 0.51, 3.7] {
            assert!(norm(&pert.at(t, 2)) <= 0.05 + 1e-15);
        }
    }

    #[test]
    fn closed_loop_reference_reaches_goal_inside_c() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let traj = simulate_closed_loop(&spec, &[-0.4, 0.3], 5.0, 1e-4, &th).unwrap();
        assert_eq!(traj.outcome.kind, OutcomeKind::GoalConfirmed);
        for x in &traj.states {
            assert!(spec.h_c.eval_values(x).unwrap() > 0.0);
        }
        assert!(traj.samples.is_empty());
    }

    #[test]
    fn perturbed_runs_inside_certified_bound_all_confirm() {
        // d-bar = margin / gamma; any signal within it keeps the guarantee
        let spec = pend();
        for seed in 0..50 {
            let pert = PerturbationSpec {
                dbar: 0.0528,
                signal: PerturbSignal::PiecewiseConstant { dwell: 0.05, seed },
            };
            let traj = simulate_perturbed(&spec, &[-0.4, 0.3], &pert, 25.0, 1e-3).unwrap();
            assert_eq!(traj.outcome.kind, OutcomeKind::GoalConfirmed, "seed {seed}");
            for x in &traj.states {
                assert!(spec.h_c.eval_values(x).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn zoh_deviation_shrinks_as_delta_vanishes() {
        // eps = 0: the sampled loop converges to the continuous reference
        let spec = pend();
        let th = pend_thresholds(&spec);
        let mut prev = f64::INFINITY;
        for delta in [1e-2, 1e-3, 1e-4] {
            let varied = spec.with_parameters(Some(delta), Some(0.0), None).unwrap();
            let dt = delta / 10.0;
            let sampled = simulate_sampled(
                &varied,
                &[-0.4, 0.3],
                1.0 + delta,
                10,
                NoiseModel::None,
                0,
                &GoalThresholds { t1: f64::INFINITY, t2: f64::INFINITY, t_hat: f64::INFINITY }, // never confirm
            )
            .unwrap();
            let reference = simulate_closed_loop(
                &varied,
                &[-0.4, 0.3],
                1.0 + dt,
                dt,
                &GoalThresholds { t1: f64::INFINITY, t2: f64::INFINITY, t_hat: f64::INFINITY },
            )
            .unwrap();
            let rows = sampled.states.len().min(reference.states.len());
            let mut dev = 0.0f64;
            for r in 0..rows {
                let d: f64 = sampled.states[r]
                    .iter()
                    .zip(&reference.states[r])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                dev = dev.max(d);
            }
            assert!(dev < prev, "delta {delta}: deviation {dev} did not shrink from {prev}");
            prev = dev;
        }
    }

    #[test]
    fn control_is_held_constant_between_samples() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let traj =
            simulate_sampled(&spec, &[-0.4, 0.3], 0.1, 10, NoiseModel::Ball, 4, &th).unwrap();
        for (r, u) in traj.controls.iter().enumerate() {
            let interval = r / traj.substeps;
            assert_eq!(
                u, &traj.samples[interval].control,
                "row {r} does not hold the control of interval {interval}"
            );
        }
    }

    #[test]
    fn batch_is_deterministic_and_counts_add_up() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let a = batch(&spec, 16, 5, 25.0, 10, NoiseModel::Ball, &th).unwrap();
        let b = batch(&spec, 16, 5, 25.0, 10, NoiseModel::Ball, &th).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.runs, a.confirmed + a.violated + a.inconclusive);
        assert_eq!(a.confirmed, 16);
    }

    #[test]
    fn single_run_batch_equals_that_run() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let stats = batch(&spec, 1, 123, 25.0, 10, NoiseModel::Ball, &th).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        rng.set_stream(0);
        let x0 = sample_initial_state(&spec, &mut rng).unwrap();
        let traj = simulate_sampled(&spec, &x0, 25.0, 10, NoiseModel::Ball, 123, &th).unwrap();
        assert_eq!(stats.confirmed, 1);
        let q = stats.hitting_time_quantiles.unwrap();
        assert_eq!(q.min, traj.outcome.confirm_time.unwrap());
        assert_eq!(q.min, q.max);
    }

    #[test]
    fn trajectory_csv_has_contracted_columns() {
        let spec = pend();
        let th = pend_thresholds(&spec);
        let traj =
            simulate_sampled(&spec, &[-0.4, 0.3], 25.0, 10, NoiseModel::Ball, 7, &th).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&spec, &traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x_1,x_2,u_1,h_C,h_G,is_sample,xhat_1,xhat_2,confirmed"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,"));
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields.len(), 10);
        assert_eq!(fields[6], "1"); // t = 0 is a sample row
        assert!(!fields[7].is_empty());
        // substep rows leave the measured-state columns blank
        let second: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(second[6], "0");
        assert!(second[7].is_empty() && second[8].is_empty());
        // final row is the confirming sample
        let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
        assert_eq!(last[9], "1");
    }
}
