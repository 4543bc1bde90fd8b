//! Semi-implicit time stepping of `u_t = div(Du/v) - H(x, Du)`.
//!
//! Each step freezes `v` at the current iterate and solves
//! `(M/dt + K(u^n)) u^{n+1} = (M/dt) u^n + b - f_H(u^n)` for the increment.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::AngleProfile;
use crate::operators::{area_elements, boundary_flux_vector, forcing_vector, ForcingModel, P1Space, ScalarField};
use crate::sparse::{conjugate_gradient, CsrMatrix};
use crate::vec2::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Re-freezings of `v` per step, 1..=5.
    pub picard_iterations: usize,
    pub linear_tol: f64,
    pub max_linear_iterations: usize,
    /// Keep every k-th step as a snapshot (the first and last step are always
    /// kept). Zero keeps only those.
    pub snapshot_every: usize,
    /// Stop once `int (u_t - mean u_t)^2 dx` drops below this.
    pub stagnation_threshold: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 1e-3,
            t_end: 1.0,
            picard_iterations: 1,
            linear_tol: 1e-12,
            max_linear_iterations: 5000,
            snapshot_every: 100,
            stagnation_threshold: Some(1e-12),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::BadSpec(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::BadSpec(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if !(1..=5).contains(&self.picard_iterations) {
            return Err(Error::BadSpec(format!("picard_iterations must be in 1..=5, got {}", self.picard_iterations)));
        }
        if !(self.linear_tol > 0.0 && self.linear_tol <= 1e-6) {
            return Err(Error::BadSpec(format!("linear_tol must be in (0, 1e-6], got {}", self.linear_tol)));
        }
        if self.max_linear_iterations == 0 {
            return Err(Error::BadSpec("max_linear_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps to reach `t_end`, rounding to the nearest step.
    pub fn step_count(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Mesh, contact angle and forcing shared by all steps of a run.
pub struct FlowProblem<'a> {
    pub space: &'a P1Space,
    pub alpha: &'a AngleProfile,
    pub model: &'a dyn ForcingModel,
    flux: Vec<f64>,
    /// `f_H` at `p = 0`, used in the energy.
    forcing_x: Vec<f64>,
}

impl<'a> FlowProblem<'a> {
    pub fn new(space: &'a P1Space, alpha: &'a AngleProfile, model: &'a dyn ForcingModel) -> Self {
        let flux = boundary_flux_vector(space, alpha);
        let forcing_x = forcing_vector(space, &vec![[0.0, 0.0]; space.triangle_count()], model);
        FlowProblem { space, alpha, model, flux, forcing_x }
    }

    pub fn flux(&self) -> &[f64] {
        &self.flux
    }

    /// Discrete `oint cos(alpha) ds - int H dx` for `H = H(x)`.
    pub fn mass_rate(&self) -> f64 {
        self.flux.iter().sum::<f64>() - self.forcing_x.iter().sum::<f64>()
    }

    /// Discrete speed `(sum b - sum f_H) / sum m` for `H = H(x)`.
    pub fn discrete_speed(&self) -> f64 {
        self.mass_rate() / self.space.total_mass()
    }

    /// `E(u) = int v dx - oint u cos(alpha) ds + int u H(x) dx`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let du = self.space.triangle_gradients(u);
        self.energy_with(u, &du)
    }

    fn energy_with(&self, u: &[f64], du: &[Vec2]) -> f64 {
        let surface: f64 = area_elements(du).iter().zip(self.space.areas()).map(|(v, a)| v * a).sum();
        let mut rest = 0.0;
        for i in 0..u.len() {
            rest += (self.forcing_x[i] - self.flux[i]) * u[i];
        }
        surface + rest
    }
}

/// One row of the monitor series, recorded at every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorRow {
    pub step: usize,
    pub t: f64,
    pub sup_v: f64,
    pub min_ut: Option<f64>,
    pub max_ut: Option<f64>,
    pub mass: f64,
    pub energy: f64,
    /// `int u_t^2 dx`, zero at step 0.
    pub dissipation: f64,
    /// `int (u_t - mean u_t)^2 dx`.
    pub adjusted_dissipation: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Mass predicted by the discrete divergence theorem.
    pub predicted_mass: f64,
    pub linear_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub u: ScalarField,
    /// `(u^n - u^{n-1}) / dt`, absent at step 0.
    pub ut: Option<ScalarField>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowTrajectory {
    pub dt: f64,
    pub h: f64,
    pub snapshots: Vec<Snapshot>,
    pub monitors: Vec<MonitorRow>,
    /// True when the stagnation threshold stopped the run early.
    pub converged: bool,
}

impl FlowTrajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory holds at least u0")
    }

    pub fn steps(&self) -> usize {
        self.monitors.last().map_or(0, |m| m.step)
    }

    pub fn snapshot_at(&self, step: usize) -> Option<&Snapshot> {
        self.snapshots.binary_search_by_key(&step, |s| s.step).ok().map(|k| &self.snapshots[k])
    }
}

/// Advances one run step by step; [`evolve`] drives it to `t_end`.
pub struct Stepper<'p, 'a> {
    problem: &'p FlowProblem<'a>,
    cfg: FlowConfig,
    u: Vec<f64>,
    ut: Option<Vec<f64>>,
    du: Vec<Vec2>,
    delta: Vec<f64>,
    step: usize,
    predicted_mass: f64,
    last_iterations: usize,
}

impl<'p, 'a> Stepper<'p, 'a> {
    pub fn new(problem: &'p FlowProblem<'a>, u0: &ScalarField, cfg: &FlowConfig) -> Result<Self> {
        cfg.validate()?;
        let n = problem.space.node_count();
        if u0.len() != n {
            return Err(Error::MeshMismatch(format!("initial field has {} values, mesh has {n} nodes", u0.len())));
        }
        if let Some(node) = u0.first_non_finite() {
            return Err(Error::NonFiniteField { node });
        }
        let du = problem.space.triangle_gradients(&u0.values);
        Ok(Stepper {
            problem,
            cfg: cfg.clone(),
            u: u0.values.clone(),
            ut: None,
            du,
            delta: vec![0.0; n],
            step: 0,
            predicted_mass: problem.space.integrate(&u0.values),
            last_iterations: 0,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn ut(&self) -> Option<&[f64]> {
        self.ut.as_deref()
    }

    pub fn advance(&mut self) -> Result<()> {
        let space = self.problem.space;
        let dt = self.cfg.dt;
        let m = space.lumped_mass();
        let f = forcing_vector(space, &self.du, self.problem.model);
        self.predicted_mass += dt * (self.problem.flux.iter().sum::<f64>() - f.iter().sum::<f64>());

        let mut frozen = self.u.clone();
        let mut frozen_du = self.du.clone();
        let mut iterations = 0;
        for _ in 0..self.cfg.picard_iterations {
            let weights: Vec<f64> = area_elements(&frozen_du).iter().map(|v| 1.0 / v).collect();
            let k = space.weighted_stiffness(&weights);
            let a = k.plus_diagonal(1.0 / dt, m);
            let rhs = increment_rhs(&k, &self.problem.flux, &f, &self.u);
            let stats = conjugate_gradient(&a, &rhs, &mut self.delta, self.cfg.linear_tol, self.cfg.max_linear_iterations)?;
            iterations += stats.iterations;
            frozen = self.u.iter().zip(&self.delta).map(|(u, d)| u + d).collect();
            if self.cfg.picard_iterations > 1 {
                frozen_du = space.triangle_gradients(&frozen);
            }
        }
        if let Some(node) = frozen.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteField { node });
        }
        self.ut = Some(self.delta.iter().map(|d| d / dt).collect());
        self.u = frozen;
        self.du = space.triangle_gradients(&self.u);
        self.step += 1;
        self.last_iterations = iterations;
        Ok(())
    }

    pub fn monitor(&self) -> MonitorRow {
        let space = self.problem.space;
        let m = space.lumped_mass();
        let v = area_elements(&self.du);
        let sup_v = v.iter().copied().fold(1.0, f64::max);
        let (min_ut, max_ut, dissipation, adjusted) = match &self.ut {
            Some(ut) => {
                let total: f64 = m.iter().sum();
                let mean = space.integrate(ut) / total;
                let diss: f64 = ut.iter().zip(m).map(|(x, mi)| mi * x * x).sum();
                let adj: f64 = ut.iter().zip(m).map(|(x, mi)| mi * (x - mean).powi(2)).sum();
                let lo = ut.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ut.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (Some(lo), Some(hi), diss, adj)
            }
            None => (None, None, 0.0, 0.0),
        };
        MonitorRow {
            step: self.step,
            t: self.time(),
            sup_v,
            min_ut,
            max_ut,
            mass: space.integrate(&self.u),
            energy: self.problem.energy_with(&self.u, &self.du),
            dissipation,
            adjusted_dissipation: adjusted,
            u_min: self.u.iter().copied().fold(f64::INFINITY, f64::min),
            u_max: self.u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            predicted_mass: self.predicted_mass,
            linear_iterations: self.last_iterations,
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            step: self.step,
            t: self.time(),
            u: ScalarField::new(self.u.clone()),
            ut: self.ut.as_ref().map(|x| ScalarField::new(x.clone())),
        }
    }
}

/// `b - f - K u`: right-hand side of the increment system.
fn increment_rhs(k: &CsrMatrix, flux: &[f64], forcing: &[f64], u: &[f64]) -> Vec<f64> {
    let ku = k.mul_vec(u);
    (0..u.len()).map(|i| flux[i] - forcing[i] - ku[i]).collect()
}

/// A single step from `u`.
pub fn step(problem: &FlowProblem<'_>, u: &ScalarField, cfg: &FlowConfig) -> Result<ScalarField> {
    let mut s = Stepper::new(problem, u, cfg)?;
    s.advance()?;
    Ok(ScalarField::new(s.u))
}

/// Run to `t_end`, calling `observe` after every step (including step 0).
pub fn evolve_observed(
    problem: &FlowProblem<'_>,
    u0: &ScalarField,
    cfg: &FlowConfig,
    observe: &mut dyn FnMut(&Stepper<'_, '_>),
) -> Result<FlowTrajectory> {
    let mut s = Stepper::new(problem, u0, cfg)?;
    let steps = cfg.step_count();
    let mut traj = FlowTrajectory {
        dt: cfg.dt,
        h: problem.space.mesh().h_target,
        snapshots: vec![s.snapshot()],
        monitors: vec![s.monitor()],
        converged: false,
    };
    observe(&s);
    for n in 1..=steps {
        s.advance()?;
        let row = s.monitor();
        observe(&s);
        let stalled = cfg.stagnation_threshold.is_some_and(|thr| row.adjusted_dissipation < thr);
        let keep = n == 1 || n == steps || stalled || (cfg.snapshot_every > 0 && n % cfg.snapshot_every == 0);
        if keep {
            traj.snapshots.push(s.snapshot());
        }
        traj.monitors.push(row);
        if stalled {
            traj.converged = true;
            break;
        }
    }
    Ok(traj)
}

pub fn evolve(problem: &FlowProblem<'_>, u0: &ScalarField, cfg: &FlowConfig) -> Result<FlowTrajectory> {
    evolve_observed(problem, u0, cfg, &mut |_| {})
}

/// `(u^n - u^{n-1}) / dt` from the snapshot at step `n`.
pub fn time_derivative_field(traj: &FlowTrajectory, n: usize) -> Result<ScalarField> {
    let len = traj.steps() + 1;
    if n == 0 || n >= len {
        return Err(Error::IndexOutOfRange { index: n, len });
    }
    traj.snapshot_at(n)
        .and_then(|s| s.ut.clone())
        .ok_or(Error::IndexOutOfRange { index: n, len: traj.snapshots.len() })
}
