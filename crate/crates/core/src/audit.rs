//! Numerical checks of the a priori estimates on concrete runs.
//!
//! Each audit returns an [`AuditRecord`] carrying the measured quantity, the
//! bound it is compared against and the tolerance used, so a failing record
//! is self-explanatory.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowProblem, FlowTrajectory};
use crate::geometry::{AngleProfile, SupportCurve};
use crate::operators::{area_elements, ForcingModel, P1Space, ScalarField};
use crate::translator::TranslatorSolution;
use crate::vec2::{dot, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditContext {
    pub run: String,
    pub h: f64,
    pub dt: Option<f64>,
}

impl AuditContext {
    pub fn new(run: impl Into<String>, h: f64, dt: Option<f64>) -> Self {
        AuditContext { run: run.into(), h, dt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub audit: String,
    pub measured: f64,
    pub bound: Option<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub context: AuditContext,
    /// Auxiliary numbers, sorted by key.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl AuditRecord {
    /// Verdict `measured <= bound + tolerance`.
    pub fn compare(audit: &str, measured: f64, bound: f64, tolerance: f64, context: &AuditContext) -> Self {
        let pass = measured.is_finite() && measured <= bound + tolerance;
        AuditRecord {
            audit: audit.to_string(),
            measured,
            bound: Some(bound),
            tolerance,
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            context: context.clone(),
            details: BTreeMap::new(),
        }
    }

    pub fn not_applicable(audit: &str, measured: f64, context: &AuditContext) -> Self {
        AuditRecord {
            audit: audit.to_string(),
            measured,
            bound: None,
            tolerance: 0.0,
            verdict: Verdict::NotApplicable,
            context: context.clone(),
            details: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    /// Downgrade to a failure when an extra predicate does not hold.
    pub fn require(mut self, ok: bool) -> Self {
        if !ok && self.verdict == Verdict::Pass {
            self.verdict = Verdict::Fail;
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

/// Where the time-derivative bound `c_1` comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssumptionInput<'a> {
    /// A translator with known speed: `u_t = C` for all time.
    Speed(f64),
    /// The discrete `u_t` at the first step of a run.
    FirstStep(&'a [f64]),
    /// A known value of `sup |u_t(., 0)|`.
    UtSup(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub min_k: f64,
    pub max_k: f64,
    pub max_dt_alpha: f64,
    pub min_alpha: f64,
    pub max_alpha: f64,
    /// `min sin(alpha)` over the boundary.
    pub min_sin_alpha: f64,
    /// Sampled `sup |H(x, p)|`.
    pub sup_h: f64,
    /// `sup |u_t(., 0)| + sup |H|`.
    pub c1: f64,
    /// `sup |C + H(x, p)|`, when a speed is known.
    pub c0: Option<f64>,
    /// `min (k - |D_T alpha| - c1)` over the boundary, pointwise.
    pub delta0: f64,
    /// Same with `c0` in place of `c1`.
    pub delta0_c0: Option<f64>,
    /// `max (k + k / sin alpha) / delta0`; infinite when `delta0 <= 0`.
    pub gradient_bound: f64,
    /// Radius of the gradient ball used for sampling `H`.
    pub p_radius: f64,
    /// Sampled `min p . H_x(x, p)`.
    pub min_p_dot_hx: f64,
    pub hypothesis_satisfied: bool,
}

const BOUNDARY_SAMPLES: usize = 720;

fn interior_samples(curve: &SupportCurve) -> Vec<Vec2> {
    let n = 64;
    let centre = {
        let mut c = [0.0, 0.0];
        for j in 0..n {
            let p = curve.point(std::f64::consts::TAU * j as f64 / n as f64);
            c[0] += p[0] / n as f64;
            c[1] += p[1] / n as f64;
        }
        c
    };
    let mut pts = vec![centre];
    for j in 0..32 {
        let b = curve.point(std::f64::consts::TAU * j as f64 / 32.0);
        for k in 1..=4 {
            let s = k as f64 / 4.0;
            pts.push([centre[0] + s * (b[0] - centre[0]), centre[1] + s * (b[1] - centre[1])]);
        }
    }
    pts
}

fn gradient_samples(radius: f64) -> Vec<Vec2> {
    let mut ps = vec![[0.0, 0.0]];
    if radius > 0.0 && radius.is_finite() {
        for j in 0..16 {
            let th = std::f64::consts::TAU * j as f64 / 16.0;
            for k in 1..=4 {
                let r = radius * k as f64 / 4.0;
                ps.push([r * th.cos(), r * th.sin()]);
            }
        }
    }
    ps
}

/// Boundary curvature, angle and forcing quantities entering the gradient
/// estimate, with the resulting bound `B`.
pub fn audit_assumptions(
    curve: &SupportCurve,
    alpha: &AngleProfile,
    model: &dyn ForcingModel,
    input: AssumptionInput<'_>,
) -> AssumptionReport {
    let thetas: Vec<f64> = (0..BOUNDARY_SAMPLES)
        .map(|j| std::f64::consts::TAU * j as f64 / BOUNDARY_SAMPLES as f64)
        .collect();
    let k: Vec<f64> = thetas.iter().map(|&t| curve.curvature(t)).collect();
    let dta: Vec<f64> = thetas.iter().map(|&t| alpha.tangential_derivative(curve, t).abs()).collect();
    let al: Vec<f64> = thetas.iter().map(|&t| alpha.value(t)).collect();
    let sin_al: Vec<f64> = al.iter().map(|a| a.sin()).collect();

    let ut_sup = match input {
        AssumptionInput::Speed(c) => c.abs(),
        AssumptionInput::FirstStep(ut) => ut.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        AssumptionInput::UtSup(s) => s.abs(),
    };
    let xs = interior_samples(curve);

    let delta_for = |c: f64| k.iter().zip(&dta).map(|(ki, di)| ki - di - c).fold(f64::INFINITY, f64::min);
    let bound_for = |d: f64| {
        if d > 1e-12 {
            k.iter().zip(&sin_al).map(|(ki, si)| (ki + ki / si) / d).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        }
    };
    let sup_h_over = |radius: f64| {
        let ps = gradient_samples(radius);
        let mut sup: f64 = 0.0;
        for x in &xs {
            for p in &ps {
                sup = sup.max(model.value(*x, *p).abs());
            }
        }
        sup
    };

    // For H(x, p) the sampled sup |H| depends on B through |p| <= 2B; two
    // passes settle it for the bounded models used here.
    let mut sup_h = sup_h_over(0.0);
    let mut bound = bound_for(delta_for(ut_sup + sup_h));
    let mut p_radius = 0.0;
    if model.depends_on_gradient() {
        for _ in 0..2 {
            p_radius = if bound.is_finite() { 2.0 * bound } else { 0.0 };
            sup_h = sup_h_over(p_radius);
            bound = bound_for(delta_for(ut_sup + sup_h));
        }
    } else if bound.is_finite() {
        p_radius = 2.0 * bound;
    }
    let c1 = ut_sup + sup_h;
    let delta0 = delta_for(c1);

    let (c0, delta0_c0) = match input {
        AssumptionInput::Speed(c) => {
            let ps = gradient_samples(p_radius);
            let mut sup: f64 = 0.0;
            for x in &xs {
                for p in &ps {
                    sup = sup.max((c + model.value(*x, *p)).abs());
                }
            }
            (Some(sup), Some(delta_for(sup)))
        }
        AssumptionInput::FirstStep(_) | AssumptionInput::UtSup(_) => (None, None),
    };

    let mut min_phx = f64::INFINITY;
    for x in &xs {
        for p in gradient_samples(p_radius) {
            min_phx = min_phx.min(dot(p, model.grad_x(*x, p)));
        }
    }

    // delta0 > 0 cannot be certified below roundoff in the curvature scale
    let max_k = k.iter().copied().fold(0.0, f64::max);
    let positive = delta0 > 1e-12 * max_k.max(1.0);

    AssumptionReport {
        min_k: k.iter().copied().fold(f64::INFINITY, f64::min),
        max_k,
        max_dt_alpha: dta.iter().copied().fold(0.0, f64::max),
        min_alpha: al.iter().copied().fold(f64::INFINITY, f64::min),
        max_alpha: al.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_sin_alpha: sin_al.iter().copied().fold(f64::INFINITY, f64::min),
        sup_h,
        c1,
        c0,
        delta0,
        delta0_c0,
        gradient_bound: bound,
        p_radius,
        min_p_dot_hx: min_phx,
        hypothesis_satisfied: positive && min_phx >= -1e-12,
    }
}

/// The assumption report as a record: `measured` is `delta0`, and the
/// verdict is not-applicable when the hypothesis fails.
pub fn assumption_record(report: &AssumptionReport, ctx: &AuditContext) -> AuditRecord {
    let mut rec = AuditRecord {
        audit: "assumptions".to_string(),
        measured: report.delta0,
        bound: Some(0.0),
        tolerance: 0.0,
        verdict: if report.hypothesis_satisfied { Verdict::Pass } else { Verdict::NotApplicable },
        context: ctx.clone(),
        details: BTreeMap::new(),
    }
    .with("c1", report.c1)
    .with("min_k", report.min_k)
    .with("max_k", report.max_k)
    .with("max_dt_alpha", report.max_dt_alpha)
    .with("min_alpha", report.min_alpha)
    .with("pi_minus_max_alpha", std::f64::consts::PI - report.max_alpha)
    .with("min_sin_alpha", report.min_sin_alpha)
    .with("sup_h", report.sup_h)
    .with("min_p_dot_hx", report.min_p_dot_hx);
    if report.gradient_bound.is_finite() {
        rec = rec.with("gradient_bound", report.gradient_bound);
    }
    if let (Some(c0), Some(d)) = (report.c0, report.delta0_c0) {
        rec = rec.with("c0", c0).with("delta0_c0", d);
    }
    rec
}

/// `sup v <= B (1 + 0.05)`.
pub fn audit_gradient_bound(sup_v: f64, report: &AssumptionReport, ctx: &AuditContext) -> AuditRecord {
    if !report.hypothesis_satisfied {
        return AuditRecord::not_applicable("gradient_bound", sup_v, ctx).with("delta0", report.delta0);
    }
    let b = report.gradient_bound;
    AuditRecord::compare("gradient_bound", sup_v, b, 0.05 * b, ctx).with("delta0", report.delta0)
}

pub fn trajectory_sup_v(traj: &FlowTrajectory) -> f64 {
    traj.monitors.iter().map(|m| m.sup_v).fold(1.0, f64::max)
}

/// Extremes of the discrete `u_t` against those of the first step.
pub fn audit_ut_extremes(traj: &FlowTrajectory, ctx: &AuditContext) -> AuditRecord {
    let rows: Vec<_> = traj.monitors.iter().filter(|m| m.min_ut.is_some()).collect();
    if rows.is_empty() {
        return AuditRecord::not_applicable("ut_extremes", 0.0, ctx);
    }
    let lo1 = rows[0].min_ut.unwrap();
    let hi1 = rows[0].max_ut.unwrap();
    let hi = rows.iter().map(|m| m.max_ut.unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|m| m.min_ut.unwrap()).fold(f64::INFINITY, f64::min);
    let osc1 = hi1 - lo1;
    let excess = (hi - hi1).max(lo1 - lo).max(0.0);
    let tol = 0.05 * osc1.max(1.0) + 10.0 * (traj.dt + ctx.h * ctx.h);
    AuditRecord::compare("ut_extremes", excess, 0.0, tol, ctx)
        .with("first_max", hi1)
        .with("first_min", lo1)
        .with("first_oscillation", osc1)
        .with("max", hi)
        .with("min", lo)
}

/// `|E(t_N) - E(t_0) + sum dt int u_t^2|` over monitor rows `from..`.
pub fn audit_energy_identity(
    traj: &FlowTrajectory,
    model: &dyn ForcingModel,
    from: usize,
    ctx: &AuditContext,
) -> Result<AuditRecord> {
    if model.depends_on_gradient() {
        return Err(Error::ModelMismatch);
    }
    let rows = &traj.monitors;
    if from >= rows.len() {
        return Err(Error::IndexOutOfRange { index: from, len: rows.len() });
    }
    let window = &rows[from..];
    let e0 = window[0].energy;
    let e1 = window.last().unwrap().energy;
    let dissipated: f64 = window[1..].iter().map(|r| r.dissipation * traj.dt).sum();
    let mismatch = (e1 - e0 + dissipated).abs();
    let tol = 0.02 * dissipated + 1e-12 * (1.0 + e0.abs());
    let span = window.last().unwrap().t - window[0].t;
    let mut rec = AuditRecord::compare("energy_identity", mismatch, 0.0, tol, ctx)
        .with("energy_start", e0)
        .with("energy_end", e1)
        .with("dissipated", dissipated);
    if span > 0.0 {
        rec = rec.with("dissipation_rate", dissipated / span);
    }
    Ok(rec)
}

/// Mass against the discrete divergence theorem at every step.
pub fn audit_mass_law(traj: &FlowTrajectory, space: &P1Space, ctx: &AuditContext) -> AuditRecord {
    let m0 = traj.monitors[0].mass;
    let scale0 = space.integrate(&traj.snapshots[0].u.values.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let mut worst: f64 = 0.0;
    for r in &traj.monitors {
        let change = r.predicted_mass - m0;
        let scale = scale0.max(change.abs()).max(r.mass.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max((r.mass - r.predicted_mass).abs() / scale);
    }
    AuditRecord::compare("mass_law", worst, 0.0, 1e-9, ctx)
}

/// `max - min` of `a - b`.
pub fn difference_oscillation(a: &[f64], b: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, y) in a.iter().zip(b) {
        lo = lo.min(x - y);
        hi = hi.max(x - y);
    }
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Non-increase of an oscillation series with slack `1e-10`, plus
/// contraction to 5% of the initial value when the run reaches `t >= 20`.
pub fn audit_oscillation_series(times: &[f64], osc: &[f64], ctx: &AuditContext) -> AuditRecord {
    let mut worst: f64 = 0.0;
    let mut running_min = f64::INFINITY;
    let mut violations = 0usize;
    for &o in osc {
        if o - running_min > 1e-10 {
            violations += 1;
        }
        worst = worst.max(o - running_min);
        running_min = running_min.min(o);
    }
    let first = osc.first().copied().unwrap_or(0.0);
    let last = osc.last().copied().unwrap_or(0.0);
    let t_end = times.last().copied().unwrap_or(0.0);
    let contracted = t_end < 20.0 || last <= 0.05 * first;
    AuditRecord::compare("oscillation", worst.max(0.0), 0.0, 1e-10, ctx)
        .with("initial", first)
        .with("final", last)
        .with("violations", violations as f64)
        .require(contracted)
}

/// Oscillation of `u_A - u_B` over the snapshots both runs kept.
pub fn audit_oscillation(a: &FlowTrajectory, b: &FlowTrajectory, ctx: &AuditContext) -> Result<AuditRecord> {
    if a.dt != b.dt || a.h != b.h {
        return Err(Error::ConfigMismatch(format!("dt {} vs {}, h {} vs {}", a.dt, b.dt, a.h, b.h)));
    }
    if a.snapshots[0].u.len() != b.snapshots[0].u.len() {
        return Err(Error::ConfigMismatch("different node counts".into()));
    }
    let mut times = vec![];
    let mut osc = vec![];
    for s in &a.snapshots {
        if let Some(o) = b.snapshot_at(s.step) {
            times.push(s.t);
            osc.push(difference_oscillation(&s.u.values, &o.u.values));
        }
    }
    Ok(audit_oscillation_series(&times, &osc, ctx))
}

/// Distance of a run from a translator, accumulated step by step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TranslatorComparison {
    pub times: Vec<f64>,
    /// `osc(u - w - C t)`.
    pub oscillation: Vec<f64>,
    /// `||u - C t||_inf`.
    pub drift: Vec<f64>,
    /// `||u - C t - w - kappa||_inf` with `kappa` the mean offset.
    pub distance: Vec<f64>,
}

impl TranslatorComparison {
    pub fn push(&mut self, space: &P1Space, t: f64, u: &[f64], translator: &TranslatorSolution) {
        let c = translator.speed;
        let e: Vec<f64> = u.iter().zip(&translator.w.values).map(|(x, w)| x - w - c * t).collect();
        let kappa = space.integrate(&e) / space.total_mass();
        self.times.push(t);
        self.oscillation.push(difference_oscillation(&e, &vec![0.0; e.len()]));
        self.drift.push(u.iter().fold(0.0f64, |m, x| m.max((x - c * t).abs())));
        self.distance.push(e.iter().fold(0.0f64, |m, x| m.max((x - kappa).abs())));
    }

    pub fn from_trajectory(space: &P1Space, traj: &FlowTrajectory, translator: &TranslatorSolution) -> Result<Self> {
        if translator.w.len() != space.node_count() || traj.snapshots[0].u.len() != space.node_count() {
            return Err(Error::MeshMismatch("translator and trajectory live on different meshes".into()));
        }
        let mut out = TranslatorComparison::default();
        for s in &traj.snapshots {
            out.push(space, s.t, &s.u.values, translator);
        }
        Ok(out)
    }
}

/// `|u - C t| <= c_3` settles over the second half of the run, and the final
/// distance to the translator is within the discretization budget.
pub fn audit_convergence(cmp: &TranslatorComparison, speed: f64, ctx: &AuditContext) -> AuditRecord {
    let n = cmp.times.len();
    if n == 0 {
        return AuditRecord::not_applicable("convergence", 0.0, ctx);
    }
    let t_end = cmp.times[n - 1];
    let mut running = 0.0f64;
    let mut c3_half = 0.0;
    for (t, d) in cmp.times.iter().zip(&cmp.drift) {
        running = running.max(*d);
        if *t <= 0.5 * t_end + 1e-12 {
            c3_half = running;
        }
    }
    let growth = running - c3_half;
    let dt = ctx.dt.unwrap_or(0.0);
    let bound = 1e-2f64.max(3.0 * (ctx.h * ctx.h + dt) * (1.0 + speed.abs()));
    let d_end = cmp.distance[n - 1];
    AuditRecord::compare("convergence", d_end, bound, 0.0, ctx)
        .with("c3", running)
        .with("c3_half", c3_half)
        .with("c3_growth", growth)
        .require(running.is_finite() && growth <= 1e-3)
}

/// Per-edge residual `|D_N u + cos(alpha) v|` of the contact-angle
/// condition from the adjacent triangle's gradient.
pub fn boundary_trace_residuals(space: &P1Space, field: &ScalarField, alpha: &AngleProfile) -> Vec<f64> {
    let mesh = space.mesh();
    let du = space.triangle_gradients(&field.values);
    let owners = mesh.boundary_edge_triangles();
    mesh.boundary_edges
        .iter()
        .zip(owners)
        .map(|(e, t)| {
            let n = [-e.theta_mid.cos(), -e.theta_mid.sin()];
            let v = (1.0 + dot(du[t], du[t])).sqrt();
            (dot(du[t], n) + alpha.cos_value(e.theta_mid) * v).abs()
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median boundary residual against `5 h (1 + sup v)^2`.
pub fn audit_boundary_trace(space: &P1Space, field: &ScalarField, alpha: &AngleProfile, ctx: &AuditContext) -> AuditRecord {
    let res = boundary_trace_residuals(space, field, alpha);
    let sup_v = area_elements(&space.triangle_gradients(&field.values)).into_iter().fold(1.0, f64::max);
    let h = space.mesh().h_target;
    let bound = 5.0 * h * (1.0 + sup_v).powi(2);
    AuditRecord::compare("boundary_trace", median(&res), bound, 0.0, ctx)
        .with("max", res.iter().copied().fold(0.0, f64::max))
        .with("sup_v", sup_v)
}

/// Exact-domain, discrete-compatibility and multiplier speeds agree.
pub fn audit_speed_agreement(exact: Option<f64>, sol: &TranslatorSolution, ctx: &AuditContext) -> AuditRecord {
    let internal = (sol.speed - sol.compatibility_speed).abs();
    let mut rec = match exact {
        Some(c) => {
            let tol = 1e-8f64.max(ctx.h * ctx.h * (1.0 + c.abs()));
            AuditRecord::compare("speed_agreement", (sol.speed - c).abs(), 0.0, tol, ctx).with("exact", c)
        }
        None => AuditRecord::compare("speed_agreement", internal, 0.0, 1e-8, ctx),
    };
    rec = rec
        .with("multiplier", sol.speed)
        .with("compatibility", sol.compatibility_speed)
        .with("multiplier_vs_compatibility", internal);
    rec.require(internal <= 1e-8)
}

/// The regularized speeds `eps w_eps` approach `C` as `eps` decreases.
pub fn audit_regularized_limit(eps: &[f64], deviation: &[f64], ctx: &AuditContext) -> AuditRecord {
    let last = deviation.last().copied().unwrap_or(f64::INFINITY);
    let monotone = deviation.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let mut rec = AuditRecord::compare("regularized_limit", last, 0.05, 0.0, ctx).require(monotone);
    for (e, d) in eps.iter().zip(deviation) {
        rec = rec.with(&format!("deviation_eps_{e:e}"), *d);
    }
    rec
}

/// Energy mismatch and dissipation of a run, in one pass; convenience for
/// reports that do not need a full record.
pub fn energy_balance(problem: &FlowProblem<'_>, traj: &FlowTrajectory) -> (f64, f64) {
    let e0 = problem.energy(&traj.snapshots[0].u.values);
    let e1 = traj.monitors.last().map_or(e0, |r| r.energy);
    let dissipated: f64 = traj.monitors[1..].iter().map(|r| r.dissipation * traj.dt).sum();
    (e1 - e0 + dissipated, dissipated)
}
