//! Translating solitons `u = w(x) + C t`.
//!
//! The profile solves `div(Dw / v) = C + H(x, Dw)` with the contact-angle
//! flux on the boundary. Discretely this is the saddle problem
//!
//! ```text
//! K(w) w + f_H(w) + C m = b,    m^T w = 0
//! ```
//!
//! with `m` the lumped mass vector and `C` the Lagrange multiplier of the
//! mean-zero constraint. It is solved by Picard iteration on `v`.

use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{AngleProfile, SupportCurve};
use crate::operators::{area_elements, boundary_flux_vector, forcing_vector, ForcingModel, P1Space, ScalarField};
use crate::sparse::{conjugate_gradient, dot, LinearOperator, RankOneUpdate};
use crate::vec2::Vec2;

/// Speed `C = (oint cos(alpha) ds - int H dx) / |Omega|` on the exact
/// domain, for gradient-independent forcing.
pub fn compute_speed(curve: &SupportCurve, alpha: &AngleProfile, model: &dyn ForcingModel) -> Result<f64> {
    if model.depends_on_gradient() {
        return Err(Error::GradientDependentForcing);
    }
    let flux = curve.integrate_boundary(|t| alpha.cos_value(t));
    let forcing = curve.integrate_area(|x| model.value(x, [0.0, 0.0]));
    Ok((flux - forcing) / curve.area())
}

/// Closed-form spherical-cap translator on a disk of radius `R` with
/// constant contact angle and `H = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialCap {
    pub alpha: f64,
    pub radius: f64,
    /// `2 cos(alpha) / R`.
    pub speed: f64,
    /// `1 / sin(alpha)`, attained on the boundary.
    pub sup_v: f64,
}

/// `w(r) = -(1/cos alpha) sqrt(R^2 - r^2 cos^2 alpha)`: a sphere of radius
/// `R / |cos alpha|` meeting the cylinder `r = R` at angle `alpha`.
pub fn radial_oracle(alpha: f64, radius: f64) -> Result<RadialCap> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::BadSpec(format!("disk radius must be positive, got {radius}")));
    }
    let c = alpha.cos();
    if !(alpha > 0.0 && alpha < std::f64::consts::PI) || c.abs() >= 1.0 {
        return Err(Error::NonGraphical(c.abs()));
    }
    Ok(RadialCap {
        alpha,
        radius,
        speed: 2.0 * c / radius,
        sup_v: 1.0 / alpha.sin(),
    })
}

impl RadialCap {
    fn is_flat(&self) -> bool {
        (self.alpha - FRAC_PI_2).abs() < 1e-15 || self.alpha.cos() == 0.0
    }

    /// Profile `w(r)`, zero when `alpha = pi/2`.
    pub fn profile(&self, r: f64) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        let c = self.alpha.cos();
        -(self.radius * self.radius - r * r * c * c).sqrt() / c
    }

    /// `w'(r)`.
    pub fn slope(&self, r: f64) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        let c = self.alpha.cos();
        r * c / (self.radius * self.radius - r * r * c * c).sqrt()
    }

    pub fn area_element(&self, r: f64) -> f64 {
        (1.0 + self.slope(r).powi(2)).sqrt()
    }

    pub fn value_at(&self, x: Vec2) -> f64 {
        self.profile((x[0] * x[0] + x[1] * x[1]).sqrt())
    }

    /// Mean of `w` over the disk.
    pub fn disk_mean(&self) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        let c = self.alpha.cos();
        let s = self.alpha.sin();
        -2.0 * self.radius * (1.0 - s * s * s) / (3.0 * c * c * c)
    }

    /// `D_N w + cos(alpha) v` at the rim, with `N` the inward normal.
    pub fn rim_flux_residual(&self) -> f64 {
        let r = self.radius;
        -self.slope(r) + self.alpha.cos() * self.area_element(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranslatorMethod {
    Constrained,
    Continuation,
}

#[derive(Debug, Clone)]
pub struct TranslatorOptions {
    /// Nonlinear residual tolerance, relative to the size of the data.
    pub tol: f64,
    pub linear_tol: f64,
    pub max_iterations: usize,
    /// Iterations without residual decrease before switching to
    /// continuation.
    pub stall_limit: usize,
    pub continuation_steps: usize,
    pub initial: Option<ScalarField>,
}

impl Default for TranslatorOptions {
    fn default() -> Self {
        TranslatorOptions {
            tol: 1e-11,
            linear_tol: 1e-13,
            max_iterations: 400,
            stall_limit: 50,
            continuation_steps: 4,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslatorSolution {
    pub w: ScalarField,
    /// Multiplier of the mean-zero constraint.
    pub speed: f64,
    /// `(sum b - sum f_H) / sum m` evaluated at the final iterate.
    pub compatibility_speed: f64,
    pub residual: f64,
    pub iterations: usize,
    pub method: TranslatorMethod,
    pub sup_v: f64,
    /// False when the returned profile is only the last iterate.
    pub converged: bool,
}

struct Load {
    flux: Vec<f64>,
    scale: f64,
}

/// `b - f_H(w) - K(w) w - C m`, max-norm.
fn saddle_residual(space: &P1Space, load: &Load, model: &dyn ForcingModel, w: &[f64], c: f64) -> (f64, f64) {
    let du = space.triangle_gradients(w);
    let weights: Vec<f64> = area_elements(&du).iter().map(|v| 1.0 / v).collect();
    let k = space.weighted_stiffness(&weights);
    let kw = k.mul_vec(w);
    let f = forcing_vector(space, &du, model);
    let m = space.lumped_mass();
    let mut worst: f64 = 0.0;
    let mut data: f64 = 0.0;
    for i in 0..w.len() {
        let rhs = load.flux[i] - load.scale * f[i];
        worst = worst.max((rhs - kw[i] - c * m[i]).abs());
        data = data.max(rhs.abs()).max((c * m[i]).abs());
    }
    (worst, data)
}

fn picard_constrained(
    space: &P1Space,
    load: &Load,
    model: &dyn ForcingModel,
    mut w: Vec<f64>,
    opts: &TranslatorOptions,
) -> Result<(Vec<f64>, f64, f64, usize, bool)> {
    let m = space.lumped_mass();
    let total: f64 = m.iter().sum();
    let n = w.len();
    let mean = dot(m, &w) / total;
    w.iter_mut().for_each(|x| *x -= mean);

    let mut c = 0.0;
    let (mut res, mut data) = saddle_residual(space, load, model, &w, c);
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for it in 1..=opts.max_iterations {
        let du = space.triangle_gradients(&w);
        let weights: Vec<f64> = area_elements(&du).iter().map(|v| 1.0 / v).collect();
        let k = space.weighted_stiffness(&weights);
        let f = forcing_vector(space, &du, model);
        let rhs: Vec<f64> = (0..n).map(|i| load.flux[i] - load.scale * f[i]).collect();
        // (K + m m^T / |m|) maps the constant vector to m, so the constraint
        // correction is a constant shift and C is the mean of the solve.
        let op = RankOneUpdate { base: &k, vector: m, scale: 1.0 / total };
        let mut w1 = w.clone();
        conjugate_gradient(&op, &rhs, &mut w1, opts.linear_tol, 20 * n + 100)?;
        let c_new = dot(m, &w1) / total;
        let mut w_new: Vec<f64> = w1.iter().map(|x| x - c_new).collect();
        let (mut res_new, data_new) = saddle_residual(space, load, model, &w_new, c_new);
        if res_new > res {
            for (wn, wo) in w_new.iter_mut().zip(&w) {
                *wn = wo + 0.5 * (*wn - wo);
            }
            res_new = saddle_residual(space, load, model, &w_new, c_new).0;
        }
        w = w_new;
        c = c_new;
        res = res_new;
        data = data_new;
        if let Some(idx) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteField { node: idx });
        }
        if res <= opts.tol * data.max(1e-300) || res == 0.0 {
            return Ok((w, c, res, it, true));
        }
        if res < 0.999 * best {
            best = res;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= opts.stall_limit {
                return Ok((w, c, res, it, false));
            }
        }
    }
    let _ = data;
    Ok((w, c, res, opts.max_iterations, false))
}

/// Solve the constrained translator problem on a mesh; fails with
/// `NoConvergence` when neither plain Picard nor continuation converges.
pub fn solve_translator(
    space: &P1Space,
    alpha: &AngleProfile,
    model: &dyn ForcingModel,
    opts: &TranslatorOptions,
) -> Result<TranslatorSolution> {
    let sol = solve_translator_report(space, alpha, model, opts)?;
    if !sol.converged {
        return Err(Error::NoConvergence { residual: sol.residual, iterations: sol.iterations });
    }
    Ok(sol)
}

/// As [`solve_translator`], but a stalled solve returns its last iterate
/// with `converged = false`.
pub fn solve_translator_report(
    space: &P1Space,
    alpha: &AngleProfile,
    model: &dyn ForcingModel,
    opts: &TranslatorOptions,
) -> Result<TranslatorSolution> {
    let n = space.node_count();
    let flux = boundary_flux_vector(space, alpha);
    let initial = match &opts.initial {
        Some(f) if f.len() == n => f.values.clone(),
        Some(f) => {
            return Err(Error::MeshMismatch(format!("initial guess has {} values, mesh has {n} nodes", f.len())))
        }
        None => vec![0.0; n],
    };

    let full = Load { flux: flux.clone(), scale: 1.0 };
    let (mut w, mut c, mut res, mut iters, ok) = picard_constrained(space, &full, model, initial, opts)?;
    let mut method = TranslatorMethod::Constrained;
    let mut ok_final = ok;
    if !ok {
        // Continuation in the load: cos(alpha) - cos(pi/2) and H scaled by s.
        method = TranslatorMethod::Continuation;
        let mut guess = vec![0.0; n];
        let steps = opts.continuation_steps.max(1);
        let mut converged = false;
        for j in 1..=steps {
            let s = j as f64 / steps as f64;
            let load = Load { flux: flux.iter().map(|b| s * b).collect(), scale: s };
            let (wj, cj, rj, ij, okj) = picard_constrained(space, &load, model, guess, opts)?;
            iters += ij;
            guess = wj;
            w = guess.clone();
            c = cj;
            res = rj;
            converged = okj;
        }
        ok_final = converged;
    }

    let m = space.lumped_mass();
    let total: f64 = m.iter().sum();
    let mean = dot(m, &w) / total;
    w.iter_mut().for_each(|x| *x -= mean);
    let du = space.triangle_gradients(&w);
    let f = forcing_vector(space, &du, model);
    let compatibility_speed = (flux.iter().sum::<f64>() - f.iter().sum::<f64>()) / total;
    let sup_v = area_elements(&du).into_iter().fold(1.0, f64::max);
    Ok(TranslatorSolution {
        w: ScalarField::new(w),
        speed: c,
        compatibility_speed,
        residual: res,
        iterations: iters,
        method,
        sup_v,
        converged: ok_final,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizedSolution {
    pub epsilon: f64,
    pub w: ScalarField,
    pub eps_w_min: f64,
    pub eps_w_max: f64,
    /// `max |eps w - C|` when a reference speed is supplied.
    pub deviation: Option<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Picard on `(K(w) + eps M) w = b - f_H(w)`.
pub fn solve_regularized(
    space: &P1Space,
    alpha: &AngleProfile,
    model: &dyn ForcingModel,
    epsilon: f64,
    reference_speed: Option<f64>,
    opts: &TranslatorOptions,
) -> Result<RegularizedSolution> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::BadSpec(format!("regularization epsilon must be positive, got {epsilon}")));
    }
    let n = space.node_count();
    let m = space.lumped_mass();
    let total: f64 = m.iter().sum();
    let flux = boundary_flux_vector(space, alpha);

    // Constant start carrying the exact mean of eps w. The iteration runs on
    // z = w - c0 so that K never sees the large constant, which would leave a
    // roundoff floor of order |c0| eps_mach in K w.
    let f0 = forcing_vector(space, &vec![[0.0, 0.0]; space.triangle_count()], model);
    let c0 = (flux.iter().sum::<f64>() - f0.iter().sum::<f64>()) / (epsilon * total);
    let residual = |z: &[f64]| -> (f64, f64) {
        let du = space.triangle_gradients(z);
        let weights: Vec<f64> = area_elements(&du).iter().map(|v| 1.0 / v).collect();
        let kz = space.weighted_stiffness(&weights).mul_vec(z);
        let f = forcing_vector(space, &du, model);
        let mut worst: f64 = 0.0;
        let mut data: f64 = 0.0;
        for i in 0..n {
            let rhs = flux[i] - f[i];
            worst = worst.max((rhs - kz[i] - epsilon * m[i] * (z[i] + c0)).abs());
            data = data.max(rhs.abs());
        }
        (worst, data)
    };

    let mut z = vec![0.0; n];
    let (mut res, _) = residual(&z);
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut iters = 0;
    let mut converged = false;
    for it in 1..=opts.max_iterations {
        iters = it;
        let du = space.triangle_gradients(&z);
        let weights: Vec<f64> = area_elements(&du).iter().map(|v| 1.0 / v).collect();
        let a = space.weighted_stiffness(&weights).plus_diagonal(epsilon, m);
        let f = forcing_vector(space, &du, model);
        let rhs: Vec<f64> = (0..n).map(|i| flux[i] - f[i] - epsilon * m[i] * c0).collect();
        let mut z_new = z.clone();
        conjugate_gradient(&a as &dyn LinearOperator, &rhs, &mut z_new, opts.linear_tol, 20 * n + 100)?;
        let (mut res_new, data) = residual(&z_new);
        if res_new > res {
            for (zn, zo) in z_new.iter_mut().zip(&z) {
                *zn = zo + 0.5 * (*zn - zo);
            }
            res_new = residual(&z_new).0;
        }
        z = z_new;
        res = res_new;
        if let Some(idx) = z.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteField { node: idx });
        }
        if res <= opts.tol * data.max(1e-300) || res == 0.0 {
            converged = true;
            break;
        }
        if res < 0.999 * best {
            best = res;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= opts.stall_limit {
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { residual: res, iterations: iters });
    }
    let w: Vec<f64> = z.iter().map(|x| x + c0).collect();
    let eps_w: Vec<f64> = w.iter().map(|x| epsilon * x).collect();
    let eps_w_min = eps_w.iter().copied().fold(f64::INFINITY, f64::min);
    let eps_w_max = eps_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let deviation = reference_speed.map(|c| eps_w.iter().map(|x| (x - c).abs()).fold(0.0, f64::max));
    Ok(RegularizedSolution {
        epsilon,
        w: ScalarField::new(w),
        eps_w_min,
        eps_w_max,
        deviation,
        residual: res,
        iterations: iters,
    })
}
