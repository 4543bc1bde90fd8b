//! Convex planar domains described by their support function.
//!
//! The boundary is parameterized by the outward-normal angle `theta`. With
//! `h(theta)` the support function, the boundary point is
//!
//! ```text
//! gamma(theta) = h (cos, sin) + h' (-sin, cos)
//! ```
//!
//! and the radius of curvature is `rho = h + h''`, so curvature is exactly
//! `1 / rho`. The inward normal is `N = -(cos, sin)` and the counterclockwise
//! tangent is `T = (-sin, cos)`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::{dot, Vec2};

/// Dense sample count for convexity and angle-range validation.
const VALIDATION_SAMPLES: usize = 4096;
/// Trapezoid nodes for boundary quadrature (periodic, spectrally accurate).
pub const BOUNDARY_QUADRATURE_NODES: usize = 1024;

/// One harmonic `a cos(n theta) + b sin(n theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub n: u32,
    pub a: f64,
    pub b: f64,
}

impl FourierTerm {
    fn eval(&self, theta: f64) -> (f64, f64, f64) {
        let n = self.n as f64;
        let (s, c) = (n * theta).sin_cos();
        let f = self.a * c + self.b * s;
        let f1 = n * (-self.a * s + self.b * c);
        let f2 = -n * n * f;
        (f, f1, f2)
    }
}

/// Shape description as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum ShapeSpec {
    Circle {
        #[serde(rename = "R")]
        r: f64,
    },
    Ellipse {
        a: f64,
        b: f64,
    },
    Support {
        h0: f64,
        /// Triples `[n, a_n, b_n]`.
        fourier: Vec<(u32, f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Support {
    Circle { r: f64 },
    Ellipse { a: f64, b: f64 },
    Fourier { h0: f64, terms: Vec<FourierTerm> },
}

/// A smooth strictly convex closed curve given by its support function.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportCurve {
    support: Support,
    perimeter: f64,
    area: f64,
    arc_table: Vec<f64>,
}

/// Orthonormal boundary frame at a normal angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFrame {
    pub theta: f64,
    pub point: Vec2,
    pub inward_normal: Vec2,
    pub tangent: Vec2,
    pub curvature: f64,
    /// `ds/dtheta`, equal to the radius of curvature.
    pub arc_element: f64,
}

/// Build a validated support curve from a shape description.
pub fn build_domain(spec: &ShapeSpec) -> Result<SupportCurve> {
    let support = match spec {
        ShapeSpec::Circle { r } => {
            if !(r.is_finite() && *r > 0.0) {
                return Err(Error::BadSpec(format!("circle radius must be positive, got {r}")));
            }
            Support::Circle { r: *r }
        }
        ShapeSpec::Ellipse { a, b } => {
            if !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0) {
                return Err(Error::BadSpec(format!(
                    "ellipse semi-axes must be positive, got a = {a}, b = {b}"
                )));
            }
            Support::Ellipse { a: *a, b: *b }
        }
        ShapeSpec::Support { h0, fourier } => {
            if !(h0.is_finite() && *h0 > 0.0) {
                return Err(Error::BadSpec(format!("support base radius h0 must be positive, got {h0}")));
            }
            let mut terms = Vec::with_capacity(fourier.len());
            for &(n, a, b) in fourier {
                if n == 0 || !a.is_finite() || !b.is_finite() {
                    return Err(Error::BadSpec(format!(
                        "support harmonic [{n}, {a}, {b}] must have n >= 1 and finite coefficients"
                    )));
                }
                terms.push(FourierTerm { n, a, b });
            }
            Support::Fourier { h0: *h0, terms }
        }
    };
    SupportCurve::new(support)
}

impl SupportCurve {
    fn new(support: Support) -> Result<Self> {
        let mut curve = SupportCurve {
            support,
            perimeter: 0.0,
            area: 0.0,
            arc_table: Vec::new(),
        };
        let mut min_rho = f64::INFINITY;
        let mut min_theta = 0.0;
        for i in 0..VALIDATION_SAMPLES {
            let theta = TAU * i as f64 / VALIDATION_SAMPLES as f64;
            let rho = curve.radius_of_curvature(theta);
            if rho < min_rho {
                min_rho = rho;
                min_theta = theta;
            }
        }
        if !(min_rho > 0.0) {
            return Err(Error::ConvexityViolation { min_rho, theta: min_theta });
        }
        curve.perimeter = curve.integrate_theta(|t| curve.radius_of_curvature(t));
        curve.area = curve.area_support_formula();
        curve.arc_table = curve.build_arc_table();
        Ok(curve)
    }

    /// Circle of radius `r` centered at the origin.
    pub fn circle(r: f64) -> Result<Self> {
        build_domain(&ShapeSpec::Circle { r })
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self> {
        build_domain(&ShapeSpec::Ellipse { a, b })
    }

    /// `(h, h', h'')` at `theta`.
    pub fn support(&self, theta: f64) -> (f64, f64, f64) {
        match &self.support {
            Support::Circle { r } => (*r, 0.0, 0.0),
            Support::Ellipse { a, b } => {
                let (s, c) = theta.sin_cos();
                let g = a * a * c * c + b * b * s * s;
                let h = g.sqrt();
                let d = b * b - a * a;
                let g1 = d * (2.0 * theta).sin();
                let g2 = 2.0 * d * (2.0 * theta).cos();
                let h1 = g1 / (2.0 * h);
                let h2 = (0.5 * g2 - h1 * h1) / h;
                (h, h1, h2)
            }
            Support::Fourier { h0, terms } => {
                let mut acc = (*h0, 0.0, 0.0);
                for term in terms {
                    let (f, f1, f2) = term.eval(theta);
                    acc.0 += f;
                    acc.1 += f1;
                    acc.2 += f2;
                }
                acc
            }
        }
    }

    pub fn radius_of_curvature(&self, theta: f64) -> f64 {
        let (h, _, h2) = self.support(theta);
        h + h2
    }

    pub fn curvature(&self, theta: f64) -> f64 {
        1.0 / self.radius_of_curvature(theta)
    }

    pub fn point(&self, theta: f64) -> Vec2 {
        let (h, h1, _) = self.support(theta);
        let (s, c) = theta.sin_cos();
        [h * c - h1 * s, h * s + h1 * c]
    }

    /// `d gamma / d theta`, obtained by differentiating the point formula
    /// term by term rather than through `rho T`.
    pub fn point_derivative(&self, theta: f64) -> Vec2 {
        let (h, h1, h2) = self.support(theta);
        let (s, c) = theta.sin_cos();
        [h1 * c - h * s - h2 * s - h1 * c, h1 * s + h * c + h2 * c - h1 * s]
    }

    pub fn frame_at(&self, theta: f64) -> BoundaryFrame {
        let (s, c) = theta.sin_cos();
        let rho = self.radius_of_curvature(theta);
        BoundaryFrame {
            theta,
            point: self.point(theta),
            inward_normal: [-c, -s],
            tangent: [-s, c],
            curvature: 1.0 / rho,
            arc_element: rho,
        }
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    /// Enclosed area from `(1/2) * integral of (h^2 - h'^2) dtheta`.
    pub fn area(&self) -> f64 {
        self.area
    }

    fn area_support_formula(&self) -> f64 {
        0.5 * self.integrate_theta(|t| {
            let (h, h1, _) = self.support(t);
            h * h - h1 * h1
        })
    }

    /// Enclosed area from Green's theorem on the boundary curve.
    pub fn area_green(&self) -> f64 {
        0.5 * self.integrate_theta(|t| {
            let p = self.point(t);
            let d = self.point_derivative(t);
            p[0] * d[1] - p[1] * d[0]
        })
    }

    /// Composite trapezoid over one period in `theta`.
    pub fn integrate_theta(&self, f: impl Fn(f64) -> f64) -> f64 {
        let n = BOUNDARY_QUADRATURE_NODES;
        let dt = TAU / n as f64;
        (0..n).map(|i| f(i as f64 * dt)).sum::<f64>() * dt
    }

    /// Boundary integral `\oint f ds` with `ds = rho dtheta`.
    pub fn integrate_boundary(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.integrate_theta(|t| f(t) * self.radius_of_curvature(t))
    }

    /// Area integral `int_Omega f dx` on the exact domain: star-shaped
    /// polar map about the boundary mean point, Gauss-Legendre in the radial
    /// fraction and trapezoid in `theta`.
    pub fn integrate_area(&self, f: impl Fn(Vec2) -> f64) -> f64 {
        let center = {
            let n = BOUNDARY_QUADRATURE_NODES;
            let mut c = [0.0, 0.0];
            for i in 0..n {
                let p = self.point(TAU * i as f64 / n as f64);
                c[0] += p[0] / n as f64;
                c[1] += p[1] / n as f64;
            }
            c
        };
        let (nodes, weights) = gauss_legendre(24);
        self.integrate_theta(|t| {
            let p = self.point(t);
            let d = self.point_derivative(t);
            let rel = [p[0] - center[0], p[1] - center[1]];
            let jac = (rel[0] * d[1] - rel[1] * d[0]).abs();
            nodes
                .iter()
                .zip(&weights)
                .map(|(&s, &w)| w * s * jac * f([center[0] + s * rel[0], center[1] + s * rel[1]]))
                .sum::<f64>()
        })
    }

    /// `\oint k ds`, which is `2 pi` for any closed convex curve.
    pub fn total_turning(&self) -> f64 {
        self.integrate_boundary(|t| self.curvature(t))
    }

    fn build_arc_table(&self) -> Vec<f64> {
        // Cumulative Simpson on a fine uniform grid.
        let n = 4096;
        let dt = TAU / n as f64;
        let mut table = Vec::with_capacity(n + 1);
        table.push(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            let t0 = i as f64 * dt;
            let f0 = self.radius_of_curvature(t0);
            let fm = self.radius_of_curvature(t0 + 0.5 * dt);
            let f1 = self.radius_of_curvature(t0 + dt);
            acc += dt / 6.0 * (f0 + 4.0 * fm + f1);
            table.push(acc);
        }
        table
    }

    /// Arc length from `theta = 0` to `theta` (in `[0, 2 pi]`).
    pub fn arc_length_to(&self, theta: f64) -> f64 {
        let n = self.arc_table.len() - 1;
        let dt = TAU / n as f64;
        let theta = theta.clamp(0.0, TAU);
        let i = ((theta / dt) as usize).min(n - 1);
        let t0 = i as f64 * dt;
        // Simpson on the partial cell.
        let d = theta - t0;
        let f0 = self.radius_of_curvature(t0);
        let fm = self.radius_of_curvature(t0 + 0.5 * d);
        let f1 = self.radius_of_curvature(theta);
        self.arc_table[i] + d / 6.0 * (f0 + 4.0 * fm + f1)
    }

    /// Inverse of [`arc_length_to`]: the normal angle at arc length `s`.
    pub fn theta_at_arc_length(&self, s: f64) -> f64 {
        let total = *self.arc_table.last().unwrap();
        let s = s.clamp(0.0, total);
        let n = self.arc_table.len() - 1;
        let dt = TAU / n as f64;
        let i = match self.arc_table.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => return (i as f64 * dt).min(TAU),
            Err(i) => i.saturating_sub(1).min(n - 1),
        };
        let (lo, hi) = (self.arc_table[i], self.arc_table[i + 1]);
        let mut theta = (i as f64 + (s - lo) / (hi - lo)) * dt;
        for _ in 0..4 {
            let f = self.arc_length_to(theta) - s;
            theta -= f / self.radius_of_curvature(theta);
            theta = theta.clamp(i as f64 * dt, (i + 1) as f64 * dt);
        }
        theta
    }

    /// Distance from an interior point to the boundary,
    /// `min_theta (h(theta) - x . n(theta))`. Negative outside.
    pub fn distance_to_boundary(&self, x: Vec2) -> f64 {
        let gap = |t: f64| {
            let (s, c) = t.sin_cos();
            self.support(t).0 - dot(x, [c, s])
        };
        let n = 256;
        let dt = TAU / n as f64;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..n {
            let t = i as f64 * dt;
            let g = gap(t);
            if g < best.0 {
                best = (g, t);
            }
        }
        // Golden-section refinement on the bracketing cell pair.
        let (mut a, mut b) = (best.1 - dt, best.1 + dt);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let (mut fc, mut fd) = (gap(c), gap(d));
        for _ in 0..40 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = gap(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = gap(d);
            }
        }
        best.0.min(fc).min(fd)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let (h0, _, _) = self.support(0.0);
        let (h90, _, _) = self.support(0.5 * PI);
        let (h180, _, _) = self.support(PI);
        let (h270, _, _) = self.support(1.5 * PI);
        ([-h180, -h270], [h0, h90])
    }

    /// `(min k, max k)` over a dense sample.
    pub fn curvature_range(&self, samples: usize) -> (f64, f64) {
        (0..samples)
            .map(|i| self.curvature(TAU * i as f64 / samples as f64))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| (lo.min(k), hi.max(k)))
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Contact-angle description as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSpec {
    Const(f64),
    Fourier {
        a0: f64,
        #[serde(default)]
        terms: Vec<(u32, f64, f64)>,
    },
}

/// Contact angle `alpha(theta)` with values in `(0, pi)`.
#[derive(Debug, Clone, PartialEq)]
pub enum AngleProfile {
    Constant(f64),
    Fourier { a0: f64, terms: Vec<FourierTerm> },
}

impl AngleProfile {
    pub fn constant(alpha: f64) -> Result<Self> {
        Self::from_spec(&AlphaSpec::Const(alpha))
    }

    pub fn from_spec(spec: &AlphaSpec) -> Result<Self> {
        let profile = match spec {
            AlphaSpec::Const(a) => AngleProfile::Constant(*a),
            AlphaSpec::Fourier { a0, terms } => {
                let mut out = Vec::with_capacity(terms.len());
                for &(n, a, b) in terms {
                    if n == 0 || !a.is_finite() || !b.is_finite() {
                        return Err(Error::BadSpec(format!(
                            "alpha harmonic [{n}, {a}, {b}] must have n >= 1 and finite coefficients"
                        )));
                    }
                    out.push(FourierTerm { n, a, b });
                }
                AngleProfile::Fourier { a0: *a0, terms: out }
            }
        };
        for i in 0..VALIDATION_SAMPLES {
            let theta = TAU * i as f64 / VALIDATION_SAMPLES as f64;
            let alpha = profile.value(theta);
            if !(alpha > 0.0 && alpha < PI) {
                return Err(Error::AngleOutOfRange { alpha, theta });
            }
        }
        Ok(profile)
    }

    pub fn value(&self, theta: f64) -> f64 {
        match self {
            AngleProfile::Constant(a) => *a,
            AngleProfile::Fourier { a0, terms } => a0 + terms.iter().map(|t| t.eval(theta).0).sum::<f64>(),
        }
    }

    /// `cos(alpha(theta))`, exactly zero for the right angle so that neutral
    /// data produce exactly flat solutions.
    pub fn cos_value(&self, theta: f64) -> f64 {
        let a = self.value(theta);
        if a == std::f64::consts::FRAC_PI_2 {
            0.0
        } else {
            a.cos()
        }
    }

    /// `d alpha / d theta`.
    pub fn derivative(&self, theta: f64) -> f64 {
        match self {
            AngleProfile::Constant(_) => 0.0,
            AngleProfile::Fourier { terms, .. } => terms.iter().map(|t| t.eval(theta).1).sum(),
        }
    }

    /// Tangential derivative `D_T alpha = alpha'(theta) / rho(theta)`.
    pub fn tangential_derivative(&self, curve: &SupportCurve, theta: f64) -> f64 {
        self.derivative(theta) / curve.radius_of_curvature(theta)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, AngleProfile::Constant(_))
    }
}

/// A smooth test function with analytic gradient and Hessian, used by the
/// Frenet/commutator audit.
pub trait SmoothFunction {
    fn value(&self, x: Vec2) -> f64;
    fn gradient(&self, x: Vec2) -> Vec2;
    fn hessian(&self, x: Vec2) -> [[f64; 2]; 2];
}

/// Quadratic `c + g.x + (1/2) x^T Q x` with symmetric `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub c: f64,
    pub g: Vec2,
    pub q: [[f64; 2]; 2],
}

impl Quadratic {
    pub fn constant(c: f64) -> Self {
        Quadratic { c, g: [0.0; 2], q: [[0.0; 2]; 2] }
    }
    pub fn linear(g: Vec2) -> Self {
        Quadratic { c: 0.0, g, q: [[0.0; 2]; 2] }
    }
    /// `x^2 + y^2`.
    pub fn radial_square() -> Self {
        Quadratic { c: 0.0, g: [0.0; 2], q: [[2.0, 0.0], [0.0, 2.0]] }
    }
}

impl SmoothFunction for Quadratic {
    fn value(&self, x: Vec2) -> f64 {
        let qx = [self.q[0][0] * x[0] + self.q[0][1] * x[1], self.q[1][0] * x[0] + self.q[1][1] * x[1]];
        self.c + dot(self.g, x) + 0.5 * dot(x, qx)
    }
    fn gradient(&self, x: Vec2) -> Vec2 {
        [
            self.g[0] + self.q[0][0] * x[0] + self.q[0][1] * x[1],
            self.g[1] + self.q[1][0] * x[0] + self.q[1][1] * x[1],
        ]
    }
    fn hessian(&self, _x: Vec2) -> [[f64; 2]; 2] {
        self.q
    }
}

/// Maximum residuals of the boundary frame identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrenetReport {
    pub samples: usize,
    /// `max |D_T T - k N|`
    pub tangent_residual: f64,
    /// `max |D_T N + k T|`
    pub normal_residual: f64,
    /// `max |D_N D_T f - D_T D_N f - k D_T f|`
    pub commutator_residual: f64,
    /// `max |gamma' - rho T|`
    pub arc_element_residual: f64,
}

/// Check the Frenet relations and the derivative interchange rule on the
/// tubular-neighborhood frame `x(theta, r) = gamma(theta) + r N(theta)`.
///
/// Along normal lines `N` and `T` are constant, so `D_N D_T f = T^T D^2f N`.
/// Along the boundary, `D_T g = (dg/dtheta) / |gamma'|`.
pub fn audit_frenet(curve: &SupportCurve, samples: usize, f: &dyn SmoothFunction) -> FrenetReport {
    let samples = samples.max(16);
    let mut report = FrenetReport {
        samples,
        tangent_residual: 0.0,
        normal_residual: 0.0,
        commutator_residual: 0.0,
        arc_element_residual: 0.0,
    };
    for i in 0..samples {
        let theta = TAU * i as f64 / samples as f64;
        let frame = curve.frame_at(theta);
        let (s, c) = theta.sin_cos();
        let dgamma = curve.point_derivative(theta);
        let speed = (dgamma[0] * dgamma[0] + dgamma[1] * dgamma[1]).sqrt();
        let (t, n, k) = (frame.tangent, frame.inward_normal, frame.curvature);

        // dT/dtheta and dN/dtheta from T = (-sin, cos), N = (-cos, -sin).
        let dt = [-c, -s];
        let dn = [s, -c];
        let dtt = [dt[0] / speed, dt[1] / speed];
        let dtn = [dn[0] / speed, dn[1] / speed];
        let r1 = crate::vec2::norm([dtt[0] - k * n[0], dtt[1] - k * n[1]]);
        let r2 = crate::vec2::norm([dtn[0] + k * t[0], dtn[1] + k * t[1]]);
        let r4 = crate::vec2::norm([dgamma[0] - frame.arc_element * t[0], dgamma[1] - frame.arc_element * t[1]]);

        let p = frame.point;
        let grad = f.gradient(p);
        let hess = f.hessian(p);
        let hn = [hess[0][0] * n[0] + hess[0][1] * n[1], hess[1][0] * n[0] + hess[1][1] * n[1]];
        let ht = [hess[0][0] * dgamma[0] + hess[0][1] * dgamma[1], hess[1][0] * dgamma[0] + hess[1][1] * dgamma[1]];
        let dn_dt_f = dot(t, hn);
        // d/dtheta [N . grad f(gamma)] = N' . grad f + N . D^2f gamma'
        let dt_dn_f = (dot(dn, grad) + dot(n, ht)) / speed;
        let dt_f = dot(t, grad);
        let r3 = (dn_dt_f - dt_dn_f - k * dt_f).abs();

        report.tangent_residual = report.tangent_residual.max(r1);
        report.normal_residual = report.normal_residual.max(r2);
        report.commutator_residual = report.commutator_residual.max(r3);
        report.arc_element_residual = report.arc_element_residual.max(r4);
    }
    report
}
