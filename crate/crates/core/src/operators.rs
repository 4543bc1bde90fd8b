//! Lumped P1 finite-element kernels for the weak form
//!
//! ```text
//! int u_t phi + int (1/v) Du . Dphi = oint cos(alpha) phi ds - int H(x, Du) phi
//! ```
//!
//! The contact-angle condition enters only through the boundary flux
//! `oint cos(alpha) phi ds`.

use serde::{Deserialize, Serialize};

use crate::geometry::AngleProfile;
use crate::mesh::TriMesh;
use crate::sparse::CsrMatrix;
use crate::vec2::{dot, Vec2};

/// Nodal values of a P1 function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        ScalarField { values }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        ScalarField { values: vec![c; n] }
    }

    pub fn from_fn(mesh: &TriMesh, f: impl Fn(Vec2) -> f64) -> Self {
        ScalarField { values: mesh.nodes.iter().map(|&p| f(p)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn oscillation(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

/// Forcing term `H(x, p)` with its partial derivatives.
pub trait ForcingModel: Send + Sync {
    fn value(&self, x: Vec2, p: Vec2) -> f64;
    fn grad_x(&self, x: Vec2, p: Vec2) -> Vec2;
    fn grad_p(&self, x: Vec2, p: Vec2) -> Vec2;
    /// `false` when `H = H(x)`; then `grad_p` vanishes identically.
    fn depends_on_gradient(&self) -> bool;
}

/// Built-in forcing models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Forcing {
    #[default]
    Zero,
    Const(f64),
    /// `H = c x_1`.
    Linear(f64),
    /// `H = sum c x^i y^j + q . p`.
    Polynomial {
        /// Triples `[i, j, c]`.
        terms: Vec<(u32, u32, f64)>,
        #[serde(default)]
        p_linear: Option<[f64; 2]>,
    },
}

impl ForcingModel for Forcing {
    fn value(&self, x: Vec2, p: Vec2) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::Const(c) => *c,
            Forcing::Linear(c) => c * x[0],
            Forcing::Polynomial { terms, p_linear } => {
                let poly: f64 = terms
                    .iter()
                    .map(|&(i, j, c)| c * x[0].powi(i as i32) * x[1].powi(j as i32))
                    .sum();
                poly + p_linear.map_or(0.0, |q| dot(q, p))
            }
        }
    }

    fn grad_x(&self, x: Vec2, _p: Vec2) -> Vec2 {
        match self {
            Forcing::Zero | Forcing::Const(_) => [0.0, 0.0],
            Forcing::Linear(c) => [*c, 0.0],
            Forcing::Polynomial { terms, .. } => {
                let mut g = [0.0, 0.0];
                for &(i, j, c) in terms {
                    if i > 0 {
                        g[0] += c * i as f64 * x[0].powi(i as i32 - 1) * x[1].powi(j as i32);
                    }
                    if j > 0 {
                        g[1] += c * j as f64 * x[0].powi(i as i32) * x[1].powi(j as i32 - 1);
                    }
                }
                g
            }
        }
    }

    fn grad_p(&self, _x: Vec2, _p: Vec2) -> Vec2 {
        match self {
            Forcing::Polynomial { p_linear: Some(q), .. } => *q,
            _ => [0.0, 0.0],
        }
    }

    fn depends_on_gradient(&self) -> bool {
        matches!(self, Forcing::Polynomial { p_linear: Some(q), .. } if q[0] != 0.0 || q[1] != 0.0)
    }
}

/// Per-mesh precomputation: areas, basis gradients, lumped masses and the
/// sparsity pattern with scatter positions.
#[derive(Debug, Clone)]
pub struct P1Space {
    mesh: TriMesh,
    areas: Vec<f64>,
    basis_grads: Vec<[Vec2; 3]>,
    mass: Vec<f64>,
    pattern: CsrMatrix,
    scatter: Vec<[usize; 9]>,
    /// Unweighted local stiffness `A_T Dphi_i . Dphi_j`.
    local_stiffness: Vec<[f64; 9]>,
}

impl P1Space {
    pub fn new(mesh: TriMesh) -> Self {
        let n = mesh.node_count();
        let pattern = CsrMatrix::from_triangles(n, &mesh.triangles);
        let mut areas = Vec::with_capacity(mesh.triangles.len());
        let mut basis_grads = Vec::with_capacity(mesh.triangles.len());
        let mut scatter = Vec::with_capacity(mesh.triangles.len());
        let mut local_stiffness = Vec::with_capacity(mesh.triangles.len());
        let mut mass = vec![0.0; n];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let area = mesh.triangle_area(ti);
            let [pa, pb, pc] = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
            let s = 1.0 / (2.0 * area);
            let g = [
                [(pb[1] - pc[1]) * s, (pc[0] - pb[0]) * s],
                [(pc[1] - pa[1]) * s, (pa[0] - pc[0]) * s],
                [(pa[1] - pb[1]) * s, (pb[0] - pa[0]) * s],
            ];
            let mut pos = [0usize; 9];
            let mut loc = [0.0; 9];
            for i in 0..3 {
                mass[t[i]] += area / 3.0;
                for j in 0..3 {
                    pos[3 * i + j] = pattern.position(t[i], t[j]).unwrap();
                    loc[3 * i + j] = area * dot(g[i], g[j]);
                }
            }
            areas.push(area);
            basis_grads.push(g);
            scatter.push(pos);
            local_stiffness.push(loc);
        }
        P1Space { mesh, areas, basis_grads, mass, pattern, scatter, local_stiffness }
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn node_count(&self) -> usize {
        self.mesh.node_count()
    }

    pub fn triangle_count(&self) -> usize {
        self.areas.len()
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Lumped mass diagonal.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// `int u dx` with the lumped quadrature.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.mass.iter().zip(values).map(|(m, u)| m * u).sum()
    }

    /// Exact per-triangle gradients of a P1 field.
    pub fn triangle_gradients(&self, values: &[f64]) -> Vec<Vec2> {
        self.mesh
            .triangles
            .iter()
            .zip(&self.basis_grads)
            .map(|(t, g)| {
                let mut du = [0.0, 0.0];
                for k in 0..3 {
                    du[0] += values[t[k]] * g[k][0];
                    du[1] += values[t[k]] * g[k][1];
                }
                du
            })
            .collect()
    }

    /// `sum_T (w_T) A_T Dphi_i . Dphi_j`, assembled in triangle order.
    pub fn weighted_stiffness(&self, weights: &[f64]) -> CsrMatrix {
        let mut k = self.pattern.zeroed();
        for ((pos, loc), w) in self.scatter.iter().zip(&self.local_stiffness).zip(weights) {
            for e in 0..9 {
                k.values[pos[e]] += w * loc[e];
            }
        }
        k
    }

    pub fn standard_stiffness(&self) -> CsrMatrix {
        self.weighted_stiffness(&vec![1.0; self.triangle_count()])
    }
}

/// Per-triangle gradient quantities of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientDiagnostics {
    pub du: Vec<Vec2>,
    /// `sqrt(1 + |Du|^2)` per triangle.
    pub v: Vec<f64>,
    /// `delta_ij - D_i u D_j u / v^2` per triangle.
    pub a: Vec<[[f64; 2]; 2]>,
    /// Nodal `div(Du / v)` as `-(K(u) u)_i / m_i` (no boundary flux term).
    pub mean_curvature: Vec<f64>,
    /// Patch-recovery proxy for `|A|^2` per triangle; reporting only.
    pub curvature_norm_sq: Vec<f64>,
}

impl GradientDiagnostics {
    pub fn sup_v(&self) -> f64 {
        self.v.iter().copied().fold(1.0, f64::max)
    }

    /// Area-weighted nodal average of `v`, for reporting.
    pub fn smoothed_nodal_v(&self, space: &P1Space) -> Vec<f64> {
        let mut acc = vec![0.0; space.node_count()];
        let mut wsum = vec![0.0; space.node_count()];
        for ((t, &area), &v) in space.mesh.triangles.iter().zip(&space.areas).zip(&self.v) {
            for &i in t {
                acc[i] += area * v;
                wsum[i] += area;
            }
        }
        acc.iter().zip(&wsum).map(|(a, w)| a / w).collect()
    }

    /// Mean curvature with the natural boundary flux `b` included.
    pub fn mean_curvature_with_flux(&self, space: &P1Space, flux: &[f64]) -> Vec<f64> {
        self.mean_curvature
            .iter()
            .zip(flux)
            .zip(space.lumped_mass())
            .map(|((h, b), m)| h + b / m)
            .collect()
    }
}

pub fn area_elements(du: &[Vec2]) -> Vec<f64> {
    du.iter().map(|p| (1.0 + dot(*p, *p)).sqrt()).collect()
}

pub fn gradient_diagnostics(space: &P1Space, field: &ScalarField) -> GradientDiagnostics {
    let du = space.triangle_gradients(&field.values);
    let v = area_elements(&du);
    let a = du
        .iter()
        .zip(&v)
        .map(|(p, vt)| {
            let w = 1.0 / (vt * vt);
            [[1.0 - p[0] * p[0] * w, -p[0] * p[1] * w], [-p[0] * p[1] * w, 1.0 - p[1] * p[1] * w]]
        })
        .collect::<Vec<_>>();
    let weights: Vec<f64> = v.iter().map(|x| 1.0 / x).collect();
    let k = space.weighted_stiffness(&weights);
    let ku = k.mul_vec(&field.values);
    let mean_curvature = ku.iter().zip(space.lumped_mass()).map(|(x, m)| -x / m).collect();

    // Recovered nodal gradient, then its per-triangle derivative as a
    // Hessian proxy.
    let n = space.node_count();
    let mut g = vec![[0.0, 0.0]; n];
    let mut wsum = vec![0.0; n];
    for ((t, &area), d) in space.mesh.triangles.iter().zip(&space.areas).zip(&du) {
        for &i in t {
            g[i][0] += area * d[0];
            g[i][1] += area * d[1];
            wsum[i] += area;
        }
    }
    for (gi, w) in g.iter_mut().zip(&wsum) {
        gi[0] /= w;
        gi[1] /= w;
    }
    let curvature_norm_sq = space
        .mesh
        .triangles
        .iter()
        .zip(&space.basis_grads)
        .zip(a.iter().zip(&v))
        .map(|((t, bg), (at, vt))| {
            let mut hess = [[0.0; 2]; 2];
            for k in 0..3 {
                for l in 0..2 {
                    for m in 0..2 {
                        hess[l][m] += g[t[k]][l] * bg[k][m];
                    }
                }
            }
            let off = 0.5 * (hess[0][1] + hess[1][0]);
            hess[0][1] = off;
            hess[1][0] = off;
            // tr(a H a H) / v^2
            let ah = mat_mul(*at, hess);
            let p = mat_mul(ah, ah);
            (p[0][0] + p[1][1]) / (vt * vt)
        })
        .collect();

    GradientDiagnostics { du, v, a, mean_curvature, curvature_norm_sq }
}

fn mat_mul(x: [[f64; 2]; 2], y: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
        }
    }
    out
}

/// Lumped mass: one third of each adjacent triangle's area.
pub fn assemble_mass(space: &P1Space) -> Vec<f64> {
    space.lumped_mass().to_vec()
}

/// `K(u)_ij = sum_T (1/v_T) int_T Dphi_i . Dphi_j`.
pub fn assemble_stiffness(space: &P1Space, diag: &GradientDiagnostics) -> CsrMatrix {
    let weights: Vec<f64> = diag.v.iter().map(|x| 1.0 / x).collect();
    space.weighted_stiffness(&weights)
}

/// `b_i = sum over adjacent boundary edges of (length/2) cos(alpha(mid))`.
pub fn boundary_flux_vector(space: &P1Space, alpha: &AngleProfile) -> Vec<f64> {
    let mesh = space.mesh();
    let mut b = vec![0.0; mesh.node_count()];
    for e in &mesh.boundary_edges {
        let half = 0.5 * e.length * alpha.cos_value(e.theta_mid);
        b[e.a] += half;
        b[e.b] += half;
    }
    b
}

/// `f_i = int H(x, Du) phi_i` with centroid quadrature.
pub fn forcing_vector(space: &P1Space, du: &[Vec2], model: &dyn ForcingModel) -> Vec<f64> {
    let mesh = space.mesh();
    let mut f = vec![0.0; mesh.node_count()];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let h = model.value(mesh.centroid(ti), du[ti]);
        if h == 0.0 {
            continue;
        }
        let share = space.areas[ti] * h / 3.0;
        for &i in t {
            f[i] += share;
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SupportCurve;
    use crate::mesh::{generate_mesh, BoundaryEdge};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn right_triangle() -> TriMesh {
        TriMesh {
            nodes: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            boundary_edges: vec![
                BoundaryEdge { a: 0, b: 1, theta_mid: 1.5 * PI, length: 1.0 },
                BoundaryEdge { a: 1, b: 2, theta_mid: 0.25 * PI, length: 2f64.sqrt() },
                BoundaryEdge { a: 2, b: 0, theta_mid: PI, length: 1.0 },
            ],
            boundary_theta: vec![1.25 * PI, 0.25 * PI, 0.75 * PI],
            h_target: 1.0,
            domain_area: 0.5,
            domain_perimeter: 2.0 + 2f64.sqrt(),
        }
    }

    fn disk(h: f64) -> P1Space {
        P1Space::new(generate_mesh(&SupportCurve::circle(1.0).unwrap(), h).unwrap())
    }

    #[test]
    fn lumped_mass_single_triangle() {
        let s = P1Space::new(right_triangle());
        for m in assemble_mass(&s) {
            assert_abs_diff_eq!(m, 1.0 / 6.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn lumped_mass_trace_is_area() {
        let s = disk(0.1);
        let m = assemble_mass(&s);
        assert!(m.iter().all(|&x| x > 0.0));
        assert!((m.iter().sum::<f64>() - PI).abs() < 0.01 * PI);
        assert_abs_diff_eq!(m.iter().sum::<f64>(), s.mesh().total_area(), epsilon = 1e-12);
    }

    #[test]
    fn stiffness_unit_weight_and_constants() {
        let s = disk(0.1);
        let zero = ScalarField::constant(s.node_count(), 0.0);
        let k0 = assemble_stiffness(&s, &gradient_diagnostics(&s, &zero));
        assert_eq!(k0, s.standard_stiffness());
        let u = ScalarField::from_fn(s.mesh(), |p| p[0] * p[0] - 0.3 * p[1]);
        let k = assemble_stiffness(&s, &gradient_diagnostics(&s, &u));
        let k1 = k.mul_vec(&vec![1.0; s.node_count()]);
        assert!(k1.iter().all(|x| x.abs() <= 1e-12));
        assert!(k.asymmetry() <= 1e-15);
    }

    #[test]
    fn stiffness_for_affine_slope_one() {
        let s = disk(0.2);
        let u = ScalarField::from_fn(s.mesh(), |p| p[0]);
        let k = assemble_stiffness(&s, &gradient_diagnostics(&s, &u));
        let std = s.standard_stiffness();
        for (a, b) in k.values.iter().zip(&std.values) {
            assert_abs_diff_eq!(*a, b / 2f64.sqrt(), epsilon = 1e-13);
        }
    }

    #[test]
    fn standard_stiffness_is_m_matrix_on_delaunay_mesh() {
        for h in [0.2, 0.1, 0.05] {
            let s = disk(h);
            assert!(s.standard_stiffness().max_off_diagonal() <= 1e-14);
        }
    }

    #[test]
    fn flux_vector_cases() {
        let s = disk(0.05);
        let b = boundary_flux_vector(&s, &AngleProfile::constant(PI / 2.0).unwrap());
        assert!(b.iter().all(|x| x.abs() < 1e-16));
        let b = boundary_flux_vector(&s, &AngleProfile::constant(PI / 3.0).unwrap());
        assert!((b.iter().sum::<f64>() - PI).abs() < 2e-3);
        let b = boundary_flux_vector(&s, &AngleProfile::constant(2.0).unwrap());
        assert!((b.iter().sum::<f64>() - 2.0 * PI * 2f64.cos()).abs() < 2e-3);
        assert!(b.iter().enumerate().all(|(i, x)| s.mesh().is_boundary_node(i) || *x == 0.0));
    }

    #[test]
    fn flux_sum_converges_second_order() {
        let alpha = AngleProfile::constant(PI / 3.0).unwrap();
        let err = |h: f64| {
            let s = disk(h);
            (boundary_flux_vector(&s, &alpha).iter().sum::<f64>() - PI).abs()
        };
        let r = err(0.1) / err(0.05);
        assert!((3.0..=5.0).contains(&r), "ratio {r}");
    }

    #[test]
    fn forcing_vector_cases() {
        let s = disk(0.1);
        let du = vec![[0.0, 0.0]; s.triangle_count()];
        assert!(forcing_vector(&s, &du, &Forcing::Zero).iter().all(|&x| x == 0.0));
        let f = forcing_vector(&s, &du, &Forcing::Const(1.0));
        assert!((f.iter().sum::<f64>() - PI).abs() < 0.01 * PI);
        let f = forcing_vector(&s, &du, &Forcing::Linear(1.0));
        assert!(f.iter().sum::<f64>().abs() < 1e-3);
    }

    #[test]
    fn diagnostics_constant_and_affine() {
        let s = disk(0.1);
        let d = gradient_diagnostics(&s, &ScalarField::constant(s.node_count(), 3.0));
        assert!(d.v.iter().all(|&v| v == 1.0));
        assert!(d.du.iter().all(|p| p[0].abs() < 1e-13 && p[1].abs() < 1e-13));
        for a in &d.a {
            assert_abs_diff_eq!(a[0][0], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(a[0][1], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(a[1][1], 1.0, epsilon = 1e-15);
        }
        let d = gradient_diagnostics(&s, &ScalarField::from_fn(s.mesh(), |p| p[0] + 2.0 * p[1]));
        for (du, v) in d.du.iter().zip(&d.v) {
            assert_abs_diff_eq!(du[0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(du[1], 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(*v, 6f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn metric_eigenvalues_in_range() {
        let s = disk(0.1);
        let d = gradient_diagnostics(&s, &ScalarField::from_fn(s.mesh(), |p| (3.0 * p[0]).sin() + p[1] * p[1]));
        for (a, v) in d.a.iter().zip(&d.v) {
            assert!(*v >= 1.0);
            assert_eq!(a[0][1], a[1][0]);
            let tr = a[0][0] + a[1][1];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
            let (lo, hi) = (0.5 * tr - disc, 0.5 * tr + disc);
            assert!(lo >= 1.0 / (v * v) - 1e-12 && hi <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn spherical_cap_sup_v() {
        let alpha: f64 = 2.0;
        let c = alpha.cos();
        let s = disk(0.05);
        let w = ScalarField::from_fn(s.mesh(), |p| -(1.0 - (p[0] * p[0] + p[1] * p[1]) * c * c).sqrt() / c);
        let d = gradient_diagnostics(&s, &w);
        let expected = 1.0 / alpha.sin();
        assert!((d.sup_v() - expected).abs() <= 0.02 * expected, "{}", d.sup_v());
    }

    #[test]
    fn forcing_partials() {
        let f = Forcing::Polynomial { terms: vec![(2, 1, 3.0)], p_linear: Some([0.5, -1.0]) };
        let x = [0.4, -0.7];
        let p = [1.0, 2.0];
        let eps = 1e-6;
        let fd = (f.value([x[0] + eps, x[1]], p) - f.value([x[0] - eps, x[1]], p)) / (2.0 * eps);
        assert_abs_diff_eq!(f.grad_x(x, p)[0], fd, epsilon = 1e-8);
        assert_eq!(f.grad_p(x, p), [0.5, -1.0]);
        assert!(f.depends_on_gradient());
        assert!(!Forcing::Linear(2.0).depends_on_gradient());
        assert_eq!(Forcing::Linear(2.0).grad_p(x, p), [0.0, 0.0]);
    }

    #[test]
    fn forcing_json() {
        let f: Forcing = serde_json::from_str(r#""zero""#).unwrap();
        assert_eq!(f, Forcing::Zero);
        let f: Forcing = serde_json::from_str(r#"{"linear":1.5}"#).unwrap();
        assert_eq!(f, Forcing::Linear(1.5));
        let f: Forcing = serde_json::from_str(r#"{"polynomial":{"terms":[[1,0,2.0]]}}"#).unwrap();
        assert!(!f.depends_on_gradient());
    }
}
