//! Unstructured triangulation of a convex domain.
//!
//! Boundary nodes are placed at uniform arc length on the exact curve,
//! interior nodes on a triangular lattice kept at least `h/2` away from the
//! boundary. The union is Delaunay-triangulated, relaxed by a few Laplacian
//! sweeps (re-triangulating each time), and validated.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::geometry::{AngleProfile, SupportCurve};
use crate::vec2::{cross, norm, sub, Vec2};

const MIN_ANGLE_DEG: f64 = 20.0;
const DELAUNAY_SLACK: f64 = 1e-12;
const SMOOTHING_SWEEPS: usize = 6;
const MAX_ATTEMPTS: usize = 6;

/// A boundary edge `a -> b`, counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    /// Normal angle at the arc-length midpoint of the edge.
    pub theta_mid: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub nodes: Vec<Vec2>,
    /// Counterclockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    /// Closed counterclockwise cycle of boundary edges.
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Normal angle of each boundary node; boundary nodes come first.
    pub boundary_theta: Vec<f64>,
    pub h_target: f64,
    /// Exact area of the domain the mesh was generated from.
    pub domain_area: f64,
    pub domain_perimeter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshQuality {
    pub nodes: usize,
    pub triangles: usize,
    pub min_angle_deg: f64,
    pub max_angle_deg: f64,
    pub min_edge: f64,
    pub max_edge: f64,
    pub delaunay_violations: usize,
    /// Boundary edges whose opposite angle exceeds 90 degrees.
    pub obtuse_boundary_angles: usize,
    pub area_defect: f64,
    pub perimeter_defect: f64,
    /// `V - E + F`, 1 for a triangulated disk.
    pub euler_characteristic: i64,
}

#[derive(Clone, Copy)]
struct Site {
    pos: Point2<f64>,
    index: usize,
}

impl HasPosition for Site {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

/// Generate a mesh with target spacing `h`. The jitter stream for retries is
/// seeded with `seed`.
pub fn generate_mesh(curve: &SupportCurve, h: f64) -> Result<TriMesh> {
    generate_mesh_seeded(curve, h, 0)
}

pub fn generate_mesh_seeded(curve: &SupportCurve, h: f64, seed: u64) -> Result<TriMesh> {
    let perimeter = curve.perimeter();
    if !(h.is_finite() && h > 0.0 && h < perimeter / 8.0) {
        return Err(Error::BadSpec(format!(
            "mesh spacing h must satisfy 0 < h < perimeter/8 = {:.6}, got {h}",
            perimeter / 8.0
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = None;
    for attempt in 0..MAX_ATTEMPTS {
        let jitter = if attempt == 0 { 0.0 } else { 0.1 * h };
        match try_generate(curve, h, jitter, &mut rng) {
            Ok(mesh) => return Ok(mesh),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::MeshFailure("no attempt made".into())))
}

fn try_generate(curve: &SupportCurve, h: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Result<TriMesh> {
    let perimeter = curve.perimeter();
    let nb = (perimeter / h).ceil() as usize;
    let ds = perimeter / nb as f64;
    let boundary_theta: Vec<f64> = (0..nb).map(|i| curve.theta_at_arc_length(i as f64 * ds)).collect();
    let mut nodes: Vec<Vec2> = boundary_theta.iter().map(|&t| curve.point(t)).collect();

    let (lo, hi) = curve.bounding_box();
    let dy = h * 3f64.sqrt() / 2.0;
    let cx = 0.5 * (lo[0] + hi[0]);
    let cy = 0.5 * (lo[1] + hi[1]);
    let nx = ((hi[0] - lo[0]) / h).ceil() as i64 + 2;
    let ny = ((hi[1] - lo[1]) / dy).ceil() as i64 + 2;
    for j in -ny / 2 - 1..=ny / 2 + 1 {
        let shift = if j.rem_euclid(2) == 1 { 0.5 * h } else { 0.0 };
        for i in -nx / 2 - 1..=nx / 2 + 1 {
            let mut p = [cx + i as f64 * h + shift, cy + j as f64 * dy];
            if jitter > 0.0 {
                p[0] += rng.gen_range(-jitter..jitter);
                p[1] += rng.gen_range(-jitter..jitter);
            }
            if curve.distance_to_boundary(p) >= 0.5 * h {
                nodes.push(p);
            }
        }
    }

    let mut triangles = delaunay(&nodes)?;
    for _ in 0..SMOOTHING_SWEEPS {
        relax_interior(&mut nodes, &triangles, nb, curve, h);
        triangles = delaunay(&nodes)?;
    }

    let boundary_edges = (0..nb)
        .map(|i| {
            let (a, b) = (i, (i + 1) % nb);
            BoundaryEdge {
                a,
                b,
                theta_mid: curve.theta_at_arc_length((i as f64 + 0.5) * ds),
                length: norm(sub(nodes[b], nodes[a])),
            }
        })
        .collect();

    let mesh = TriMesh {
        nodes,
        triangles,
        boundary_edges,
        boundary_theta,
        h_target: h,
        domain_area: curve.area(),
        domain_perimeter: perimeter,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn delaunay(nodes: &[Vec2]) -> Result<Vec<[usize; 3]>> {
    let mut dt: DelaunayTriangulation<Site> = DelaunayTriangulation::new();
    for (index, p) in nodes.iter().enumerate() {
        dt.insert(Site { pos: Point2::new(p[0], p[1]), index })
            .map_err(|e| Error::MeshFailure(format!("insertion of node {index} failed: {e:?}")))?;
    }
    if dt.num_vertices() != nodes.len() {
        return Err(Error::MeshFailure("duplicate nodes collapsed during triangulation".into()));
    }
    let mut tris: Vec<[usize; 3]> = dt
        .inner_faces()
        .map(|f| {
            let v = f.vertices();
            let t = [v[0].data().index, v[1].data().index, v[2].data().index];
            if cross(sub(nodes[t[1]], nodes[t[0]]), sub(nodes[t[2]], nodes[t[0]])) < 0.0 {
                [t[0], t[2], t[1]]
            } else {
                t
            }
        })
        .collect();
    // Canonical order so the mesh does not depend on the triangulator's
    // internal face layout.
    for t in tris.iter_mut() {
        let k = (0..3).min_by_key(|&k| t[k]).unwrap();
        t.rotate_left(k);
    }
    tris.sort_unstable();
    Ok(tris)
}

fn relax_interior(nodes: &mut [Vec2], triangles: &[[usize; 3]], nb: usize, curve: &SupportCurve, h: f64) {
    let n = nodes.len();
    let mut sum = vec![[0.0, 0.0]; n];
    let mut count = vec![0usize; n];
    for (a, b) in unique_edges(triangles).keys().copied() {
        sum[a][0] += nodes[b][0];
        sum[a][1] += nodes[b][1];
        sum[b][0] += nodes[a][0];
        sum[b][1] += nodes[a][1];
        count[a] += 1;
        count[b] += 1;
    }
    for i in nb..n {
        if count[i] == 0 {
            continue;
        }
        let p = [sum[i][0] / count[i] as f64, sum[i][1] / count[i] as f64];
        if curve.distance_to_boundary(p) >= 0.35 * h {
            nodes[i] = p;
        }
    }
}

/// Map from sorted edge `(a, b)` with `a < b` to the triangles containing it.
fn unique_edges(triangles: &[[usize; 3]]) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (ti, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edges.entry((a.min(b), a.max(b))).or_default().push(ti);
        }
    }
    edges
}

fn angle_at(p: Vec2, q: Vec2, r: Vec2) -> f64 {
    // angle at p in triangle (p, q, r)
    let u = sub(q, p);
    let v = sub(r, p);
    cross(u, v).abs().atan2(u[0] * v[0] + u[1] * v[1])
}

impl TriMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn boundary_node_count(&self) -> usize {
        self.boundary_theta.len()
    }

    pub fn is_boundary_node(&self, i: usize) -> bool {
        i < self.boundary_theta.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * cross(sub(self.nodes[b], self.nodes[a]), sub(self.nodes[c], self.nodes[a]))
    }

    pub fn centroid(&self, t: usize) -> Vec2 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn boundary_length(&self) -> f64 {
        self.boundary_edges.iter().map(|e| e.length).sum()
    }

    /// Triangle adjacent to each boundary edge, in boundary-edge order.
    pub fn boundary_edge_triangles(&self) -> Vec<usize> {
        let edges = unique_edges(&self.triangles);
        self.boundary_edges
            .iter()
            .map(|e| edges[&(e.a.min(e.b), e.a.max(e.b))][0])
            .collect()
    }

    /// `cos alpha` at each boundary edge midpoint.
    pub fn edge_cos_alpha(&self, alpha: &AngleProfile) -> Vec<f64> {
        self.boundary_edges.iter().map(|e| alpha.cos_value(e.theta_mid)).collect()
    }

    fn validate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            if !(self.triangle_area(t) > 0.0) {
                return Err(Error::MeshFailure(format!("triangle {t} has nonpositive area")));
            }
        }
        let edges = unique_edges(&self.triangles);
        let mut hull: Vec<(usize, usize)> = edges
            .iter()
            .filter(|(_, ts)| ts.len() == 1)
            .map(|(&e, _)| e)
            .collect();
        let mut expected: Vec<(usize, usize)> =
            self.boundary_edges.iter().map(|e| (e.a.min(e.b), e.a.max(e.b))).collect();
        hull.sort_unstable();
        expected.sort_unstable();
        if hull != expected {
            return Err(Error::MeshFailure(
                "boundary of the triangulation is not the boundary node cycle".into(),
            ));
        }
        if edges.values().any(|ts| ts.len() > 2) {
            return Err(Error::MeshFailure("non-manifold edge".into()));
        }
        let q = mesh_quality_report(self);
        if q.delaunay_violations > 0 {
            return Err(Error::MeshFailure(format!("{} Delaunay violations", q.delaunay_violations)));
        }
        if q.min_angle_deg < MIN_ANGLE_DEG {
            return Err(Error::MeshFailure(format!(
                "minimum angle {:.2} deg below {MIN_ANGLE_DEG} deg",
                q.min_angle_deg
            )));
        }
        Ok(())
    }
}

pub fn mesh_quality_report(mesh: &TriMesh) -> MeshQuality {
    let mut min_angle = f64::INFINITY;
    let mut max_angle: f64 = 0.0;
    let edges = unique_edges(&mesh.triangles);
    let (mut min_edge, mut max_edge) = (f64::INFINITY, 0.0f64);
    for &(a, b) in edges.keys() {
        let l = norm(sub(mesh.nodes[a], mesh.nodes[b]));
        min_edge = min_edge.min(l);
        max_edge = max_edge.max(l);
    }
    for t in &mesh.triangles {
        for k in 0..3 {
            let ang = angle_at(mesh.nodes[t[k]], mesh.nodes[t[(k + 1) % 3]], mesh.nodes[t[(k + 2) % 3]]);
            min_angle = min_angle.min(ang);
            max_angle = max_angle.max(ang);
        }
    }
    let opposite = |ti: usize, a: usize, b: usize| -> f64 {
        let t = mesh.triangles[ti];
        let c = *t.iter().find(|&&v| v != a && v != b).unwrap();
        angle_at(mesh.nodes[c], mesh.nodes[a], mesh.nodes[b])
    };
    let mut violations = 0;
    let mut obtuse_boundary = 0;
    for (&(a, b), ts) in &edges {
        match ts.as_slice() {
            [t1, t2] => {
                if opposite(*t1, a, b) + opposite(*t2, a, b) > PI + DELAUNAY_SLACK {
                    violations += 1;
                }
            }
            [t1] => {
                if opposite(*t1, a, b) > 0.5 * PI {
                    obtuse_boundary += 1;
                }
            }
            _ => {}
        }
    }
    MeshQuality {
        nodes: mesh.nodes.len(),
        triangles: mesh.triangles.len(),
        min_angle_deg: min_angle.to_degrees(),
        max_angle_deg: max_angle.to_degrees(),
        min_edge,
        max_edge,
        delaunay_violations: violations,
        obtuse_boundary_angles: obtuse_boundary,
        area_defect: (mesh.total_area() - mesh.domain_area).abs(),
        perimeter_defect: (mesh.boundary_length() - mesh.domain_perimeter).abs(),
        euler_characteristic: mesh.nodes.len() as i64 - edges.len() as i64 + mesh.triangles.len() as i64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_boundary_count_and_area() {
        let c = SupportCurve::circle(1.0).unwrap();
        let m = generate_mesh(&c, 0.2).unwrap();
        assert_eq!(m.boundary_node_count(), 32);
        assert!((m.total_area() - PI).abs() < 0.01 * PI);
    }

    #[test]
    fn ellipse_topology() {
        let e = SupportCurve::ellipse(1.5, 1.0).unwrap();
        let m = generate_mesh(&e, 0.1).unwrap();
        let q = mesh_quality_report(&m);
        assert_eq!(q.euler_characteristic, 1);
        for w in m.boundary_edges.windows(2) {
            assert_eq!(w[0].b, w[1].a);
        }
        assert_eq!(m.boundary_edges.last().unwrap().b, m.boundary_edges[0].a);
    }

    #[test]
    fn coarse_spacing_rejected() {
        let c = SupportCurve::circle(1.0).unwrap();
        assert!(matches!(generate_mesh(&c, 2.0), Err(Error::BadSpec(_))));
        assert!(matches!(generate_mesh(&c, -0.1), Err(Error::BadSpec(_))));
    }

    #[test]
    fn quality_guarantees() {
        let c = SupportCurve::circle(1.0).unwrap();
        let m = generate_mesh(&c, 0.1).unwrap();
        let q = mesh_quality_report(&m);
        assert_eq!(q.delaunay_violations, 0);
        assert!(q.min_angle_deg >= MIN_ANGLE_DEG);
        assert!(q.max_edge <= 2.0 * m.h_target, "{q:?}");
    }

    #[test]
    fn area_defect_is_second_order() {
        let c = SupportCurve::circle(1.0).unwrap();
        let d1 = mesh_quality_report(&generate_mesh(&c, 0.1).unwrap()).area_defect;
        let d2 = mesh_quality_report(&generate_mesh(&c, 0.05).unwrap()).area_defect;
        let ratio = d1 / d2;
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn perimeter_defect_is_second_order() {
        let e = SupportCurve::ellipse(1.5, 1.0).unwrap();
        let d1 = mesh_quality_report(&generate_mesh(&e, 0.1).unwrap()).perimeter_defect;
        let d2 = mesh_quality_report(&generate_mesh(&e, 0.05).unwrap()).perimeter_defect;
        assert!((3.0..=5.0).contains(&(d1 / d2)), "ratio {}", d1 / d2);
    }

    #[test]
    fn deterministic_for_seed() {
        let e = SupportCurve::ellipse(1.5, 1.0).unwrap();
        let a = generate_mesh_seeded(&e, 0.1, 7).unwrap();
        let b = generate_mesh_seeded(&e, 0.1, 7).unwrap();
        assert_eq!(a, b);
    }
}
