//! Shared fixtures for the benchmarks.

use msflow_core::mesh::generate_mesh_seeded;
use msflow_core::{AngleProfile, P1Space, SupportCurve};

/// Unit disk meshed at `h` with the contact angle used throughout the
/// benchmarks.
pub fn disk(h: f64) -> (SupportCurve, P1Space, AngleProfile) {
    let curve = SupportCurve::circle(1.0).expect("unit circle");
    let mesh = generate_mesh_seeded(&curve, h, 0).expect("disk mesh");
    (curve, P1Space::new(mesh), AngleProfile::constant(2.0).expect("angle in range"))
}
