//! Minimal surface flow with prescribed contact angle on convex planar
//! domains.
//!
//! The crate provides exact boundary geometry from support functions, a
//! Delaunay mesher, lumped P1 operators, a semi-implicit flow integrator, a
//! translating-soliton solver and a set of numerical audits for the a priori
//! estimates satisfied by the flow.

pub mod audit;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod operators;
pub mod sparse;
pub mod translator;
pub mod vec2;

pub use error::{Error, Result};
pub use audit::{AuditContext, AuditRecord, AssumptionReport, Verdict};
pub use flow::{evolve, evolve_observed, step, time_derivative_field, FlowConfig, FlowProblem, FlowTrajectory, MonitorRow};
pub use geometry::{build_domain, AlphaSpec, AngleProfile, BoundaryFrame, ShapeSpec, SupportCurve};
pub use mesh::{generate_mesh, mesh_quality_report, MeshQuality, TriMesh};
pub use operators::{Forcing, ForcingModel, GradientDiagnostics, P1Space, ScalarField};
pub use translator::{
    compute_speed, radial_oracle, solve_regularized, solve_translator, solve_translator_report, RadialCap, RegularizedSolution,
    TranslatorOptions, TranslatorSolution,
};
