use thiserror::Error;

/// Errors raised by the geometry, meshing and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("bad specification: {0}")]
    BadSpec(String),
    #[error("domain is not strictly convex: min radius of curvature {min_rho:.3e} at theta = {theta:.6}")]
    ConvexityViolation { min_rho: f64, theta: f64 },
    #[error("contact angle leaves (0, pi): alpha = {alpha:.6} at theta = {theta:.6}")]
    AngleOutOfRange { alpha: f64, theta: f64 },
    #[error("mesh generation failed: {0}")]
    MeshFailure(String),
    #[error("linear solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    LinearSolveFailure { residual: f64, iterations: usize },
    #[error("non-finite value in field at node {node}")]
    NonFiniteField { node: usize },
    #[error("nonlinear solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("speed is only defined implicitly for gradient-dependent forcing")]
    GradientDependentForcing,
    #[error("cap is not a graph: |cos alpha| * R = {0:.6} >= 1")]
    NonGraphical(f64),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("forcing depends on the gradient; audit requires H = H(x)")]
    ModelMismatch,
    #[error("trajectories are not comparable: {0}")]
    ConfigMismatch(String),
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
