//! Deterministic two-species Vlasov-Poisson-Boltzmann (VPB) kinetic solver on the
//! periodic torus `[-1/2, 1/2]^3`.
//!
//! The solver advances the number densities `F±(t, x, v)` of a two-species plasma
//! under the electrostatic field of its own charge imbalance, with binary collisions
//! under a hard-potential Grad-cutoff kernel. The time advance is a per-step Picard
//! iteration whose passes are mild-solution (Duhamel) updates along field-driven
//! backward characteristics, carried in exponentially weighted perturbation
//! variables `h± = w_β · (F± − μ)/√μ` around the global Maxwellian `μ`.
//!
//! Module map:
//! - [`phase_grid`]: spatial torus grid, truncated velocity cube, sphere quadrature.
//! - [`states`]: Maxwellian, time-velocity weights, `F ↔ f ↔ h` conversions,
//!   initial data with neutrality enforcement, snapshot persistence.
//! - [`collision`]: the bilinear operator `Q`, collision frequency `ν`, linearized
//!   operator `L = ν − K` with precomputed kernel matrices, the nonlinear operator
//!   `Γ±`, and kernel-estimate validators.
//! - [`field`]: spectral Poisson solve with zero-mean gauge and field-bound reports.
//! - [`characteristics`]: backward characteristic ODEs, variational Jacobians, and
//!   the free-streaming monitor.
//! - [`projection`]: hydrodynamic projection onto the six-dimensional null space of
//!   `L` and the neutral-energy identity.
//! - [`stepper`]: the per-step Picard/mild-solution time advance.
//! - [`diagnostics`]: conservation defects, entropies, weighted norms, decay fits,
//!   CSV/JSON emission.

pub mod characteristics;
pub mod collision;
pub mod diagnostics;
pub mod field;
pub mod phase_grid;
pub mod projection;
pub mod scalar;
pub mod states;
pub mod stepper;

pub use scalar::Scalar;

/// Default scalar type for end-user entry points.
pub type Real = f64;

/// Concrete aliases for the main domain types at both supported precisions.
pub type PhaseGrid64 = phase_grid::PhaseGrid<f64>;
pub type PhaseGrid32 = phase_grid::PhaseGrid<f32>;
pub type DistributionPair64 = states::DistributionPair<f64>;
pub type DistributionPair32 = states::DistributionPair<f32>;
pub type CollisionTables64 = collision::CollisionTables<f64>;
pub type CollisionTables32 = collision::CollisionTables<f32>;
pub type FieldState64 = field::FieldState<f64>;
pub type FieldState32 = field::FieldState<f32>;

/// Errors produced by solver construction and operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("size mismatch in {context}: expected {expected}, got {got}")]
    SizeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Numerics(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
