//! Electrical impedance tomography on the unit square.
//!
//! The crate has two halves that meet in [`recon`]:
//!
//! * a **forward solver** for the complete electrode model, discretized with
//!   lowest-order weak Galerkin elements on a uniform triangulation
//!   ([`mesh`], [`wg`], [`solver`], [`forward`]), and
//! * an **inversion stack** that recovers a piecewise-constant conductivity
//!   from boundary voltage data: adjoint-based misfit gradients
//!   ([`gradient`]), a total-variation penalty with its dual denoising solver
//!   ([`tv`]), and an accelerated proximal-gradient driver ([`fista`]).
//!
//! Conventions used throughout:
//!
//! * The domain is always the unit square `[0,1]^2`; meshes are uniform
//!   right-triangle grids with `2 * n * n` elements.
//! * Conductivity is piecewise constant per triangle and constrained to a box
//!   `[lambda, 1/lambda]` with `0 < lambda < 1`.
//! * Electrode currents and voltages live in the zero-sum subspace of
//!   `R^L`; every public entry point either requires or enforces this.
//!
//! # Example
//!
//! Solve the forward problem for a homogeneous medium and one trigonometric
//! current pattern:
//!
//! ```
//! use eitkit::forward::{assemble, solve_forward, ConductivityField, ElectrodeModel};
//! use eitkit::mesh::{build_uniform_mesh, electrode_layout};
//! use eitkit::recon::synth_currents;
//!
//! let mesh = build_uniform_mesh(8);
//! let map = electrode_layout(&mesh, 16, 0.125).unwrap();
//! let model = ElectrodeModel::uniform_contact(map, 1.0);
//! let sigma = ConductivityField::constant(&mesh, 1.0, 0.25);
//!
//! let system = assemble(&mesh, &model, &sigma);
//! let factor = system.factorize().unwrap();
//! let pattern = &synth_currents(16, 1)[0];
//! let sol = solve_forward(&system, &factor, pattern, None).unwrap();
//!
//! let mean: f64 = sol.voltages.iter().sum::<f64>() / 16.0;
//! assert!(mean.abs() < 1e-12, "electrode voltages must be zero-sum");
//! assert!(sol.residual < 1e-10, "direct solve must satisfy the full system");
//! ```

pub mod fista;
pub mod forward;
pub mod gradient;
pub mod mesh;
pub mod quad;
pub mod recon;
pub mod solver;
pub mod tv;
pub mod wg;

/// Crate version, for run manifests and reproducibility records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Errors produced by solvers and model constructors.
///
/// Geometry precondition violations (non-positive subdivision counts,
/// mismatched vector lengths, ...) are programming errors and panic instead.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An electrode layout could not be realized on the requested mesh.
    #[error("electrode layout error: {0}")]
    Layout(String),

    /// A model input failed validation (non-zero-sum current, conductivity
    /// outside its box, non-positive contact impedance, ...).
    #[error("invalid model input: {0}")]
    InvalidInput(String),

    /// A matrix factorization broke down; the reported pivot should have been
    /// strictly positive for a symmetric positive definite system.
    #[error("factorization breakdown at row {row}: pivot {pivot:.3e}")]
    Factorization { row: usize, pivot: f64 },

    /// An iterative solver ran out of iterations before reaching tolerance.
    #[error("{solver} did not converge in {iters} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iters: usize,
        residual: f64,
    },

    /// A computed quantity turned out non-finite.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
