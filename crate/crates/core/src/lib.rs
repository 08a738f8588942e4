//! Boundary stabilization of the 1D reaction–diffusion equation
//! `u_t − νu_xx − αu (+ u³) = 0` by finite-dimensional backstepping.
//!
//! The crate covers the kernel series, the sine-mode projection, the
//! truncated transform and its inverse, closed-form design formulas, a
//! Crank–Nicolson simulator and the experiment/export plumbing used by the
//! `backstep` command-line tool.

pub mod analysis;
pub mod controller;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod simulator;
pub mod spectral;
pub mod tolerances;
pub mod transform;

pub use analysis::{design, fit_decay_rate, run_experiment, DecayFit, DesignGoal, DesignRequest, NormKind, Preset};
pub use controller::{
    bernoulli_envelope, feedback_control, gamma_rate, min_modes_rapid, minimal_mode_setup, rho_rate,
    smallness_threshold, DesignReport, FeedbackGain,
};
pub use error::{Error, Result};
pub use grid::{laplacian_matrix, trapezoid, Grid};
pub use kernel::{kernel_pde_residual, kernel_series, kernel_table, truncate_order, Kernel};
pub use simulator::{
    assemble_a, run_simulation, run_target_consistency, Control, Dynamics, InitialCondition, Model,
    SimulationConfig, Trajectory,
};
pub use spectral::{eigenvalue, projection_matrix, ModalBasis, ProjectionMatrix};
pub use transform::{phi_matrix, scan_admissibility, upsilon_matrix, OperatorNorms, TransformSet};
