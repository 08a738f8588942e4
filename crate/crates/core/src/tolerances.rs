//! Reference values and pinned tolerances shared by the acceptance and
//! property tests.

/// Published `1 + β₁` for `μ = 6, N = 1`.
pub const PAPER_ONE_PLUS_BETA1_MU6: f64 = 0.632;
/// Published `1 + a₁` for `μ = 15, N = 2`.
pub const PAPER_ONE_PLUS_A1_MU15: f64 = 1.746;
/// Published `1 + a₂` for `μ = 15, N = 2`.
pub const PAPER_ONE_PLUS_A2_MU15: f64 = 0.845;
/// Absolute tolerance on the published admissibility scalars.
pub const ADMISSIBILITY_TOL: f64 = 0.005;

/// `max |k(x, x) + μx/(2ν)|`.
pub const KERNEL_DIAGONAL_TOL: f64 = 1e-10;
/// Band for the PDE-residual ratio under grid doubling.
pub const KERNEL_RESIDUAL_RATIO: (f64, f64) = (3.0, 5.0);

/// Relative sup-norm residual of `(I − Φ)T v − v` and `T(I − Φ)v − v`.
pub const INVERSE_IDENTITY_TOL: f64 = 1e-8;
/// Entrywise gap between the assembled and per-vector `Φ_N`.
pub const ALGORITHM1_TOL: f64 = 1e-10;
/// Agreement of two evaluation paths of the feedback law.
pub const FEEDBACK_DUAL_PATH_TOL: f64 = 1e-10;
/// Agreement of the Woodbury and dense linear solvers.
pub const SOLVER_AGREEMENT_TOL: f64 = 1e-9;

/// Fitted rate must reach this fraction of the guaranteed rate.
pub const RATE_FRACTION: f64 = 0.9;
/// Lower bound on `‖u(T)‖` for the uncontrolled nonlinear equilibrium.
pub const EQUILIBRIUM_NORM_MIN: f64 = 0.5;
/// Upper bound on `‖u^{N_t} − u^{N_t−1}‖_∞ / δt` at the equilibrium.
pub const EQUILIBRIUM_DRIFT_MAX: f64 = 1e-3;
/// `‖u(T)‖ ≤ CONTROLLED_FINAL_FRACTION · ‖u₀‖` for the controlled nonlinear run.
pub const CONTROLLED_FINAL_FRACTION: f64 = 1e-2;

/// `max_n ‖u^n − T_N w^n‖ / ‖u₀‖` at `N_x = N_t = 500`.
pub const CONSISTENCY_MAX: f64 = 0.05;
/// Minimal reduction of the mismatch per combined halving.
pub const CONSISTENCY_RATIO_MIN: f64 = 1.8;
/// Band for the manufactured-solution error ratio per combined halving.
pub const ORDER_RATIO: (f64, f64) = (3.5, 4.5);

/// Relative tolerance on the minimal-mode `μ` interval.
pub const INTERVAL_REL_TOL: f64 = 1e-9;
/// Newton iteration budget per step at paper resolution.
pub const NEWTON_ITER_MAX: usize = 8;
