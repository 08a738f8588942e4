//! Crank–Nicolson time stepping for the linear and cubic reaction–diffusion
//! models with boundary feedback.
//!
//! The spatial operator is `A = −νΔ − αI (+ μP_N)` with identity boundary
//! rows. Every system matrix is a tridiagonal core plus the rank-`N`
//! projection term, so the default solver applies the Woodbury identity on
//! top of the Thomas algorithm; a dense LU path is kept for cross-checks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::controller::FeedbackGain;
use crate::error::{check_len, Error, Result};
use crate::grid::{laplacian_matrix, Grid, Tridiagonal};
use crate::kernel::{kernel_table, Kernel, DEFAULT_TOL};
use crate::spectral::{sine_mode, ModalBasis};
use crate::transform::{TransformOptions, TransformSet};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Linear,
    Nonlinear,
}

/// Which continuous system the discrete operator represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dynamics {
    /// `A` with `μP_N` and the boundary law selected by [`Control`].
    #[serde(rename = "paper", alias = "paper_faithful")]
    PaperFaithful,
    /// `A` without `μP_N`.
    #[serde(rename = "plant")]
    Plant,
    /// `A` with `μP_N` and homogeneous Dirichlet data on both ends.
    #[serde(rename = "target")]
    Target,
}

impl Dynamics {
    fn has_projection(self) -> bool {
        !matches!(self, Dynamics::Plant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    Feedback,
    Off,
}

/// How the Newton iteration treats the feedback boundary value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NewtonBoundary {
    /// `u^{n,p+1}_{N_x} = g(u^{n,p})`: the boundary lags one inner iteration.
    #[default]
    Lagged,
    /// The linear feedback row enters the Jacobian, so the boundary satisfies
    /// `u_{N_x} = g(u)` at every iterate. Same fixed point, quadratic convergence.
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub boundary: NewtonBoundary,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: DEFAULT_NEWTON_TOL, max_iter: DEFAULT_NEWTON_MAX_ITER, boundary: NewtonBoundary::Lagged }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolverKind {
    #[default]
    Woodbury,
    Dense,
}

/// Initial state, sampled pointwise on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialCondition {
    /// `10x(x − 1/2)(x − 1)²`.
    Exp1,
    /// `sin(2πx) − sin(3πx)/2`.
    Exp2,
    /// `Σ sine[n]·e_{n+1}(x) + Σ poly[k]·x^k`.
    Series {
        #[serde(default)]
        sine: Vec<f64>,
        #[serde(default)]
        poly: Vec<f64>,
    },
    /// Values at the grid nodes.
    Samples(Vec<f64>),
}

impl InitialCondition {
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        let length = grid.length();
        let mut u = match self {
            InitialCondition::Exp1 => grid.sample(|x| 10.0 * x * (x - 0.5) * (x - 1.0) * (x - 1.0)),
            InitialCondition::Exp2 => grid.sample(|x| (2.0 * PI * x).sin() - 0.5 * (3.0 * PI * x).sin()),
            InitialCondition::Series { sine, poly } => grid.sample(|x| {
                let s: f64 = sine.iter().enumerate().map(|(n, c)| c * sine_mode(n + 1, length, x)).sum();
                let p = poly.iter().rev().fold(0.0, |acc, c| acc * x + c);
                s + p
            }),
            InitialCondition::Samples(v) => {
                check_len(grid.len(), v.len())?;
                v.clone()
            }
        };
        if u[0].abs() > 1e-12 {
            return Err(Error::invalid(format!("initial state must vanish at x = 0, got {}", u[0])));
        }
        u[0] = 0.0;
        Ok(u)
    }
}

/// Full run configuration; field names double as the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub nu: f64,
    pub alpha: f64,
    pub mu: f64,
    pub modes: usize,
    pub length: f64,
    pub nx: usize,
    pub nt: usize,
    pub tmax: f64,
    pub model: Model,
    pub dynamics: Dynamics,
    pub control: Control,
    pub u0: InitialCondition,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    #[serde(default)]
    pub newton_boundary: NewtonBoundary,
    #[serde(default)]
    pub solver: LinearSolverKind,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            nu: 1.0,
            alpha: 12.0,
            mu: 6.0,
            modes: 1,
            length: 1.0,
            nx: 1000,
            nt: 1000,
            tmax: 1.5,
            model: Model::Linear,
            dynamics: Dynamics::PaperFaithful,
            control: Control::Feedback,
            u0: InitialCondition::Exp1,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
            newton_boundary: NewtonBoundary::Lagged,
            solver: LinearSolverKind::Woodbury,
        }
    }
}

impl SimulationConfig {
    pub fn dt(&self) -> f64 {
        self.tmax / (self.nt - 1) as f64
    }

    /// Feedback only acts when the boundary is not pinned to zero.
    pub fn uses_feedback(&self) -> bool {
        self.control == Control::Feedback && self.dynamics != Dynamics::Target
    }

    pub fn newton_options(&self) -> NewtonOptions {
        NewtonOptions { tol: self.newton_tol, max_iter: self.newton_max_iter, boundary: self.newton_boundary }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("nu", self.nu), ("length", self.length), ("tmax", self.tmax), ("newton_tol", self.newton_tol)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("mu", self.mu)] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        if self.nx < 3 {
            return Err(Error::invalid(format!("nx must be at least 3, got {}", self.nx)));
        }
        if self.nt < 2 {
            return Err(Error::invalid(format!("nt must be at least 2, got {}", self.nt)));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::invalid("newton_max_iter must be at least 1"));
        }
        if self.modes == 0 && (self.uses_feedback() || self.dynamics.has_projection()) {
            return Err(Error::invalid("at least one controller mode is required"));
        }
        Ok(())
    }
}

/// `A = −νΔ − αI + μ dx W Wᵀ` with identity boundary rows.
#[derive(Debug, Clone)]
pub struct SystemOperator {
    grid: Grid,
    core: Tridiagonal,
    /// `(μ dx W` with zeroed boundary rows, `W)`.
    low_rank: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Assembles `A` for the given dynamics. `basis` supplies `P_N` and may be
/// omitted only when the projection term is absent or `μ = 0`.
pub fn assemble_a(
    nu: f64,
    alpha: f64,
    mu: f64,
    grid: &Grid,
    basis: Option<&ModalBasis>,
    dynamics: Dynamics,
) -> Result<SystemOperator> {
    let n = grid.len();
    let lap = laplacian_matrix(grid)?;
    let mut core = lap.scaled_plus_identity(-nu, -alpha);
    core.set_identity_row(0);
    core.set_identity_row(n - 1);
    let low_rank = if dynamics.has_projection() && mu != 0.0 {
        let basis = basis.ok_or_else(|| Error::invalid("projection term needs a modal basis"))?;
        check_len(n, basis.grid().len())?;
        let w = basis.w().clone();
        let mut left = &w * (mu * grid.dx());
        left.row_mut(0).fill(0.0);
        left.row_mut(n - 1).fill(0.0);
        Some((left, w))
    } else {
        None
    };
    Ok(SystemOperator { grid: grid.clone(), core, low_rank })
}

impl SystemOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.core.apply(v)?;
        if let Some((left, right)) = &self.low_rank {
            let c = right.transpose() * DVector::from_column_slice(v);
            let lr = left * c;
            for (o, x) in out.iter_mut().zip(lr.iter()) {
                *o += x;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = self.core.to_dense();
        if let Some((left, right)) = &self.low_rank {
            a += left * right.transpose();
        }
        a
    }
}

/// Factored `I + h·A + diag(extra)` with identity boundary rows, `h = δt/2`.
enum Factor {
    Thomas(Tridiagonal),
    Woodbury { core: Tridiagonal, z: DMatrix<f64>, right: DMatrix<f64>, cap: LU<f64, Dyn, Dyn> },
    Dense(LU<f64, Dyn, Dyn>),
}

fn solver_error(dt: f64, what: &str) -> Error {
    Error::Solver(format!(
        "{what} is singular at dt = {dt:e}; 1 + dt/2 * eig(A) vanishes for some eigenvalue, reduce dt"
    ))
}

impl Factor {
    /// `extra` adds to the interior diagonal; `rank_one = (c, r)` adds `c rᵀ`
    /// after the boundary rows are set.
    fn build(
        op: &SystemOperator,
        dt: f64,
        extra: Option<&[f64]>,
        rank_one: Option<(&[f64], &[f64])>,
        kind: LinearSolverKind,
    ) -> Result<Self> {
        let n = op.dim();
        let h = 0.5 * dt;
        let mut core = op.core.scaled_plus_identity(h, 1.0);
        if let Some(d) = extra {
            check_len(n, d.len())?;
            for i in 1..n - 1 {
                core.diag[i] += d[i];
            }
        }
        core.set_identity_row(0);
        core.set_identity_row(n - 1);

        let mut cols: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        if let Some((left, right)) = &op.low_rank {
            for c in 0..left.ncols() {
                cols.push((left.column(c).iter().map(|v| v * h).collect(), right.column(c).iter().copied().collect()));
            }
        }
        if let Some((c, r)) = rank_one {
            check_len(n, c.len())?;
            check_len(n, r.len())?;
            cols.push((c.to_vec(), r.to_vec()));
        }
        let k = cols.len();
        let left = DMatrix::from_fn(n, k, |i, j| cols[j].0[i]);
        let right = DMatrix::from_fn(n, k, |i, j| cols[j].1[i]);

        match kind {
            LinearSolverKind::Dense => {
                let mut m = core.to_dense();
                if k > 0 {
                    m += &left * right.transpose();
                }
                let lu = m.lu();
                if !lu.is_invertible() {
                    return Err(solver_error(dt, "Crank-Nicolson matrix"));
                }
                Ok(Factor::Dense(lu))
            }
            LinearSolverKind::Woodbury if k == 0 => Ok(Factor::Thomas(core)),
            LinearSolverKind::Woodbury => {
                let mut z = DMatrix::zeros(n, k);
                for c in 0..k {
                    z.set_column(c, &DVector::from_vec(core.solve(&cols[c].0)?));
                }
                let mut s = right.transpose() * &z;
                for i in 0..k {
                    s[(i, i)] += 1.0;
                }
                let cap = s.lu();
                if !cap.is_invertible() {
                    return Err(solver_error(dt, "capacitance matrix"));
                }
                Ok(Factor::Woodbury { core, z, right, cap })
            }
        }
    }

    fn solve(&self, rhs: &[f64], dt: f64) -> Result<Vec<f64>> {
        match self {
            Factor::Thomas(core) => core.solve(rhs),
            Factor::Dense(lu) => lu
                .solve(&DVector::from_column_slice(rhs))
                .map(|x| x.iter().copied().collect())
                .ok_or_else(|| solver_error(dt, "Crank-Nicolson matrix")),
            Factor::Woodbury { core, z, right, cap } => {
                let y = core.solve(rhs)?;
                let vy = right.transpose() * DVector::from_column_slice(&y);
                let c = cap.solve(&vy).ok_or_else(|| solver_error(dt, "capacitance matrix"))?;
                let corr = z * c;
                Ok(y.iter().zip(corr.iter()).map(|(a, b)| a - b).collect())
            }
        }
    }
}

/// Boundary value at `x = L` for the next time level.
#[derive(Debug, Clone, Copy)]
pub enum BoundaryLaw<'a> {
    Zero,
    Feedback(&'a FeedbackGain),
}

impl BoundaryLaw<'_> {
    pub fn value(&self, u: &[f64]) -> Result<f64> {
        match self {
            BoundaryLaw::Zero => Ok(0.0),
            BoundaryLaw::Feedback(g) => g.apply(u),
        }
    }
}

/// Crank–Nicolson stepper for a fixed operator and time step.
pub struct CrankNicolson {
    op: SystemOperator,
    dt: f64,
    kind: LinearSolverKind,
    linear: Factor,
}

impl CrankNicolson {
    pub fn new(op: SystemOperator, dt: f64, kind: LinearSolverKind) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let linear = Factor::build(&op, dt, None, None, kind)?;
        Ok(CrankNicolson { op, dt, kind, linear })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn operator(&self) -> &SystemOperator {
        &self.op
    }

    /// `(I − δt/2·A)u`.
    pub fn explicit_part(&self, u: &[f64]) -> Result<Vec<f64>> {
        let au = self.op.apply(u)?;
        Ok(u.iter().zip(&au).map(|(v, a)| v - 0.5 * self.dt * a).collect())
    }

    /// Solves `(I + δt/2·A)u^{n+1} = (I − δt/2·A)u^n` with `u^{n+1}_1 = 0`
    /// and `u^{n+1}_{N_x} = boundary_value`.
    pub fn step_linear(&self, u: &[f64], boundary_value: f64) -> Result<Vec<f64>> {
        self.step_linear_forced(u, boundary_value, None)
    }

    /// Same as [`step_linear`](Self::step_linear) with an extra interior
    /// right-hand side (already scaled by the time step).
    pub fn step_linear_forced(&self, u: &[f64], boundary_value: f64, forcing: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.op.dim();
        let mut rhs = self.explicit_part(u)?;
        if let Some(f) = forcing {
            check_len(n, f.len())?;
            for i in 1..n - 1 {
                rhs[i] += f[i];
            }
        }
        rhs[0] = 0.0;
        rhs[n - 1] = boundary_value;
        let mut next = self.linear.solve(&rhs, self.dt)?;
        next[0] = 0.0;
        next[n - 1] = boundary_value;
        Ok(next)
    }

    /// One step of the Newton-linearized scheme for the cubic model.
    /// Returns the new state and the number of Newton iterations.
    pub fn step_nonlinear(
        &self,
        u: &[f64],
        boundary: BoundaryLaw<'_>,
        opts: &NewtonOptions,
    ) -> Result<(Vec<f64>, usize)> {
        let n = self.op.dim();
        check_len(n, u.len())?;
        let h = 0.5 * self.dt;
        let mut b = self.explicit_part(u)?;
        for (bi, ui) in b.iter_mut().zip(u) {
            *bi -= h * ui * ui * ui;
        }
        // Coupled mode: boundary row becomes e_Nᵀ − gainᵀ.
        let coupling = match (opts.boundary, boundary) {
            (NewtonBoundary::Coupled, BoundaryLaw::Feedback(g)) => {
                let mut e = vec![0.0; n];
                e[n - 1] = 1.0;
                Some((e, g.gain().iter().map(|v| -v).collect::<Vec<f64>>()))
            }
            _ => None,
        };
        let mut up = u.to_vec();
        let mut history = Vec::new();
        loop {
            let gb = boundary.value(&up)?;
            let au = self.op.apply(&up)?;
            let mut rhs = vec![0.0; n];
            for i in 1..n - 1 {
                rhs[i] = b[i] - (up[i] + h * au[i]) - h * up[i] * up[i] * up[i];
            }
            rhs[0] = -up[0];
            rhs[n - 1] = gb - up[n - 1];
            let extra: Vec<f64> = up.iter().map(|v| 3.0 * h * v * v).collect();
            let rank_one = coupling.as_ref().map(|(c, r)| (c.as_slice(), r.as_slice()));
            let du = Factor::build(&self.op, self.dt, Some(&extra), rank_one, self.kind)?.solve(&rhs, self.dt)?;
            let step = du.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (v, d) in up.iter_mut().zip(&du) {
                *v += d;
            }
            up[0] = 0.0;
            if coupling.is_none() {
                up[n - 1] = gb;
            }
            history.push(step);
            if step <= opts.tol {
                return Ok((up, history.len()));
            }
            if history.len() >= opts.max_iter || !step.is_finite() {
                return Err(Error::NewtonNonconvergence { iterations: history.len(), last: step, history });
            }
        }
    }
}

/// Time history of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `g(u^n)`; under feedback `controls[n]` is the boundary value of level `n + 1`.
    pub controls: Vec<f64>,
    pub l2_norms: Vec<f64>,
    pub h1_norms: Vec<f64>,
    /// Newton iterations for each step (nonlinear runs only).
    pub newton_iters: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, grid: &Grid, t: f64, u: Vec<f64>) -> Result<()> {
        self.times.push(t);
        self.l2_norms.push(grid.l2_norm(&u)?);
        self.h1_norms.push(grid.h1_norm(&u)?);
        self.states.push(u);
        Ok(())
    }
}

/// Grid, kernel and transform shared by the runs of one parameter set.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid,
    pub basis: Option<ModalBasis>,
    pub kernel: Option<Kernel>,
    pub transform: Option<TransformSet>,
}

impl Setup {
    /// Builds what `config` needs: the modal basis whenever `μP_N` appears,
    /// the kernel and transform whenever feedback acts.
    pub fn for_config(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let grid = Grid::new(config.length, config.nx)?;
        if config.uses_feedback() {
            return Setup::with_transform(config);
        }
        let basis = if config.dynamics.has_projection() && config.mu != 0.0 {
            Some(ModalBasis::new(&grid, config.modes)?)
        } else {
            None
        };
        Ok(Setup { grid, basis, kernel: None, transform: None })
    }

    pub fn with_transform(config: &SimulationConfig) -> Result<Self> {
        let grid = Grid::new(config.length, config.nx)?;
        let kernel = kernel_table(&grid, config.mu, config.nu, DEFAULT_TOL)?;
        let set = TransformSet::build(&kernel, config.modes, TransformOptions::default())?;
        Ok(Setup { grid, basis: Some(set.basis().clone()), kernel: Some(kernel), transform: Some(set) })
    }
}

/// Runs a configuration from scratch.
pub fn run_simulation(config: &SimulationConfig) -> Result<Trajectory> {
    let setup = Setup::for_config(config)?;
    run_with_setup(config, &setup, None)
}

/// Runs `config` on a prepared setup, optionally overriding the initial state.
pub fn run_with_setup(config: &SimulationConfig, setup: &Setup, u0: Option<Vec<f64>>) -> Result<Trajectory> {
    config.validate()?;
    let grid = &setup.grid;
    check_len(config.nx, grid.len())?;
    let op = assemble_a(config.nu, config.alpha, config.mu, grid, setup.basis.as_ref(), config.dynamics)?;
    let dt = config.dt();
    let stepper = CrankNicolson::new(op, dt, config.solver)?;

    let gain = if config.uses_feedback() {
        let kernel = setup.kernel.as_ref().ok_or_else(|| Error::invalid("feedback needs a kernel"))?;
        let set = setup.transform.as_ref().ok_or_else(|| Error::invalid("feedback needs a transform"))?;
        Some(FeedbackGain::new(kernel, set)?)
    } else {
        None
    };
    let boundary = match &gain {
        Some(g) => BoundaryLaw::Feedback(g),
        None => BoundaryLaw::Zero,
    };

    let newton = config.newton_options();
    let mut u = match u0 {
        Some(v) => InitialCondition::Samples(v).sample(grid)?,
        None => config.u0.sample(grid)?,
    };
    let mut traj = Trajectory::default();
    traj.push(grid, 0.0, u.clone())?;
    for step in 1..config.nt {
        let abort = |cause: Error, traj: &Trajectory| Error::Aborted {
            step,
            cause: Box::new(cause),
            partial: Box::new(traj.clone()),
        };
        let next = match config.model {
            Model::Linear => {
                let g = match boundary.value(&u) {
                    Ok(g) => g,
                    Err(e) => return Err(abort(e, &traj)),
                };
                traj.controls.push(g);
                stepper.step_linear(&u, g)
            }
            Model::Nonlinear => stepper
                .step_nonlinear(&u, boundary, &newton)
                .map(|(v, iters)| {
                    traj.controls.push(v[v.len() - 1]);
                    traj.newton_iters.push(iters);
                    v
                }),
        };
        let next = match next {
            Ok(v) if v.iter().all(|x| x.is_finite()) => v,
            Ok(_) => return Err(abort(Error::Solver("non-finite state".into()), &traj)),
            Err(e) => return Err(abort(e, &traj)),
        };
        traj.push(grid, step as f64 * dt, next.clone())?;
        u = next;
    }
    traj.controls.push(boundary.value(&u)?);
    Ok(traj)
}

/// Plant and target runs linked through the transform.
#[derive(Debug, Clone)]
pub struct Consistency {
    pub plant: Trajectory,
    pub target: Trajectory,
    /// `‖u^n − T_N w^n‖₂ / ‖u₀‖₂` per time level.
    pub mismatch: Vec<f64>,
}

impl Consistency {
    pub fn max_mismatch(&self) -> f64 {
        self.mismatch.iter().copied().fold(0.0, f64::max)
    }
}

/// Simulates the plant under feedback and the target model from
/// `w₀ = (I − Φ_N)u₀`, and compares `u^n` with `T_N w^n`.
pub fn run_target_consistency(config: &SimulationConfig) -> Result<Consistency> {
    if config.model != Model::Linear {
        return Err(Error::invalid("target consistency is defined for the linear model"));
    }
    let plant_cfg =
        SimulationConfig { dynamics: Dynamics::Plant, control: Control::Feedback, ..config.clone() };
    let target_cfg = SimulationConfig { dynamics: Dynamics::Target, control: Control::Off, ..config.clone() };
    let setup = Setup::with_transform(&plant_cfg)?;
    let set = setup.transform.as_ref().expect("transform built");
    let u0 = config.u0.sample(&setup.grid)?;
    let w0 = set.inverse_transform(&u0)?;
    let plant = run_with_setup(&plant_cfg, &setup, Some(u0.clone()))?;
    let target = run_with_setup(&target_cfg, &setup, Some(w0))?;
    let grid = &setup.grid;
    let scale = grid.l2_norm(&u0)?;
    if !(scale > 0.0) {
        return Err(Error::invalid("initial state has zero norm"));
    }
    let mismatch = plant
        .states
        .iter()
        .zip(&target.states)
        .map(|(u, w)| {
            let tw = set.forward_transform(w)?;
            let d: Vec<f64> = u.iter().zip(&tw).map(|(a, b)| a - b).collect();
            Ok(grid.l2_norm(&d)? / scale)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Consistency { plant, target, mismatch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::eigenvalue;

    fn small_config() -> SimulationConfig {
        SimulationConfig { nx: 80, nt: 60, tmax: 0.5, ..SimulationConfig::default() }
    }

    #[test]
    fn operator_on_first_mode() {
        let g = Grid::new(1.0, 400).unwrap();
        let b = ModalBasis::new(&g, 2).unwrap();
        let e1 = b.mode(1);
        let l1 = eigenvalue(1, 1.0).unwrap();
        let plant = assemble_a(1.0, 12.0, 6.0, &g, Some(&b), Dynamics::Plant).unwrap().apply(&e1).unwrap();
        let target = assemble_a(1.0, 12.0, 6.0, &g, Some(&b), Dynamics::Target).unwrap().apply(&e1).unwrap();
        for i in 1..399 {
            assert!((plant[i] - (l1 - 12.0) * e1[i]).abs() < 1e-3);
            assert!((target[i] - (l1 - 12.0 + 6.0) * e1[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_mu_collapses_dynamics() {
        let g = Grid::new(1.0, 30).unwrap();
        let b = ModalBasis::new(&g, 2).unwrap();
        let a = assemble_a(1.0, 3.0, 0.0, &g, Some(&b), Dynamics::PaperFaithful).unwrap().to_dense();
        let p = assemble_a(1.0, 3.0, 0.0, &g, Some(&b), Dynamics::Plant).unwrap().to_dense();
        assert_eq!(a, p);
    }

    #[test]
    fn equilibrium_stays_put() {
        let g = Grid::new(1.0, 40).unwrap();
        let b = ModalBasis::new(&g, 1).unwrap();
        let op = assemble_a(1.0, 12.0, 6.0, &g, Some(&b), Dynamics::PaperFaithful).unwrap();
        let cn = CrankNicolson::new(op, 0.01, LinearSolverKind::Woodbury).unwrap();
        let zero = vec![0.0; 40];
        assert_eq!(cn.step_linear(&zero, 0.0).unwrap(), zero);
        let (next, iters) = cn.step_nonlinear(&zero, BoundaryLaw::Zero, &NewtonOptions::default()).unwrap();
        assert_eq!(next, zero);
        assert_eq!(iters, 1);
    }

    #[test]
    fn woodbury_matches_dense() {
        let g = Grid::new(1.0, 60).unwrap();
        let b = ModalBasis::new(&g, 3).unwrap();
        let u = g.sample(|x| x * (1.0 - x) * (5.0 * x).cos());
        for dynamics in [Dynamics::PaperFaithful, Dynamics::Plant] {
            let op = assemble_a(1.0, 15.0, 15.0, &g, Some(&b), dynamics).unwrap();
            let w = CrankNicolson::new(op.clone(), 0.003, LinearSolverKind::Woodbury).unwrap();
            let d = CrankNicolson::new(op, 0.003, LinearSolverKind::Dense).unwrap();
            let a = w.step_linear(&u, 0.1).unwrap();
            let c = d.step_linear(&u, 0.1).unwrap();
            for (x, y) in a.iter().zip(&c) {
                assert!((x - y).abs() < 1e-9);
            }
            let (a, _) = w.step_nonlinear(&u, BoundaryLaw::Zero, &NewtonOptions::default()).unwrap();
            let (c, _) = d.step_nonlinear(&u, BoundaryLaw::Zero, &NewtonOptions::default()).unwrap();
            for (x, y) in a.iter().zip(&c) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn newton_cap_reports_history() {
        let g = Grid::new(1.0, 30).unwrap();
        let op = assemble_a(1.0, 15.0, 0.0, &g, None, Dynamics::Plant).unwrap();
        let cn = CrankNicolson::new(op, 0.05, LinearSolverKind::Woodbury).unwrap();
        let u = g.sample(|x| 3.0 * (PI * x).sin());
        match cn.step_nonlinear(&u, BoundaryLaw::Zero, &NewtonOptions { max_iter: 1, ..NewtonOptions::default() }) {
            Err(Error::NewtonNonconvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(history.len(), 1);
            }
            other => panic!("expected nonconvergence, got {other:?}"),
        }
    }

    #[test]
    fn left_boundary_and_lagged_control() {
        let cfg = small_config();
        let traj = run_simulation(&cfg).unwrap();
        assert_eq!(traj.len(), cfg.nt);
        for n in 0..cfg.nt {
            assert_eq!(traj.states[n][0], 0.0);
        }
        for n in 0..cfg.nt - 1 {
            assert_eq!(traj.controls[n], traj.states[n + 1][cfg.nx - 1]);
        }
        let nl = run_simulation(&SimulationConfig {
            model: Model::Nonlinear,
            alpha: 15.0,
            mu: 15.0,
            modes: 2,
            u0: InitialCondition::Exp2,
            ..cfg
        })
        .unwrap();
        for n in 0..nl.len() - 1 {
            assert_eq!(nl.controls[n], nl.states[n + 1][nl.states[n].len() - 1]);
        }
        assert_eq!(nl.newton_iters.len(), nl.len() - 1);
    }

    #[test]
    fn config_validation() {
        assert!(SimulationConfig { nt: 1, ..small_config() }.validate().is_err());
        assert!(SimulationConfig { newton_tol: 0.0, ..small_config() }.validate().is_err());
        assert!(SimulationConfig { modes: 0, ..small_config() }.validate().is_err());
        let ok = SimulationConfig { modes: 0, dynamics: Dynamics::Plant, control: Control::Off, ..small_config() };
        assert!(run_simulation(&ok).is_ok());
    }

    #[test]
    fn initial_condition_forms() {
        let g = Grid::new(1.0, 11).unwrap();
        let s = InitialCondition::Series { sine: vec![0.0, 2.0], poly: vec![0.0, 1.0, -1.0] }.sample(&g).unwrap();
        for (i, x) in g.nodes().iter().enumerate() {
            let expect = 2.0 * sine_mode(2, 1.0, *x) + x - x * x;
            assert!((s[i] - expect).abs() < 1e-14);
        }
        assert!(InitialCondition::Series { sine: vec![], poly: vec![1.0] }.sample(&g).is_err());
        assert!(InitialCondition::Samples(vec![0.0; 5]).sample(&g).is_err());
        let json = serde_json::to_string(&InitialCondition::Exp1).unwrap();
        assert_eq!(json, "\"exp1\"");
    }

    #[test]
    fn dynamics_names() {
        assert_eq!(serde_json::to_string(&Dynamics::PaperFaithful).unwrap(), "\"paper\"");
        let d: Dynamics = serde_json::from_str("\"paper_faithful\"").unwrap();
        assert_eq!(d, Dynamics::PaperFaithful);
    }

    #[test]
    fn zero_mu_consistency_is_exact() {
        let cfg = SimulationConfig { mu: 0.0, nx: 60, nt: 40, tmax: 0.2, ..SimulationConfig::default() };
        let c = run_target_consistency(&cfg).unwrap();
        assert!(c.max_mismatch() <= 1e-12);
        assert!(c.mismatch[0] <= 1e-12);
    }
}
