//! Closed-form design formulas and the boundary feedback law.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::kernel::Kernel;
use crate::spectral::eigenvalue;
use crate::transform::{OperatorNorms, TransformSet};

/// Above this many modes the rapid-stabilization condition is reported as infeasible.
pub const MODE_CAP: f64 = 1e6;

/// Relative tolerance for `α/ν` hitting an eigenvalue.
pub const SPECTRUM_TOL: f64 = 1e-12;

/// Default Gagliardo–Nirenberg constant; the true value is not known in closed form.
pub const DEFAULT_GN_CONSTANT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    /// `value > 0`.
    pub decaying: bool,
    /// `μ > α − νλ₁`.
    pub mu_condition: bool,
}

fn lambda1(length: f64) -> Result<f64> {
    eigenvalue(1, length)
}

/// Rapid-stabilization rate `γ = νλ₁ − α + μ(1 − 1/(N+1))`.
pub fn gamma_rate(nu: f64, alpha: f64, mu: f64, modes: usize, length: f64) -> Result<Rate> {
    let l1 = lambda1(length)?;
    let value = nu * l1 - alpha + mu * (1.0 - 1.0 / (modes as f64 + 1.0));
    Ok(Rate { value, decaying: value > 0.0, mu_condition: mu > alpha - nu * l1 })
}

/// Minimal-mode rate `ρ = νλ₁ − α + (μ/2)(1 − 1/(N+1)²)`.
pub fn rho_rate(nu: f64, alpha: f64, mu: f64, modes: usize, length: f64) -> Result<Rate> {
    let l1 = lambda1(length)?;
    let np1 = modes as f64 + 1.0;
    let value = nu * l1 - alpha + 0.5 * mu * (1.0 - 1.0 / (np1 * np1));
    Ok(Rate { value, decaying: value > 0.0, mu_condition: mu > alpha - nu * l1 })
}

/// Right-hand side of the mode-count condition
/// `N > max{μ/(2νλ₁) − 1, μ/(μ + νλ₁ − α) − 1}`.
pub fn rapid_mode_bound(nu: f64, alpha: f64, mu: f64, length: f64) -> Result<f64> {
    let l1 = lambda1(length)?;
    let denom = mu + nu * l1 - alpha;
    if !(denom > 0.0) {
        return Err(Error::Infeasible(format!(
            "mu = {mu} must exceed alpha - nu*lambda_1 = {}",
            alpha - nu * l1
        )));
    }
    Ok((mu / (2.0 * nu * l1) - 1.0).max(mu / denom - 1.0))
}

/// `N > bound` with exact comparison.
pub fn satisfies_rapid_condition(modes: usize, bound: f64) -> bool {
    modes as f64 > bound
}

/// Smallest integer `N ≥ 1` strictly above [`rapid_mode_bound`].
pub fn min_modes_rapid(nu: f64, alpha: f64, mu: f64, length: f64) -> Result<usize> {
    if !(nu > 0.0) {
        return Err(Error::invalid(format!("nu must be positive, got {nu}")));
    }
    let bound = rapid_mode_bound(nu, alpha, mu, length)?;
    if !(bound < MODE_CAP) {
        return Err(Error::Infeasible(format!("mode bound {bound:e} exceeds the cap of {MODE_CAP:e}")));
    }
    let mut n = if bound < 0.0 { 1 } else { bound.floor() as usize + 1 };
    while !satisfies_rapid_condition(n, bound) {
        n += 1;
    }
    Ok(n.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalModeDesign {
    /// Instability level: number of `j` with `νλ_j < α`.
    pub modes: usize,
    /// Open interval of admissible `μ`, `None` if empty.
    pub mu_interval: Option<(f64, f64)>,
    /// `ρ` at the interval midpoint.
    pub rho_mid: Option<f64>,
}

impl MinimalModeDesign {
    pub fn plant_stable(&self) -> bool {
        self.modes == 0
    }
}

/// Uses as many modes as there are unstable eigenvalues and returns the
/// interval `2(α − νλ₁)(1 − 1/(N+1)²)^{-1} < μ < 2νλ_{N+1}`.
///
/// For a stable plant (`N = 0`) the interval is `(0, 2νλ₁)`.
pub fn minimal_mode_setup(nu: f64, alpha: f64, length: f64) -> Result<MinimalModeDesign> {
    if !(nu > 0.0) {
        return Err(Error::invalid(format!("nu must be positive, got {nu}")));
    }
    let ratio = alpha / nu;
    let mut modes = 0usize;
    loop {
        let j = modes + 1;
        let lj = eigenvalue(j, length)?;
        if (ratio - lj).abs() <= SPECTRUM_TOL * lj.max(1.0) {
            return Err(Error::DegenerateSpectrum { ratio, j, lambda: lj });
        }
        if lj < ratio {
            modes = j;
        } else {
            break;
        }
    }
    let l1 = lambda1(length)?;
    let upper = 2.0 * nu * eigenvalue(modes + 1, length)?;
    let lower = if modes == 0 {
        0.0
    } else {
        let np1 = modes as f64 + 1.0;
        2.0 * (alpha - nu * l1) / (1.0 - 1.0 / (np1 * np1))
    };
    if lower < upper {
        let mid = 0.5 * (lower + upper);
        let rho = rho_rate(nu, alpha, mid, modes, length)?.value;
        Ok(MinimalModeDesign { modes, mu_interval: Some((lower, upper)), rho_mid: Some(rho) })
    } else {
        Ok(MinimalModeDesign { modes, mu_interval: None, rho_mid: None })
    }
}

/// `c₁ = c*·‖T_N‖_{H¹→H¹}·‖T_N‖²_{2→2}`.
pub fn c1_constant(gn_constant: f64, norms: &OperatorNorms) -> f64 {
    gn_constant * norms.norm_t_h1 * norms.norm_t_l2 * norms.norm_t_l2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallnessBound {
    pub epsilon: f64,
    /// Admissible radius for `‖u₀^{(ℓ)}‖²`.
    pub bound: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SmallnessInput {
    pub nu: f64,
    pub alpha: f64,
    pub mu: f64,
    pub modes: usize,
    pub length: f64,
    /// Regularity level `ℓ ∈ {0, 1}`.
    pub level: u32,
    pub d: f64,
    pub c0: f64,
    pub c1: f64,
    /// `‖T_N^{-1}‖` in `H^ℓ`.
    pub norm_tinv: f64,
}

/// `d·√(ε(2γ − ελ₁))·λ₁^ℓ/(c₀c₁)·‖T_N^{-1}‖^{-2}` with `ε` maximising
/// `ε(2γ − ελ₁)` under `ελ₁ ≤ max{ν − μ/(N+1), 2γ}`.
pub fn smallness_threshold(input: &SmallnessInput) -> Result<SmallnessBound> {
    if input.level > 1 {
        return Err(Error::invalid(format!("regularity level must be 0 or 1, got {}", input.level)));
    }
    if !(input.d > 0.0 && input.d < 1.0) {
        return Err(Error::invalid(format!("d must lie in (0, 1), got {}", input.d)));
    }
    let l1 = lambda1(input.length)?;
    let gamma = gamma_rate(input.nu, input.alpha, input.mu, input.modes, input.length)?.value;
    if !(gamma > 0.0) {
        return Err(Error::Infeasible(format!("gamma = {gamma} is not positive")));
    }
    let window = (input.nu - input.mu / (input.modes as f64 + 1.0)).max(2.0 * gamma) / l1;
    if !(window > 0.0) {
        return Err(Error::Infeasible("empty epsilon window".into()));
    }
    let epsilon = (gamma / l1).min(window);
    let product = epsilon * (2.0 * gamma - epsilon * l1);
    if !(product > 0.0) {
        return Err(Error::Infeasible("epsilon window gives no decay margin".into()));
    }
    let bound = input.d * product.sqrt() * l1.powi(input.level as i32)
        / (input.c0 * input.c1)
        / (input.norm_tinv * input.norm_tinv);
    Ok(SmallnessBound { epsilon, bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub admissible: bool,
    pub bound: f64,
}

/// Decay envelope for `y' ≤ −a y + b y³`: admissible iff `y₀ ≤ d√(a/b)`,
/// bound `y₀ e^{−at}/√(1 − d²)`.
pub fn bernoulli_envelope(a: f64, b: f64, d: f64, y0: f64, t: f64) -> Result<Envelope> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid("Bernoulli envelope needs a, b > 0"));
    }
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::invalid(format!("d must lie in (0, 1), got {d}")));
    }
    let admissible = y0 <= d * (a / b).sqrt();
    let bound = y0 * (-a * t).exp() / (1.0 - d * d).sqrt();
    Ok(Envelope { admissible, bound })
}

/// `g(u) = ∫₀ᴸ k(L, y) P_N[(I − Φ_N)u](y) dy` by the trapezoidal rule.
pub fn feedback_control(u: &[f64], kernel: &Kernel, set: &TransformSet) -> Result<f64> {
    let grid = set.grid();
    check_len(grid.len(), u.len())?;
    check_len(grid.len(), kernel.grid().len())?;
    let w = set.inverse_transform(u)?;
    let pw = set.projection().apply(&w)?;
    let integrand: Vec<f64> = kernel.boundary_row().iter().zip(&pw).map(|(k, p)| k * p).collect();
    grid.trapezoid(&integrand)
}

/// The feedback law folded into a single gain vector, `g(u) = gain · u`.
#[derive(Debug, Clone)]
pub struct FeedbackGain {
    gain: Vec<f64>,
}

impl FeedbackGain {
    pub fn new(kernel: &Kernel, set: &TransformSet) -> Result<Self> {
        let grid: &Grid = set.grid();
        let n = grid.len();
        check_len(n, kernel.grid().len())?;
        // gain = (I − Φ)ᵀ Pᵀ (w ∘ k(L, ·))
        let weighted: Vec<f64> =
            grid.trapezoid_weights().iter().zip(kernel.boundary_row()).map(|(w, k)| w * k).collect();
        let v = nalgebra::DVector::from_vec(weighted);
        let pv = set.projection().matrix().transpose() * v;
        let gain = &pv - set.phi().transpose() * &pv;
        Ok(FeedbackGain { gain: gain.iter().copied().collect() })
    }

    pub fn apply(&self, u: &[f64]) -> Result<f64> {
        check_len(self.gain.len(), u.len())?;
        Ok(self.gain.iter().zip(u).map(|(g, v)| g * v).sum())
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }
}

/// Summary of a controller design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub nu: f64,
    pub alpha: f64,
    pub mu: f64,
    pub modes: usize,
    pub length: f64,
    pub lambda1: f64,
    pub gamma: f64,
    pub rho: f64,
    /// `max{μ/(2νλ₁) − 1, μ/(μ + νλ₁ − α) − 1}`, absent when `μ ≤ α − νλ₁`.
    pub rapid_mode_bound: Option<f64>,
    pub rapid_condition_met: bool,
    pub n_min_rapid: Option<usize>,
    pub instability_level: usize,
    pub mu_interval: Option<(f64, f64)>,
    pub kernel_order: Option<usize>,
    /// `1 + a_j` for `j = 1..N`.
    pub admissibility: Option<Vec<f64>>,
    pub inverse_residual: Option<f64>,
    pub norms: Option<OperatorNorms>,
    pub gn_constant: f64,
    pub smallness_bound: Option<f64>,
    pub notes: Vec<String>,
}

impl DesignReport {
    /// Formula-only report (no transform built).
    pub fn from_formulas(nu: f64, alpha: f64, mu: f64, modes: usize, length: f64) -> Result<Self> {
        let l1 = lambda1(length)?;
        let gamma = gamma_rate(nu, alpha, mu, modes, length)?.value;
        let rho = rho_rate(nu, alpha, mu, modes, length)?.value;
        let bound = rapid_mode_bound(nu, alpha, mu, length).ok();
        let n_min = min_modes_rapid(nu, alpha, mu, length).ok();
        let mut instability_level = 0;
        let mut j = 1;
        while nu * eigenvalue(j, length)? < alpha {
            instability_level = j;
            j += 1;
        }
        let mu_interval = minimal_mode_setup(nu, alpha, length).ok().and_then(|m| m.mu_interval);
        Ok(DesignReport {
            nu,
            alpha,
            mu,
            modes,
            length,
            lambda1: l1,
            gamma,
            rho,
            rapid_mode_bound: bound,
            rapid_condition_met: bound.is_some_and(|b| satisfies_rapid_condition(modes, b)),
            n_min_rapid: n_min,
            instability_level,
            mu_interval,
            kernel_order: None,
            admissibility: None,
            inverse_residual: None,
            norms: None,
            gn_constant: DEFAULT_GN_CONSTANT,
            smallness_bound: None,
            notes: Vec::new(),
        })
    }

    /// Adds the transform-derived fields and, when `γ > 0`, the L² smallness
    /// radius with `d = 1/2`.
    pub fn with_transform(mut self, set: &TransformSet, gn_constant: f64) -> Result<Self> {
        let norms = set.operator_norms()?;
        self.kernel_order = Some(set.kernel_order());
        self.admissibility = Some(set.admissibility().iter().map(|a| 1.0 + a).collect());
        self.inverse_residual = Some(set.inverse_residual());
        self.norms = Some(norms);
        self.gn_constant = gn_constant;
        if self.gamma > 0.0 {
            let input = SmallnessInput {
                nu: self.nu,
                alpha: self.alpha,
                mu: self.mu,
                modes: self.modes,
                length: self.length,
                level: 0,
                d: 0.5,
                c0: norms.c0,
                c1: c1_constant(gn_constant, &norms),
                norm_tinv: norms.c0,
            };
            self.smallness_bound = smallness_threshold(&input).ok().map(|s| s.bound);
        }
        Ok(self)
    }
}
