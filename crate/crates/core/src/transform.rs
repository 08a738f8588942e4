//! Discrete backstepping transform `T_N = I + Υ_k P_N` and its inverse
//! `I − Φ_N`.
//!
//! `Φ_N` is produced by the mode-by-mode recursion
//!
//! ```text
//! Φ_j φ = (I − Φ_{j−1})[Υ_k P_j φ]
//!         − ((I − Φ_{j−1})[Υ_k P_j φ], e_j)₂ / (1 + a_j) · (I − Φ_{j−1})[Υ_k e_j]
//! a_j   = ((I − Φ_{j−1})[Υ_k e_j], e_j)₂,        Φ_0 = 0,
//! ```
//!
//! which is linear in `φ` and only sees `P_j φ`. Every `Φ_j` therefore has the
//! form `C_j · (dx W_jᵀ)` with an `N_x × j` factor `C_j`; [`phi_factor_with`]
//! carries that factor through the recursion. [`algorithm1_apply`] runs the
//! same recursion on a single vector, bottom-up, and serves as an independent
//! check of the assembled matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};
use crate::grid::{Grid, Tridiagonal};
use crate::kernel::{kernel_table, Kernel};
use crate::spectral::{ModalBasis, ProjectionMatrix};

pub const DEFAULT_ADMISSIBILITY_FLOOR: f64 = 1e-6;
pub const DEFAULT_INVERSE_TOL: f64 = 1e-8;

/// Trapezoidal Volterra matrix: `0` above the diagonal, `dx/2 · k(x_i, x_i)`
/// on it and `dx · k(x_i, x_j)` below.
pub fn upsilon_matrix(kernel: &Kernel) -> DMatrix<f64> {
    let n = kernel.grid().len();
    let dx = kernel.grid().dx();
    let mut u = DMatrix::zeros(n, n);
    for i in 0..n {
        let row = kernel.row(i);
        for (j, k) in row.iter().enumerate() {
            u[(i, j)] = if j == i { 0.5 * dx * k } else { dx * k };
        }
    }
    u
}

fn matvec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).iter().copied().collect()
}

fn check_grids(upsilon: &DMatrix<f64>, basis: &ModalBasis) -> Result<()> {
    let n = basis.grid().len();
    check_len(n, upsilon.nrows())?;
    check_len(n, upsilon.ncols())
}

/// Result of running the recursion, possibly stopped at an inadmissible mode.
#[derive(Debug, Clone)]
pub struct Recursion {
    /// `N_x × j` factor with `Φ_j = C · dx W_jᵀ`, for the last completed `j`.
    pub factor: DMatrix<f64>,
    /// `a_1, …, a_j` for every mode reached (including the failing one).
    pub scalars: Vec<f64>,
    /// First mode with `|1 + a_j| ≤ floor`, if any.
    pub failed_at: Option<usize>,
}

/// Runs the recursion for all modes of `basis`, given `Υ_k W` (`N_x × N`).
///
/// `hook` sees every `(j, a_j)` and returns the value actually used; tests use
/// it to inject near-singular scalars.
pub fn run_recursion(
    upsilon_modes: &DMatrix<f64>,
    basis: &ModalBasis,
    floor: f64,
    mut hook: impl FnMut(usize, f64) -> f64,
) -> Result<Recursion> {
    let grid = basis.grid();
    let nx = grid.len();
    let modes = basis.modes();
    check_len(nx, upsilon_modes.nrows())?;
    check_len(modes, upsilon_modes.ncols())?;
    let dx = grid.dx();
    let w = basis.w();

    let mut factor = DMatrix::<f64>::zeros(nx, 0);
    let mut scalars = Vec::with_capacity(modes);
    for j in 1..=modes {
        // Z = (I − Φ_{j−1}) Υ W_j
        let z0 = upsilon_modes.columns(0, j).into_owned();
        let z = if j == 1 {
            z0
        } else {
            let g = w.columns(0, j - 1).transpose() * &z0 * dx;
            &z0 - &factor * g
        };
        let q: Vec<f64> = z.column(j - 1).iter().copied().collect();
        let ej: Vec<f64> = w.column(j - 1).iter().copied().collect();
        let a = hook(j, grid.inner(&q, &ej)?);
        scalars.push(a);
        if !((1.0 + a).abs() > floor) {
            return Ok(Recursion { factor, scalars, failed_at: Some(j) });
        }
        // s_n = (Z[:, n], e_j)₂
        let mut s = DMatrix::<f64>::zeros(1, j);
        for n in 0..j {
            let col: Vec<f64> = z.column(n).iter().copied().collect();
            s[(0, n)] = grid.inner(&col, &ej)?;
        }
        let qv = DMatrix::from_column_slice(nx, 1, &q);
        factor = &z - qv * s / (1.0 + a);
    }
    Ok(Recursion { factor, scalars, failed_at: None })
}

/// Factor `C` of `Φ_N = C · dx Wᵀ` plus the admissibility scalars, failing on
/// the first inadmissible mode.
pub fn phi_factor_with(
    upsilon_modes: &DMatrix<f64>,
    basis: &ModalBasis,
    floor: f64,
    hook: impl FnMut(usize, f64) -> f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let rec = run_recursion(upsilon_modes, basis, floor, hook)?;
    match rec.failed_at {
        Some(j) => Err(Error::Inadmissible { j, a: rec.scalars[j - 1] }),
        None => Ok((rec.factor, rec.scalars)),
    }
}

/// Dense `Φ_N` and the admissibility scalars `a_1..a_N`.
pub fn phi_matrix(
    upsilon: &DMatrix<f64>,
    basis: &ModalBasis,
    floor: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_grids(upsilon, basis)?;
    let upsilon_modes = upsilon * basis.w();
    let (c, a) = phi_factor_with(&upsilon_modes, basis, floor, |_, a| a)?;
    let phi = &c * basis.w().transpose() * basis.grid().dx();
    Ok((phi, a))
}

/// Applies `Φ_N` to a single vector by the bottom-up scheme: build the chains
/// `(Υ P_{m+1})…(Υ P_N) φ` and `(Υ P_{m+1})…(Υ P_{j−1}) Υ e_j`, start from
/// the closed form `Φ_1 = Υ P_1 / (1 + β_1)` and lift one level at a time,
/// shrinking the working list by one entry per level.
pub fn algorithm1_apply(
    upsilon: &DMatrix<f64>,
    basis: &ModalBasis,
    phi_in: &[f64],
    floor: f64,
) -> Result<Vec<f64>> {
    check_grids(upsilon, basis)?;
    let grid = basis.grid();
    check_len(grid.len(), phi_in.len())?;
    let n_modes = basis.modes();
    let ups_p = |m: usize, v: &[f64]| -> Result<Vec<f64>> { Ok(matvec(upsilon, &basis.project(v, m)?)) };
    let modes: Vec<Vec<f64>> = (1..=n_modes).map(|j| basis.mode(j)).collect();

    // chain_u[m] = (Υ P_{m+1}) … (Υ P_N) φ, chain_u[N] = φ
    let mut chain_u = vec![Vec::new(); n_modes + 1];
    chain_u[n_modes] = phi_in.to_vec();
    for m in (0..n_modes).rev() {
        chain_u[m] = ups_p(m + 1, &chain_u[m + 1])?;
    }
    // chain_e[j][m] = (Υ P_{m+1}) … (Υ P_{j−1}) Υ e_j for m < j, chain_e[j][j−1] = Υ e_j
    let mut chain_e: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_modes + 1];
    for j in 1..=n_modes {
        let mut c = vec![Vec::new(); j];
        c[j - 1] = matvec(upsilon, &modes[j - 1]);
        for m in (0..j - 1).rev() {
            c[m] = ups_p(m + 1, &c[m + 1])?;
        }
        chain_e[j] = c;
    }

    let beta1 = grid.inner(&chain_e[1][0], &modes[0])?;
    if !((1.0 + beta1).abs() > floor) {
        return Err(Error::Inadmissible { j: 1, a: beta1 });
    }
    let scale = 1.0 / (1.0 + beta1);
    if n_modes == 1 {
        return Ok(chain_u[0].iter().map(|v| v * scale).collect());
    }

    // Level 1: k_u = Φ_1 chain_u[1], k_e[j] = Φ_1 chain_e[j][1] for j ≥ 2.
    let mut k_u: Vec<f64> = chain_u[0].iter().map(|v| v * scale).collect();
    let mut k_e: Vec<Option<Vec<f64>>> = vec![None; n_modes + 1];
    for j in 2..=n_modes {
        k_e[j] = Some(chain_e[j][0].iter().map(|v| v * scale).collect());
    }

    for p in 2..=n_modes {
        let ep = &modes[p - 1];
        // direction: (I − Φ_{p−1}) Υ e_p
        let dir_phi = k_e[p].take().expect("direction entry present");
        let dir: Vec<f64> = chain_e[p][p - 1].iter().zip(&dir_phi).map(|(r, k)| r - k).collect();
        let a_p = grid.inner(&dir, ep)?;
        if !((1.0 + a_p).abs() > floor) {
            return Err(Error::Inadmissible { j: p, a: a_p });
        }
        let lift = |raw: &[f64], k_prev: &[f64]| -> Result<Vec<f64>> {
            let r: Vec<f64> = raw.iter().zip(k_prev).map(|(a, b)| a - b).collect();
            let coef = grid.inner(&r, ep)? / (1.0 + a_p);
            Ok(r.iter().zip(&dir).map(|(ri, di)| ri - coef * di).collect())
        };
        k_u = lift(&chain_u[p - 1], &k_u)?;
        for j in p + 1..=n_modes {
            let prev = k_e[j].take().expect("chain entry present");
            k_e[j] = Some(lift(&chain_e[j][p - 1], &prev)?);
        }
    }
    Ok(k_u)
}

/// `Φ_N` assembled column by column from [`algorithm1_apply`].
pub fn algorithm1_matrix(upsilon: &DMatrix<f64>, basis: &ModalBasis, floor: f64) -> Result<DMatrix<f64>> {
    let n = basis.grid().len();
    let mut phi = DMatrix::zeros(n, n);
    let mut unit = vec![0.0; n];
    for c in 0..n {
        unit[c] = 1.0;
        let col = algorithm1_apply(upsilon, basis, &unit, floor)?;
        phi.set_column(c, &DVector::from_vec(col));
        unit[c] = 0.0;
    }
    Ok(phi)
}

#[derive(Debug, Clone, Copy)]
pub struct TransformOptions {
    pub admissibility_floor: f64,
    pub inverse_tol: f64,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions { admissibility_floor: DEFAULT_ADMISSIBILITY_FLOOR, inverse_tol: DEFAULT_INVERSE_TOL }
    }
}

/// All discrete operators of the transform for one `(μ, N)` pair.
#[derive(Debug, Clone)]
pub struct TransformSet {
    mu: f64,
    nu: f64,
    kernel_order: usize,
    basis: ModalBasis,
    projection: ProjectionMatrix,
    upsilon: DMatrix<f64>,
    upsilon_modes: DMatrix<f64>,
    phi_factor: DMatrix<f64>,
    phi: DMatrix<f64>,
    t_matrix: DMatrix<f64>,
    admissibility: Vec<f64>,
    inverse_residual: f64,
}

impl TransformSet {
    pub fn build(kernel: &Kernel, modes: usize, opts: TransformOptions) -> Result<Self> {
        let grid = kernel.grid();
        let basis = ModalBasis::new(grid, modes)?;
        let projection = basis.projection_matrix();
        let upsilon = upsilon_matrix(kernel);
        let upsilon_modes = &upsilon * basis.w();
        let (phi_factor, admissibility) =
            phi_factor_with(&upsilon_modes, &basis, opts.admissibility_floor, |_, a| a)?;
        let gt = basis.w().transpose() * grid.dx();
        let phi = &phi_factor * &gt;
        let mut t_matrix = &upsilon_modes * &gt;
        for i in 0..grid.len() {
            t_matrix[(i, i)] += 1.0;
        }
        let mut set = TransformSet {
            mu: kernel.mu(),
            nu: kernel.nu(),
            kernel_order: kernel.order(),
            basis,
            projection,
            upsilon,
            upsilon_modes,
            phi_factor,
            phi,
            t_matrix,
            admissibility,
            inverse_residual: 0.0,
        };
        set.inverse_residual = set.inverse_residual_inf();
        if !(set.inverse_residual <= opts.inverse_tol) {
            return Err(Error::IllConditioned { residual: set.inverse_residual, tol: opts.inverse_tol });
        }
        Ok(set)
    }

    /// Kernel table plus transform with default tolerances.
    pub fn from_parameters(mu: f64, nu: f64, length: f64, nx: usize, modes: usize) -> Result<(Kernel, Self)> {
        let grid = Grid::new(length, nx)?;
        let kernel = kernel_table(&grid, mu, nu, crate::kernel::DEFAULT_TOL)?;
        let set = TransformSet::build(&kernel, modes, TransformOptions::default())?;
        Ok((kernel, set))
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn modes(&self) -> usize {
        self.basis.modes()
    }

    pub fn kernel_order(&self) -> usize {
        self.kernel_order
    }

    pub fn grid(&self) -> &Grid {
        self.basis.grid()
    }

    pub fn basis(&self) -> &ModalBasis {
        &self.basis
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    pub fn upsilon(&self) -> &DMatrix<f64> {
        &self.upsilon
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn t_matrix(&self) -> &DMatrix<f64> {
        &self.t_matrix
    }

    /// `a_1..a_N`; the pair is admissible when every `1 + a_j` is nonzero.
    pub fn admissibility(&self) -> &[f64] {
        &self.admissibility
    }

    /// Max of the left and right residuals `‖(I−Φ)T − I‖_∞`, `‖T(I−Φ) − I‖_∞`
    /// (row-sum norm).
    pub fn inverse_residual(&self) -> f64 {
        self.inverse_residual
    }

    fn gt(&self) -> DMatrix<f64> {
        self.basis.w().transpose() * self.grid().dx()
    }

    fn inverse_residual_inf(&self) -> f64 {
        let gt = self.gt();
        let x = &self.upsilon_modes;
        let c = &self.phi_factor;
        let gx = &gt * x;
        let gc = &gt * c;
        let left = (x - c - c * gx) * &gt;
        let right = (x - c - x * gc) * &gt;
        row_sum_norm(&left).max(row_sum_norm(&right))
    }

    /// `w + Υ_k P_N w`.
    pub fn forward_transform(&self, w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid().len(), w.len())?;
        let c = self.basis.coefficients(w, self.modes());
        let mut out = w.to_vec();
        for (n, cn) in c.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.upsilon_modes.column(n).iter()) {
                *o += cn * x;
            }
        }
        Ok(out)
    }

    /// `u − Φ_N u`.
    pub fn inverse_transform(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid().len(), u.len())?;
        let c = self.basis.coefficients(u, self.modes());
        let mut out = u.to_vec();
        for (n, cn) in c.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.phi_factor.column(n).iter()) {
                *o -= cn * x;
            }
        }
        Ok(out)
    }

    /// `Φ_N u` from the dense matrix.
    pub fn apply_phi(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid().len(), u.len())?;
        Ok(matvec(&self.phi, u))
    }

    pub fn operator_norms(&self) -> Result<OperatorNorms> {
        operator_norms(self)
    }

    pub(crate) fn low_rank_parts(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.upsilon_modes, &self.phi_factor)
    }
}

fn row_sum_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// One `μ` sample of an admissibility sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ScanRow {
    pub mu: f64,
    /// `1 + a_j` for every mode the recursion reached.
    pub one_plus_a: Vec<f64>,
    pub admissible: bool,
}

/// Consecutive samples between which `1 + a_j` changes sign.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SignChange {
    pub mode: usize,
    pub mu_low: f64,
    pub mu_high: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AdmissibilityScan {
    pub rows: Vec<ScanRow>,
    pub sign_changes: Vec<SignChange>,
}

/// Sweeps `μ` over `steps` equispaced values in `[mu_min, mu_max]`.
/// Inadmissible samples are reported, not raised.
#[allow(clippy::too_many_arguments)]
pub fn scan_admissibility(
    nu: f64,
    length: f64,
    modes: usize,
    mu_min: f64,
    mu_max: f64,
    steps: usize,
    nx: usize,
    floor: f64,
) -> Result<AdmissibilityScan> {
    if steps < 2 {
        return Err(Error::invalid("admissibility scan needs at least 2 steps"));
    }
    if !(mu_min > 0.0) || !(mu_max > mu_min) {
        return Err(Error::invalid(format!("need 0 < mu_min < mu_max, got [{mu_min}, {mu_max}]")));
    }
    let grid = Grid::new(length, nx)?;
    let basis = ModalBasis::new(&grid, modes)?;
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let mu = if k + 1 == steps { mu_max } else { mu_min + (mu_max - mu_min) * k as f64 / (steps - 1) as f64 };
        let kernel = kernel_table(&grid, mu, nu, crate::kernel::DEFAULT_TOL)?;
        let upsilon_modes = upsilon_matrix(&kernel) * basis.w();
        let rec = run_recursion(&upsilon_modes, &basis, floor, |_, a| a)?;
        rows.push(ScanRow {
            mu,
            one_plus_a: rec.scalars.iter().map(|a| 1.0 + a).collect(),
            admissible: rec.failed_at.is_none(),
        });
    }
    let mut sign_changes = Vec::new();
    for pair in rows.windows(2) {
        let m = pair[0].one_plus_a.len().min(pair[1].one_plus_a.len());
        for j in 0..m {
            let (a, b) = (pair[0].one_plus_a[j], pair[1].one_plus_a[j]);
            if a.signum() != b.signum() {
                sign_changes.push(SignChange { mode: j + 1, mu_low: pair[0].mu, mu_high: pair[1].mu });
            }
        }
    }
    Ok(AdmissibilityScan { rows, sign_changes })
}

/// Discrete operator norms of the transform and its inverse.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OperatorNorms {
    /// `‖T_N^{-1}‖_{2→2}`.
    pub c0: f64,
    pub norm_t_l2: f64,
    pub norm_tinv_h1: f64,
    pub norm_t_h1: f64,
}

/// L² norms use the `dx`-weighted Euclidean norm; H¹ norms add `dx`-weighted
/// forward differences. Both operators are identity plus rank `N`, so the
/// norms are computed exactly on the at most `2N`-dimensional subspace where
/// they differ from the identity.
pub fn operator_norms(set: &TransformSet) -> Result<OperatorNorms> {
    let gt = set.gt();
    let (x, c) = set.low_rank_parts();
    let neg_c = -c;
    let h = h1_gram(set.grid());
    Ok(OperatorNorms {
        c0: identity_plus_low_rank_norm(&neg_c, &gt, None)?,
        norm_t_l2: identity_plus_low_rank_norm(x, &gt, None)?,
        norm_tinv_h1: identity_plus_low_rank_norm(&neg_c, &gt, Some(&h))?,
        norm_t_h1: identity_plus_low_rank_norm(x, &gt, Some(&h))?,
    })
}

/// Gram matrix `I + DᵀD` of the discrete H¹ inner product (up to the common
/// `dx` factor), `D` the forward-difference matrix.
pub fn h1_gram(grid: &Grid) -> Tridiagonal {
    let n = grid.len();
    let h2 = grid.dx() * grid.dx();
    let mut t = Tridiagonal::identity(n);
    for i in 0..n - 1 {
        t.diag[i] += 1.0 / h2;
        t.diag[i + 1] += 1.0 / h2;
        t.sup[i] = -1.0 / h2;
        t.sub[i + 1] = -1.0 / h2;
    }
    t
}

/// Induced norm of `I + X Y` in the inner product `⟨a, b⟩ = aᵀ H b`
/// (`H = I` when `gram` is `None`).
pub fn identity_plus_low_rank_norm(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    gram: Option<&Tridiagonal>,
) -> Result<f64> {
    let n = x.nrows();
    check_len(n, y.ncols())?;
    check_len(x.ncols(), y.nrows())?;
    let h_apply = |v: &[f64]| -> Result<Vec<f64>> {
        match gram {
            Some(h) => h.apply(v),
            None => Ok(v.to_vec()),
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

    let mut candidates: Vec<Vec<f64>> = x.column_iter().map(|c| c.iter().copied().collect()).collect();
    for r in y.row_iter() {
        let yt: Vec<f64> = r.iter().copied().collect();
        candidates.push(match gram {
            Some(h) => h.solve(&yt)?,
            None => yt,
        });
    }

    // H-orthonormal basis by twice-iterated Gram–Schmidt.
    let mut basis: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for mut v in candidates {
        let hv0 = h_apply(&v)?;
        let norm0 = dot(&v, &hv0).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for (q, hq) in &basis {
                let proj = dot(hq, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= proj * qi;
                }
            }
        }
        let hv = h_apply(&v)?;
        let norm = dot(&v, &hv).sqrt();
        if norm <= 1e-10 * norm0 {
            continue;
        }
        let q: Vec<f64> = v.iter().map(|vi| vi / norm).collect();
        let hq: Vec<f64> = hv.iter().map(|vi| vi / norm).collect();
        basis.push((q, hq));
    }
    let k = basis.len();
    if k == 0 {
        return Ok(1.0);
    }
    let q = DMatrix::from_fn(n, k, |i, j| basis[j].0[i]);
    let mq = &q + x * (y * &q);
    let mut hmq = DMatrix::zeros(n, k);
    for j in 0..k {
        let col: Vec<f64> = mq.column(j).iter().copied().collect();
        hmq.set_column(j, &DVector::from_vec(h_apply(&col)?));
    }
    let reduced = mq.transpose() * hmq;
    let sym = (&reduced + reduced.transpose()) * 0.5;
    let top = SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top = if k < n { top.max(1.0) } else { top };
    Ok(top.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::sine_mode;

    fn setup(mu: f64, nx: usize, modes: usize) -> (Kernel, ModalBasis, DMatrix<f64>) {
        let g = Grid::new(1.0, nx).unwrap();
        let k = kernel_table(&g, mu, 1.0, 1e-12).unwrap();
        let b = ModalBasis::new(&g, modes).unwrap();
        let u = upsilon_matrix(&k);
        (k, b, u)
    }

    #[test]
    fn upsilon_three_case_weights() {
        let (k, _, u) = setup(6.0, 50, 1);
        let g = k.grid();
        for i in 0..50 {
            for j in 0..50 {
                if j > i {
                    assert_eq!(u[(i, j)], 0.0);
                } else if j == i {
                    let expect = 0.5 * g.dx() * (-3.0 * g.nodes()[i]);
                    assert!((u[(i, i)] - expect).abs() < 1e-15);
                } else {
                    assert_eq!(u[(i, j)], g.dx() * k.value(i, j).unwrap());
                }
            }
        }
    }

    #[test]
    fn zero_kernel_gives_zero_phi() {
        let (_, b, u) = setup(0.0, 80, 3);
        let (phi, a) = phi_matrix(&u, &b, DEFAULT_ADMISSIBILITY_FLOOR).unwrap();
        assert!(phi.iter().all(|v| *v == 0.0));
        assert!(a.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn injected_singular_scalar_is_rejected() {
        let (_, b, u) = setup(6.0, 80, 2);
        let um = &u * b.w();
        let err = phi_factor_with(&um, &b, DEFAULT_ADMISSIBILITY_FLOOR, |j, a| if j == 1 { -1.0 + 1e-9 } else { a })
            .unwrap_err();
        match err {
            Error::Inadmissible { j, a } => {
                assert_eq!(j, 1);
                assert!((a + 1.0 - 1e-9).abs() < 1e-15);
            }
            e => panic!("unexpected error {e}"),
        }
        let err = phi_factor_with(&um, &b, DEFAULT_ADMISSIBILITY_FLOOR, |j, a| if j == 2 { -1.0 } else { a })
            .unwrap_err();
        assert!(matches!(err, Error::Inadmissible { j: 2, .. }));
    }

    #[test]
    fn algorithm1_agrees_with_matrix_recursion() {
        for modes in 1..=3 {
            let (_, b, u) = setup(15.0, 60, modes);
            let (phi, _) = phi_matrix(&u, &b, DEFAULT_ADMISSIBILITY_FLOOR).unwrap();
            let alg = algorithm1_matrix(&u, &b, DEFAULT_ADMISSIBILITY_FLOOR).unwrap();
            let diff = (&phi - &alg).amax();
            assert!(diff <= 1e-10, "modes {modes}: {diff}");
        }
    }

    #[test]
    fn transforms_round_trip() {
        let (k, set) = TransformSet::from_parameters(6.0, 1.0, 1.0, 200, 1).unwrap();
        assert_eq!(k.grid().len(), 200);
        let g = set.grid().clone();
        let v = g.sample(|x| (3.0 * x).sin() + x * x);
        let back = set.inverse_transform(&set.forward_transform(&v).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(set.forward_transform(&vec![0.0; 200]).unwrap().iter().all(|v| *v == 0.0));
        assert!(set.inverse_transform(&vec![0.0; 200]).unwrap().iter().all(|v| *v == 0.0));
        assert!(set.inverse_transform(&[0.0; 10]).is_err());
    }

    #[test]
    fn discarded_mode_passes_through() {
        let (_, set) = TransformSet::from_parameters(6.0, 1.0, 1.0, 300, 1).unwrap();
        let g = set.grid().clone();
        let e2 = g.sample(|x| sine_mode(2, 1.0, x));
        let f = set.forward_transform(&e2).unwrap();
        let inv = set.inverse_transform(&e2).unwrap();
        for i in 0..300 {
            assert!((f[i] - e2[i]).abs() < 1e-10);
            assert!((inv[i] - e2[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn low_rank_norm_of_identity() {
        let x = DMatrix::zeros(30, 2);
        let y = DMatrix::from_fn(2, 30, |i, j| (i + j) as f64);
        assert!((identity_plus_low_rank_norm(&x, &y, None).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn low_rank_norm_matches_dense_svd() {
        let n = 25;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1 - 0.2);
        let y = DMatrix::from_fn(2, n, |i, j| ((i * 11 + j * 2) % 7) as f64 * 0.05);
        let mut m = &x * &y;
        for i in 0..n {
            m[(i, i)] += 1.0;
        }
        let svd = m.clone().svd(false, false);
        let s = svd.singular_values.max();
        assert!((identity_plus_low_rank_norm(&x, &y, None).unwrap() - s).abs() < 1e-12);

        let g = Grid::new(1.0, n).unwrap();
        let h = h1_gram(&g);
        let hd = h.to_dense();
        let chol = hd.clone().cholesky().unwrap();
        let r = chol.l().transpose();
        let rinv = r.clone().try_inverse().unwrap();
        let s_h = (&r * &m * &rinv).svd(false, false).singular_values.max();
        assert!((identity_plus_low_rank_norm(&x, &y, Some(&h)).unwrap() - s_h).abs() < 1e-9 * s_h);
    }

    #[test]
    fn scan_reports_row_and_limit() {
        let scan = scan_admissibility(1.0, 1.0, 1, 1.0, 10.0, 10, 200, DEFAULT_ADMISSIBILITY_FLOOR).unwrap();
        assert_eq!(scan.rows.len(), 10);
        assert_eq!(scan.rows[5].mu, 6.0);
        assert!(scan.rows.iter().all(|r| r.admissible));
        let small = scan_admissibility(1.0, 1.0, 2, 1e-8, 1.0, 3, 100, DEFAULT_ADMISSIBILITY_FLOOR).unwrap();
        for a in &small.rows[0].one_plus_a {
            assert!((a - 1.0).abs() < 1e-7);
        }
        assert!(scan_admissibility(1.0, 1.0, 1, 1.0, 10.0, 1, 100, 1e-6).is_err());
    }
}
