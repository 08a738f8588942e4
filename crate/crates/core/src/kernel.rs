//! Backstepping kernel `k(x, y)` on the triangle `0 ≤ y ≤ x ≤ L`.
//!
//! The kernel solves `ν(k_xx − k_yy) + μk = 0` with `k(x, 0) = 0` and
//! `k(x, x) = −μx/(2ν)`. It is evaluated through its power series
//!
//! ```text
//! k(x, y) = −(μy)/(2ν) Σ_m (−μ/(4ν))^m (x² − y²)^m / (m! (m+1)!)
//! ```
//!
//! with terms generated recursively so no factorial is ever formed.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Hard cap on the truncation order.
pub const MAX_ORDER: usize = 200;

/// Default truncation tolerance for `max |k^{M+1} − k^M|`.
pub const DEFAULT_TOL: f64 = 1e-12;

fn check_coefficients(mu: f64, nu: f64) -> Result<()> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::invalid(format!("diffusivity nu must be positive, got {nu}")));
    }
    if !mu.is_finite() {
        return Err(Error::invalid(format!("mu must be finite, got {mu}")));
    }
    Ok(())
}

/// Partial sum `k^M(x, y)` of the kernel series.
pub fn kernel_series(x: f64, y: f64, mu: f64, nu: f64, order: usize) -> Result<f64> {
    check_coefficients(mu, nu)?;
    if y < 0.0 || y > x {
        return Err(Error::Domain(format!("kernel needs 0 <= y <= x, got x = {x}, y = {y}")));
    }
    let ratio = -mu / (4.0 * nu) * (x * x - y * y);
    let mut term = 1.0;
    let mut sum = 0.0;
    for m in 0..=order {
        sum += term;
        term *= ratio / (((m + 1) * (m + 2)) as f64);
    }
    Ok(-mu * y / (2.0 * nu) * sum)
}

/// Per-pair state of the series: prefactor, recursion ratio and the current term.
struct SeriesState {
    prefactor: Vec<f64>,
    ratio: Vec<f64>,
    term: Vec<f64>,
}

impl SeriesState {
    fn new(grid: &Grid, mu: f64, nu: f64) -> Self {
        let n = grid.len();
        let cap = n * (n + 1) / 2;
        let mut prefactor = Vec::with_capacity(cap);
        let mut ratio = Vec::with_capacity(cap);
        let x = grid.nodes();
        for i in 0..n {
            for j in 0..=i {
                prefactor.push(-mu * x[j] / (2.0 * nu));
                ratio.push(-mu / (4.0 * nu) * (x[i] * x[i] - x[j] * x[j]));
            }
        }
        let term = vec![1.0; cap];
        SeriesState { prefactor, ratio, term }
    }

    /// Advances every term from order `m` to `m + 1`; returns the largest
    /// magnitude `|prefactor · term_{m+1}|`.
    fn advance(&mut self, m: usize) -> f64 {
        let denom = ((m + 1) * (m + 2)) as f64;
        let mut max = 0.0f64;
        for ((t, r), p) in self.term.iter_mut().zip(&self.ratio).zip(&self.prefactor) {
            *t *= r / denom;
            max = max.max((p * *t).abs());
        }
        max
    }
}

/// Runs the series until the next increment falls below `tol`.
/// Returns `(M, achieved_delta, optional partial sums)`.
fn sum_to_tolerance(
    grid: &Grid,
    mu: f64,
    nu: f64,
    tol: f64,
    keep_sums: bool,
) -> Result<(usize, f64, Vec<f64>)> {
    check_coefficients(mu, nu)?;
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let mut state = SeriesState::new(grid, mu, nu);
    let mut sums = if keep_sums { vec![0.0; state.term.len()] } else { Vec::new() };
    for m in 0..=MAX_ORDER {
        if keep_sums {
            for (s, t) in sums.iter_mut().zip(&state.term) {
                *s += t;
            }
        }
        let next = state.advance(m);
        if next < tol {
            if keep_sums {
                for (s, p) in sums.iter_mut().zip(&state.prefactor) {
                    *s *= p;
                }
            }
            return Ok((m, next, sums));
        }
    }
    Err(Error::Convergence { tol, max_order: MAX_ORDER })
}

/// Smallest `M` with `max_{j ≤ i} |k^{M+1}(x_i, y_j) − k^M(x_i, y_j)| < tol`.
pub fn truncate_order(mu: f64, nu: f64, grid: &Grid, tol: f64) -> Result<usize> {
    sum_to_tolerance(grid, mu, nu, tol, false).map(|(m, _, _)| m)
}

/// Truncated kernel sampled on the lower triangle of a grid.
#[derive(Debug, Clone)]
pub struct Kernel {
    values: Vec<f64>,
    order: usize,
    mu: f64,
    nu: f64,
    grid: Grid,
    achieved_delta: f64,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl Kernel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn achieved_delta(&self) -> f64 {
        self.achieved_delta
    }

    /// `k(x_i, y_j)`; rejects indices above the diagonal.
    pub fn value(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.grid.len();
        if i >= n {
            return Err(Error::Domain(format!("row {i} outside grid of {n} nodes")));
        }
        if j > i {
            return Err(Error::Domain(format!("kernel is only stored for j <= i, got ({i}, {j})")));
        }
        Ok(self.values[packed_index(i, j)])
    }

    /// Row `i` of the table, i.e. `k(x_i, y_j)` for `j = 0..=i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = packed_index(i, 0);
        &self.values[start..start + i + 1]
    }

    /// `k(L, y_j)` for all nodes.
    pub fn boundary_row(&self) -> &[f64] {
        self.row(self.grid.len() - 1)
    }

    /// CSV with columns `i,j,x,y,k` (1-based indices), lower triangle only.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,x,y,k")?;
        let x = self.grid.nodes();
        for i in 0..self.grid.len() {
            for (j, k) in self.row(i).iter().enumerate() {
                writeln!(out, "{},{},{:.16e},{:.16e},{:.16e}", i + 1, j + 1, x[i], x[j], k)?;
            }
        }
        Ok(())
    }
}

/// Builds the truncated kernel table on `grid`.
pub fn kernel_table(grid: &Grid, mu: f64, nu: f64, tol: f64) -> Result<Kernel> {
    let (order, achieved_delta, values) = sum_to_tolerance(grid, mu, nu, tol, true)?;
    Ok(Kernel { values, order, mu, nu, grid: grid.clone(), achieved_delta })
}

/// Max of `|ν(k_xx − k_yy) + μk|` over interior nodes at least two nodes
/// below the diagonal, with central differences in both directions.
pub fn kernel_pde_residual(kernel: &Kernel) -> Result<f64> {
    let n = kernel.grid.len();
    if n < 5 {
        return Err(Error::Dimension { expected: 5, got: n });
    }
    let h2 = kernel.grid.dx().powi(2);
    let k = |i: usize, j: usize| kernel.values[packed_index(i, j)];
    let mut max = 0.0f64;
    for i in 3..n - 1 {
        for j in 1..=i - 2 {
            let kxx = (k(i + 1, j) - 2.0 * k(i, j) + k(i - 1, j)) / h2;
            let kyy = (k(i, j + 1) - 2.0 * k(i, j) + k(i, j - 1)) / h2;
            let r = (kernel.nu * (kxx - kyy) + kernel.mu * k(i, j)).abs();
            max = max.max(r);
        }
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_vanishes_on_first_column() {
        for m in [0, 3, 40] {
            assert_eq!(kernel_series(0.7, 0.0, 6.0, 1.0, m).unwrap(), 0.0);
        }
    }

    #[test]
    fn series_on_diagonal() {
        for m in [0, 1, 10, 100] {
            assert_eq!(kernel_series(1.0, 1.0, 6.0, 1.0, m).unwrap(), -3.0);
        }
    }

    #[test]
    fn series_domain_errors() {
        assert!(matches!(kernel_series(0.5, 0.6, 6.0, 1.0, 5), Err(Error::Domain(_))));
        assert!(matches!(kernel_series(0.5, -0.1, 6.0, 1.0, 5), Err(Error::Domain(_))));
        assert!(matches!(kernel_series(0.5, 0.1, 6.0, 0.0, 5), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn no_factorial_overflow_at_high_order() {
        let v = kernel_series(1.0, 0.3, 15.0, 1.0, 190).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn zero_mu_needs_no_terms() {
        let g = Grid::new(1.0, 50).unwrap();
        assert_eq!(truncate_order(0.0, 1.0, &g, 1e-12).unwrap(), 0);
        let k = kernel_table(&g, 0.0, 1.0, 1e-12).unwrap();
        assert_eq!(kernel_pde_residual(&k).unwrap(), 0.0);
    }

    #[test]
    fn accessor_rejects_upper_triangle() {
        let g = Grid::new(1.0, 10).unwrap();
        let k = kernel_table(&g, 6.0, 1.0, 1e-12).unwrap();
        assert!(k.value(3, 4).is_err());
        assert!(k.value(10, 0).is_err());
        assert!(k.value(4, 3).is_ok());
    }

    #[test]
    fn table_boundaries() {
        let g = Grid::new(1.0, 200).unwrap();
        let k = kernel_table(&g, 6.0, 1.0, 1e-12).unwrap();
        for i in 0..200 {
            assert_eq!(k.value(i, 0).unwrap(), 0.0);
            let x = g.nodes()[i];
            assert!((k.value(i, i).unwrap() + 3.0 * x).abs() <= 1e-12);
        }
        assert!(k.achieved_delta() < 1e-12);
    }

    #[test]
    fn kernel_negative_for_moderate_mu() {
        let g = Grid::new(1.0, 60).unwrap();
        let k = kernel_table(&g, 6.0, 1.0, 1e-12).unwrap();
        for i in 1..60 {
            for j in 1..=i {
                assert!(k.value(i, j).unwrap() < 0.0);
            }
        }
    }

    #[test]
    fn small_tables_reject_residual() {
        let g = Grid::new(1.0, 4).unwrap();
        let k = kernel_table(&g, 6.0, 1.0, 1e-12).unwrap();
        assert!(matches!(kernel_pde_residual(&k), Err(Error::Dimension { .. })));
    }

    #[test]
    fn csv_dump_has_triangle_rows() {
        let g = Grid::new(1.0, 5).unwrap();
        let k = kernel_table(&g, 6.0, 1.0, 1e-12).unwrap();
        let mut buf = Vec::new();
        k.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 15);
        assert!(text.starts_with("i,j,x,y,k\n1,1,"));
    }
}
