//! Dirichlet sine modes, the modal matrix `W` and the discrete projection
//! `P_N = dx · W Wᵀ`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;

/// `λ_j = j² (π/L)²`.
pub fn eigenvalue(j: usize, length: f64) -> Result<f64> {
    if j < 1 {
        return Err(Error::invalid("eigenvalue index starts at 1"));
    }
    if !(length > 0.0) {
        return Err(Error::invalid(format!("domain length must be positive, got {length}")));
    }
    let base = PI / length;
    Ok((j * j) as f64 * (base * base))
}

/// `e_n(x) = √(2/L) sin(nπx/L)`.
pub fn sine_mode(n: usize, length: f64, x: f64) -> f64 {
    (2.0 / length).sqrt() * (n as f64 * PI * x / length).sin()
}

/// First `N` Dirichlet eigenpairs sampled on a grid.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    grid: Grid,
    w: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl ModalBasis {
    pub fn new(grid: &Grid, modes: usize) -> Result<Self> {
        if modes < 1 {
            return Err(Error::invalid("need at least one sine mode"));
        }
        if 4 * modes > grid.len() {
            return Err(Error::Resolution { modes, nodes: grid.len() });
        }
        let length = grid.length();
        let x = grid.nodes();
        let w = DMatrix::from_fn(grid.len(), modes, |i, n| sine_mode(n + 1, length, x[i]));
        let eigenvalues = (1..=modes).map(|j| eigenvalue(j, length)).collect::<Result<_>>()?;
        Ok(ModalBasis { grid: grid.clone(), w, eigenvalues })
    }

    pub fn modes(&self) -> usize {
        self.w.ncols()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `N_x × N` matrix with `W[j, n] = e_{n+1}(x_j)`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Samples of `e_n` (1-based).
    pub fn mode(&self, n: usize) -> Vec<f64> {
        self.w.column(n - 1).iter().copied().collect()
    }

    /// Plain modal coefficients `dx · W_mᵀ v` for the first `m` modes.
    pub fn coefficients(&self, v: &[f64], m: usize) -> Vec<f64> {
        let dx = self.grid.dx();
        (0..m).map(|n| dx * self.w.column(n).iter().zip(v).map(|(a, b)| a * b).sum::<f64>()).collect()
    }

    /// `P_m v = dx W_m W_mᵀ v` without forming the matrix.
    pub fn project(&self, v: &[f64], m: usize) -> Result<Vec<f64>> {
        check_len(self.grid.len(), v.len())?;
        if m > self.modes() {
            return Err(Error::invalid(format!("requested {m} modes from a basis of {}", self.modes())));
        }
        let c = self.coefficients(v, m);
        let mut out = vec![0.0; v.len()];
        for (n, cn) in c.iter().enumerate() {
            for (o, wn) in out.iter_mut().zip(self.w.column(n).iter()) {
                *o += cn * wn;
            }
        }
        Ok(out)
    }

    pub fn projection_matrix(&self) -> ProjectionMatrix {
        projection_matrix(self)
    }
}

/// Dense `N_x × N_x` projection `dx · W Wᵀ`.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    p: DMatrix<f64>,
}

impl ProjectionMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.p.ncols(), v.len())?;
        Ok((&self.p * DVector::from_column_slice(v)).iter().copied().collect())
    }
}

/// Assembles `dx · W Wᵀ` entry by entry so the result is exactly symmetric.
pub fn projection_matrix(basis: &ModalBasis) -> ProjectionMatrix {
    let n = basis.grid.len();
    let dx = basis.grid.dx();
    let w = &basis.w;
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for m in 0..w.ncols() {
                s += w[(i, m)] * w[(j, m)];
            }
            p[(i, j)] = dx * s;
            p[(j, i)] = dx * s;
        }
    }
    ProjectionMatrix { p }
}
