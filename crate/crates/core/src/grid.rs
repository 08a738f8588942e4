//! Uniform grids on `[0, L]`, composite trapezoidal quadrature and the
//! central-difference Laplacian.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

/// Uniform discretization of `[0, L]` with `nx` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    length: f64,
    dx: f64,
    nodes: Vec<f64>,
}

impl Grid {
    pub fn new(length: f64, nx: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::invalid(format!("domain length must be positive, got {length}")));
        }
        if nx < 2 {
            return Err(Error::invalid(format!("need at least 2 grid nodes, got {nx}")));
        }
        let dx = length / (nx - 1) as f64;
        let mut nodes: Vec<f64> = (0..nx).map(|i| i as f64 * dx).collect();
        nodes[nx - 1] = length;
        Ok(Grid { length, dx, nodes })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    /// Composite trapezoidal weights: `dx/2` at both ends, `dx` inside.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.len();
        let mut w = vec![self.dx; n];
        w[0] *= 0.5;
        w[n - 1] *= 0.5;
        w
    }

    pub fn trapezoid(&self, values: &[f64]) -> Result<f64> {
        trapezoid(values, self)
    }

    /// Trapezoidal L² inner product `(u, v)₂`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_len(self.len(), u.len())?;
        check_len(self.len(), v.len())?;
        Ok(trapezoid_unchecked(self.dx, u.iter().zip(v).map(|(a, b)| a * b)))
    }

    pub fn l2_norm(&self, u: &[f64]) -> Result<f64> {
        Ok(self.inner(u, u)?.sqrt())
    }

    /// Discrete H¹ norm: trapezoidal L² part plus `dx`-weighted forward differences.
    pub fn h1_norm(&self, u: &[f64]) -> Result<f64> {
        let l2 = self.inner(u, u)?;
        let dx = self.dx;
        let grad: f64 = u.windows(2).map(|w| ((w[1] - w[0]) / dx).powi(2)).sum::<f64>() * dx;
        Ok((l2 + grad).sqrt())
    }
}

/// `dx·(v_1/2 + v_2 + … + v_{n-1} + v_n/2)`.
pub fn trapezoid(values: &[f64], grid: &Grid) -> Result<f64> {
    check_len(grid.len(), values.len())?;
    Ok(trapezoid_unchecked(grid.dx, values.iter().copied()))
}

pub(crate) fn trapezoid_unchecked(dx: f64, values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    let mut sum = 0.0;
    for (i, v) in values.enumerate() {
        if i == 0 || i + 1 == n {
            sum += 0.5 * v;
        } else {
            sum += v;
        }
    }
    sum * dx
}

/// Square tridiagonal matrix stored by diagonals.
///
/// `sub[0]` and `sup[n-1]` are unused and kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Tridiagonal { sub: vec![0.0; n], diag: vec![0.0; n], sup: vec![0.0; n] }
    }

    pub fn identity(n: usize) -> Self {
        Tridiagonal { sub: vec![0.0; n], diag: vec![1.0; n], sup: vec![0.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        check_len(n, v.len())?;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.sub[i] * v[i - 1];
            }
            if i + 1 < n {
                s += self.sup[i] * v[i + 1];
            }
            out[i] = s;
        }
        Ok(out)
    }

    /// `self * scale_a + identity * scale_i`, row-wise.
    pub fn scaled_plus_identity(&self, scale_a: f64, scale_i: f64) -> Self {
        Tridiagonal {
            sub: self.sub.iter().map(|x| x * scale_a).collect(),
            diag: self.diag.iter().map(|x| x * scale_a + scale_i).collect(),
            sup: self.sup.iter().map(|x| x * scale_a).collect(),
        }
    }

    /// Replaces row `i` by the corresponding identity row.
    pub fn set_identity_row(&mut self, i: usize) {
        self.sub[i] = 0.0;
        self.diag[i] = 1.0;
        self.sup[i] = 0.0;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if j + 1 == i {
                self.sub[i]
            } else if i + 1 == j {
                self.sup[i]
            } else {
                0.0
            }
        })
    }

    /// Thomas algorithm without pivoting.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        check_len(n, rhs.len())?;
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom.abs() < f64::MIN_POSITIVE || !denom.is_finite() {
            return Err(Error::Solver("zero pivot in tridiagonal solve at row 0".into()));
        }
        c[0] = self.sup[0] / denom;
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.sub[i] * c[i - 1];
            if denom.abs() < f64::MIN_POSITIVE || !denom.is_finite() {
                return Err(Error::Solver(format!("zero pivot in tridiagonal solve at row {i}")));
            }
            c[i] = if i + 1 < n { self.sup[i] / denom } else { 0.0 };
            d[i] = (rhs[i] - self.sub[i] * d[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }
}

/// Central-difference second derivative with identity boundary rows.
pub fn laplacian_matrix(grid: &Grid) -> Result<Tridiagonal> {
    let n = grid.len();
    if n < 3 {
        return Err(Error::invalid(format!("Laplacian needs at least 3 nodes, got {n}")));
    }
    let h2 = grid.dx() * grid.dx();
    let mut lap = Tridiagonal::zeros(n);
    for i in 1..n - 1 {
        lap.sub[i] = 1.0 / h2;
        lap.diag[i] = -2.0 / h2;
        lap.sup[i] = 1.0 / h2;
    }
    lap.set_identity_row(0);
    lap.set_identity_row(n - 1);
    Ok(lap)
}
