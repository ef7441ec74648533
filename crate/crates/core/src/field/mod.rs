//! Periodic uniform grids on `[-1, 1]^d`, grid functions, quadrature-weighted
//! inner products and the Fourier pseudo-spectral operators built on them.

mod aux;
mod ops;
mod spectral;

use std::fmt;

pub use aux::{aux_u_init, aux_utilde_init, equivalence_residual, h1_apply, radicand_u};
pub use ops::{
    derivative, dealias, g_inverse, gradient_sq, laplacian, neg_laplacian, OperatorKind,
};
pub use spectral::{Spectral, SpectralCoeffs};

use crate::error::{Error, Result};

/// A periodic uniform grid on `[-1, 1]^dims` with `n` points per axis.
///
/// Points sit at `x_j = -1 + j h` for `j = 0..n`, `h = 2 / n`; the point
/// `x_n = 1` is identified with `x_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    dims: usize,
    n: usize,
}

impl Grid {
    pub fn new(dims: usize, n: usize) -> Result<Self> {
        if dims != 1 && dims != 2 {
            return Err(Error::InvalidGrid(format!("dims must be 1 or 2, got {dims}")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and >= 8, got {n}"
            )));
        }
        Ok(Self { dims, n })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        2.0 / self.n as f64
    }

    /// Total number of grid points, `n^dims`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|Omega|`: 2 in 1D, 4 in 2D.
    pub fn volume(&self) -> f64 {
        2f64.powi(self.dims as i32)
    }

    /// Quadrature weight `h^dims` of a single point.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dims as i32)
    }

    pub fn coord(&self, j: usize) -> f64 {
        -1.0 + j as f64 * self.h()
    }

    /// Spatial shape of a field, row-major (`[n]` or `[n, n]`).
    pub fn shape(&self) -> Vec<usize> {
        vec![self.n; self.dims]
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D grid with n = {}", self.dims, self.n)
    }
}

/// A real grid function. In 2D the storage is row-major with the row index
/// running over `y` and the column index over `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                op: "field",
                left: grid.shape(),
                right: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values".into()));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x)` (1D) or `f(x, y)` (2D) at the grid points.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = grid.n();
        let values = match grid.dims() {
            1 => (0..n).map(|j| f(&[grid.coord(j)])).collect(),
            _ => (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| f(&[grid.coord(j), grid.coord(i)]))
                .collect(),
        };
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        Ok(Field::from_vec_unchecked(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// Quadrature-weighted L2 norm.
    pub fn norm(&self) -> f64 {
        inner_product(self, self).expect("same grid").sqrt()
    }

    /// Cyclic shift by `offsets` points per axis (`[sx]` or `[sy, sx]`).
    pub fn shifted(&self, offsets: &[usize]) -> Field {
        let n = self.grid.n();
        let mut out = vec![0.0; self.values.len()];
        match self.grid.dims() {
            1 => {
                for j in 0..n {
                    out[(j + offsets[0]) % n] = self.values[j];
                }
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        out[((i + offsets[0]) % n) * n + (j + offsets[1]) % n] =
                            self.values[i * n + j];
                    }
                }
            }
        }
        Field::from_vec_unchecked(self.grid, out)
    }
}

/// Neumaier-compensated sum; the error stays near one rounding of the
/// result instead of growing with the number of terms.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Discrete L2 pairing `h^dims * sum_i u_i v_i`.
pub fn inner_product(u: &Field, v: &Field) -> Result<f64> {
    u.grid.check_same(&v.grid)?;
    let s = compensated_sum(u.values.iter().zip(&v.values).map(|(a, b)| a * b));
    Ok(u.grid.cell_volume() * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_lost_terms() {
        let terms = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(terms.iter().sum::<f64>(), 1.0);
        assert_eq!(compensated_sum(terms), 2.0);
        let tenths = std::iter::repeat(0.1).take(10);
        assert_eq!(compensated_sum(tenths), 1.0);
    }

    #[test]
    fn grid_invariants() {
        let g1 = Grid::new(1, 256).unwrap();
        assert_eq!(g1.h() * g1.n() as f64, 2.0);
        assert_eq!(g1.volume(), 2.0);
        let g2 = Grid::new(2, 128).unwrap();
        assert_eq!(g2.volume(), 4.0);
        assert_eq!(g2.len(), 128 * 128);
        assert!(Grid::new(1, 7).is_err());
        assert!(Grid::new(1, 6).is_err());
        assert!(Grid::new(3, 16).is_err());
    }

    #[test]
    fn inner_product_of_constants_is_volume() {
        let g = Grid::new(1, 64).unwrap();
        let one = Field::constant(g, 1.0);
        assert_eq!(inner_product(&one, &one).unwrap(), 2.0);
        let zero = Field::zeros(g);
        let v = Field::from_fn(g, |x| x[0].sin());
        assert_eq!(inner_product(&zero, &v).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_rejects_grid_mismatch() {
        let a = Field::zeros(Grid::new(1, 16).unwrap());
        let b = Field::zeros(Grid::new(1, 32).unwrap());
        assert!(matches!(
            inner_product(&a, &b),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn field_rejects_non_finite_and_bad_length() {
        let g = Grid::new(1, 8).unwrap();
        assert!(Field::new(g, vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(Field::new(g, v).is_err());
    }

    #[test]
    fn shift_is_a_permutation() {
        let g = Grid::new(2, 8).unwrap();
        let f = Field::from_fn(g, |p| p[0] + 10.0 * p[1]);
        let s = f.shifted(&[3, 5]);
        let back = s.shifted(&[5, 3]);
        assert_eq!(back, f);
    }
}
