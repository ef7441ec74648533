use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use super::{Field, Grid};

/// Fourier coefficients of a real field in Hermitian-symmetric (half-spectrum)
/// storage: `n/2 + 1` modes in 1D, `n x (n/2 + 1)` in 2D with the row index
/// over the full `y` mode range and the column index over non-negative `x`
/// modes. Unnormalized forward DFT convention.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    pub grid: Grid,
    pub coeffs: Vec<Complex64>,
}

/// Precomputed transform plans and wavenumbers for one grid. Immutable once
/// built, shared across threads through [`Spectral::for_grid`].
pub struct Spectral {
    grid: Grid,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Option<Arc<dyn Fft<f64>>>,
    col_inv: Option<Arc<dyn Fft<f64>>>,
}

fn cache() -> &'static Mutex<HashMap<Grid, Arc<Spectral>>> {
    static CACHE: OnceLock<Mutex<HashMap<Grid, Arc<Spectral>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Spectral {
    pub fn for_grid(grid: Grid) -> Arc<Spectral> {
        let mut map = cache().lock().expect("spectral cache poisoned");
        map.entry(grid)
            .or_insert_with(|| Arc::new(Spectral::new(grid)))
            .clone()
    }

    fn new(grid: Grid) -> Self {
        let n = grid.n();
        let mut real = RealFftPlanner::<f64>::new();
        let (col_fwd, col_inv) = if grid.dims() == 2 {
            let mut planner = FftPlanner::<f64>::new();
            (
                Some(planner.plan_fft_forward(n)),
                Some(planner.plan_fft_inverse(n)),
            )
        } else {
            (None, None)
        };
        Self {
            grid,
            r2c: real.plan_fft_forward(n),
            c2r: real.plan_fft_inverse(n),
            col_fwd,
            col_inv,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Number of stored modes along the half (last) axis.
    pub fn half_len(&self) -> usize {
        self.grid.n() / 2 + 1
    }

    /// Signed mode index of storage position `j` along a full axis.
    pub fn mode_index(&self, j: usize) -> i64 {
        let n = self.grid.n();
        if j <= n / 2 {
            j as i64
        } else {
            j as i64 - n as i64
        }
    }

    /// Wavenumber `k = pi m` for domain length 2.
    pub fn wavenumber(m: i64) -> f64 {
        PI * m as f64
    }

    /// Visits every stored mode as `(index, mx, my)`; `my` is 0 in 1D.
    pub fn for_each_mode(&self, mut f: impl FnMut(usize, i64, i64)) {
        let nh = self.half_len();
        match self.grid.dims() {
            1 => (0..nh).for_each(|jx| f(jx, jx as i64, 0)),
            _ => {
                for iy in 0..self.grid.n() {
                    let my = self.mode_index(iy);
                    for jx in 0..nh {
                        f(iy * nh + jx, jx as i64, my);
                    }
                }
            }
        }
    }

    pub fn forward(&self, field: &Field) -> SpectralCoeffs {
        debug_assert_eq!(field.grid(), self.grid);
        let n = self.grid.n();
        let nh = self.half_len();
        let rows = if self.grid.dims() == 1 { 1 } else { n };
        let mut coeffs = vec![Complex64::new(0.0, 0.0); rows * nh];
        let mut input = vec![0.0; n];
        let mut scratch = self.r2c.make_scratch_vec();
        for r in 0..rows {
            input.copy_from_slice(&field.values()[r * n..(r + 1) * n]);
            self.r2c
                .process_with_scratch(&mut input, &mut coeffs[r * nh..(r + 1) * nh], &mut scratch)
                .expect("forward real transform");
        }
        if let Some(col) = &self.col_fwd {
            transform_columns(col.as_ref(), &mut coeffs, n, nh);
        }
        SpectralCoeffs {
            grid: self.grid,
            coeffs,
        }
    }

    /// Inverse transform including the `1/n^dims` normalization.
    pub fn inverse(&self, spec: &SpectralCoeffs) -> Field {
        debug_assert_eq!(spec.grid, self.grid);
        let n = self.grid.n();
        let nh = self.half_len();
        let rows = if self.grid.dims() == 1 { 1 } else { n };
        let mut coeffs = spec.coeffs.clone();
        if let Some(col) = &self.col_inv {
            transform_columns(col.as_ref(), &mut coeffs, n, nh);
        }
        let norm = 1.0 / self.grid.len() as f64;
        let mut values = vec![0.0; rows * n];
        let mut scratch = self.c2r.make_scratch_vec();
        for r in 0..rows {
            let row = &mut coeffs[r * nh..(r + 1) * nh];
            // The DC and Nyquist entries of a real row are real; drop rounding residue.
            row[0].im = 0.0;
            row[nh - 1].im = 0.0;
            self.c2r
                .process_with_scratch(row, &mut values[r * n..(r + 1) * n], &mut scratch)
                .expect("inverse real transform");
        }
        values.iter_mut().for_each(|v| *v *= norm);
        Field::from_vec_unchecked(self.grid, values)
    }

    /// Applies a real mode multiplier `m(mx, my)` to the spectrum of `u`.
    pub fn apply_real_multiplier(&self, u: &Field, mult: impl Fn(i64, i64) -> f64) -> Field {
        let mut spec = self.forward(u);
        self.for_each_mode(|idx, mx, my| spec.coeffs[idx] *= mult(mx, my));
        self.inverse(&spec)
    }

    /// Synthesizes a real field from Fourier amplitudes given in the physical
    /// basis `sum_m c_m exp(i pi (mx x + my y))`, accounting for the grid
    /// origin at `-1`. `modes` lists `(mx, my, c)` on the stored half plane;
    /// Hermitian partners are implied. Modes with `|m| >= n/2` on either axis
    /// are not resolved by the grid and are skipped.
    pub fn synthesize(&self, modes: &[(i64, i64, Complex64)]) -> Field {
        let n = self.grid.n() as i64;
        let nh = self.half_len();
        let total = self.grid.len() as f64;
        let mut spec = SpectralCoeffs {
            grid: self.grid,
            coeffs: vec![Complex64::new(0.0, 0.0); self.grid.n().pow(self.grid.dims() as u32 - 1) * nh],
        };
        for &(mx, my, c) in modes {
            if 2 * mx.abs() >= n || 2 * my.abs() >= n {
                continue;
            }
            // exp(i pi m x_j) = (-1)^m exp(2 pi i m j / n)
            let sign = if (mx + my).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let value = c * (sign * total);
            let iy = my.rem_euclid(n) as usize;
            let idx = iy * nh + mx as usize;
            spec.coeffs[idx] += value;
            if mx == 0 && my != 0 {
                // Column mx = 0 holds both members of the Hermitian pair.
                let jy = (-my).rem_euclid(n) as usize;
                spec.coeffs[jy * nh] += value.conj();
            } else if mx == 0 {
                spec.coeffs[idx] = Complex64::new(spec.coeffs[idx].re, 0.0);
            }
        }
        self.inverse(&spec)
    }
}

fn transform_columns(fft: &dyn Fft<f64>, data: &mut [Complex64], n: usize, nh: usize) {
    let mut column = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for c in 0..nh {
        for r in 0..n {
            column[r] = data[r * nh + c];
        }
        fft.process_with_scratch(&mut column, &mut scratch);
        for r in 0..n {
            data[r * nh + c] = column[r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_field(grid: Grid, seed: u64) -> Field {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Field::new(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn round_trip_1d_and_2d() {
        for grid in [Grid::new(1, 64).unwrap(), Grid::new(2, 16).unwrap()] {
            let sp = Spectral::for_grid(grid);
            let u = random_field(grid, 3);
            let back = sp.inverse(&sp.forward(&u));
            let err = u.sub(&back).unwrap().max_abs() / u.max_abs();
            assert!(err <= 1e-12, "{grid}: {err}");
        }
    }

    #[test]
    fn synthesize_matches_physical_basis() {
        let grid = Grid::new(2, 16).unwrap();
        let sp = Spectral::for_grid(grid);
        // 0.5 (a - i b) e^{i k.x} + c.c. = a cos(k.x) + b sin(k.x)
        let (a, b) = (0.7, -1.3);
        let modes = [
            (2, -3, Complex64::new(a / 2.0, -b / 2.0)),
            (0, 1, Complex64::new(0.25, 0.0)),
            (0, 0, Complex64::new(0.4, 0.0)),
        ];
        let f = sp.synthesize(&modes);
        let expected = Field::from_fn(grid, |p| {
            let th = PI * (2.0 * p[0] - 3.0 * p[1]);
            a * th.cos() + b * th.sin() + 0.5 * (PI * p[1]).cos() + 0.4
        });
        assert!(f.sub(&expected).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn mode_indices_wrap() {
        let sp = Spectral::for_grid(Grid::new(1, 8).unwrap());
        assert_eq!(sp.mode_index(3), 3);
        assert_eq!(sp.mode_index(4), 4);
        assert_eq!(sp.mode_index(5), -3);
    }
}
