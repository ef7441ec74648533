use num_complex::Complex64;

use super::{Field, Spectral};
use crate::error::{Error, Result};

/// Which mobility operator `G` a gradient flow uses; `g_inverse` applies its
/// inverse exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    /// `G = I` (Allen-Cahn).
    Identity,
    /// `G = -Laplacian` (Cahn-Hilliard); invertible on zero-mean fields.
    InverseNegLaplacian,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Identity => "identity",
            OperatorKind::InverseNegLaplacian => "inverse-neg-laplacian",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(OperatorKind::Identity),
            "inverse-neg-laplacian" => Some(OperatorKind::InverseNegLaplacian),
            _ => None,
        }
    }
}

fn k_sq(mx: i64, my: i64) -> f64 {
    let (kx, ky) = (Spectral::wavenumber(mx), Spectral::wavenumber(my));
    kx * kx + ky * ky
}

/// Spectral Laplacian.
pub fn laplacian(u: &Field) -> Field {
    Spectral::for_grid(u.grid()).apply_real_multiplier(u, |mx, my| -k_sq(mx, my))
}

pub fn neg_laplacian(u: &Field) -> Field {
    Spectral::for_grid(u.grid()).apply_real_multiplier(u, k_sq)
}

/// Spectral first derivative along `axis` (0 = x, 1 = y). The Nyquist mode
/// of the differentiated axis is dropped so the result stays real.
pub fn derivative(u: &Field, axis: usize) -> Field {
    let grid = u.grid();
    assert!(axis < grid.dims(), "axis {axis} out of range for {grid}");
    let sp = Spectral::for_grid(grid);
    let nyq = grid.n() as i64 / 2;
    let mut spec = sp.forward(u);
    sp.for_each_mode(|idx, mx, my| {
        let m = if axis == 0 { mx } else { my };
        let factor = if m.abs() == nyq {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, Spectral::wavenumber(m))
        };
        spec.coeffs[idx] *= factor;
    });
    sp.inverse(&spec)
}

/// Pointwise `|grad u|^2`.
pub fn gradient_sq(u: &Field) -> Field {
    let mut out = Field::zeros(u.grid());
    for axis in 0..u.grid().dims() {
        let d = derivative(u, axis);
        out.values_mut()
            .iter_mut()
            .zip(d.values())
            .for_each(|(o, v)| *o += v * v);
    }
    out
}

/// Exact `G^{-1} u`.
pub fn g_inverse(u: &Field, kind: OperatorKind) -> Result<Field> {
    match kind {
        OperatorKind::Identity => Ok(u.clone()),
        OperatorKind::InverseNegLaplacian => {
            let mean = u.mean();
            if mean.abs() > 1e-12 * u.max_abs().max(1.0) {
                return Err(Error::NonZeroMean { mean });
            }
            Ok(Spectral::for_grid(u.grid()).apply_real_multiplier(u, |mx, my| {
                if mx == 0 && my == 0 {
                    0.0
                } else {
                    1.0 / k_sq(mx, my)
                }
            }))
        }
    }
}

/// Two-thirds rule: zeroes every mode with `|m| > n/3` on any axis.
pub fn dealias(u: &Field) -> Field {
    let cutoff = (u.grid().n() / 3) as i64;
    Spectral::for_grid(u.grid()).apply_real_multiplier(u, |mx, my| {
        if mx.abs() > cutoff || my.abs() > cutoff {
            0.0
        } else {
            1.0
        }
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::field::Grid;

    fn g1() -> Grid {
        Grid::new(1, 64).unwrap()
    }

    fn g2() -> Grid {
        Grid::new(2, 32).unwrap()
    }

    fn max_diff(a: &Field, b: &Field) -> f64 {
        a.sub(b).unwrap().max_abs()
    }

    /// Smooth band-limited test field.
    fn smooth(grid: Grid) -> Field {
        Field::from_fn(grid, |p| {
            let y = p.get(1).copied().unwrap_or(0.3);
            0.4 * (PI * p[0]).sin() + 0.3 * (3.0 * PI * (p[0] + y)).cos() - 0.2 * (2.0 * PI * y).sin() + 0.1
        })
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        for g in [g1(), g2()] {
            assert!(laplacian(&Field::constant(g, 3.5)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_eigenfunctions() {
        let u = Field::from_fn(g1(), |p| (PI * p[0]).sin());
        let expected = u.scale(-PI * PI);
        assert!(max_diff(&laplacian(&u), &expected) <= 1e-10);

        let u = Field::from_fn(g2(), |p| (PI * p[0]).sin() * (2.0 * PI * p[1]).cos());
        let expected = u.scale(-5.0 * PI * PI);
        assert!(max_diff(&laplacian(&u), &expected) <= 1e-10);
    }

    #[test]
    fn gradient_sq_analytic() {
        assert!(gradient_sq(&Field::constant(g2(), -2.0)).max_abs() < 1e-12);
        let u = Field::from_fn(g1(), |p| (PI * p[0]).sin());
        let expected = Field::from_fn(g1(), |p| PI * PI * (PI * p[0]).cos().powi(2));
        assert!(max_diff(&gradient_sq(&u), &expected) <= 1e-10);
    }

    #[test]
    fn gradient_sq_converges_to_finite_differences() {
        // Centered differences on a band-limited field: error ~ h^2, so each
        // halving of h should cut the error roughly by 4.
        let mut errors = Vec::new();
        for n in [32, 64, 128, 256] {
            let grid = Grid::new(1, n).unwrap();
            let u = smooth(grid);
            let h = grid.h();
            let v = u.values();
            let fd: Vec<f64> = (0..n)
                .map(|j| {
                    let d = (v[(j + 1) % n] - v[(j + n - 1) % n]) / (2.0 * h);
                    d * d
                })
                .collect();
            let fd = Field::new(grid, fd).unwrap();
            errors.push(max_diff(&gradient_sq(&u), &fd));
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio} from {errors:?}");
        }
    }

    #[test]
    fn g_inverse_identity_and_neg_laplacian() {
        let u = smooth(g1());
        assert_eq!(g_inverse(&u, OperatorKind::Identity).unwrap(), u);

        let s = Field::from_fn(g1(), |p| (PI * p[0]).sin());
        let inv = g_inverse(&s, OperatorKind::InverseNegLaplacian).unwrap();
        assert!(max_diff(&inv, &s.scale(1.0 / (PI * PI))) <= 1e-10);
    }

    #[test]
    fn g_inverse_inverts_neg_laplacian_on_zero_mean() {
        for g in [g1(), g2()] {
            let u = smooth(g);
            let u = u.map(|v| v - u.mean());
            let back = neg_laplacian(&g_inverse(&u, OperatorKind::InverseNegLaplacian).unwrap());
            assert!(max_diff(&back, &u) / u.max_abs() <= 1e-10);
            let back = g_inverse(&neg_laplacian(&u), OperatorKind::InverseNegLaplacian).unwrap();
            assert!(max_diff(&back, &u) / u.max_abs() <= 1e-10);
        }
    }

    #[test]
    fn g_inverse_rejects_nonzero_mean() {
        let u = Field::constant(g1(), 1.0);
        assert!(matches!(
            g_inverse(&u, OperatorKind::InverseNegLaplacian),
            Err(Error::NonZeroMean { .. })
        ));
    }

    #[test]
    fn operators_are_linear() {
        for g in [g1(), g2()] {
            let u = smooth(g);
            let v = u.shifted(&vec![5; g.dims()]).map(|x| x * x);
            let (a, b) = (1.7, -0.6);
            let comb = u.scale(a).add(&v.scale(b)).unwrap();
            let lhs = laplacian(&comb);
            let rhs = laplacian(&u).scale(a).add(&laplacian(&v).scale(b)).unwrap();
            assert!(max_diff(&lhs, &rhs) <= 1e-12 * lhs.max_abs().max(1.0));
            for axis in 0..g.dims() {
                let lhs = derivative(&comb, axis);
                let rhs = derivative(&u, axis)
                    .scale(a)
                    .add(&derivative(&v, axis).scale(b))
                    .unwrap();
                assert!(max_diff(&lhs, &rhs) <= 1e-12 * lhs.max_abs().max(1.0));
            }
        }
    }

    #[test]
    fn dealias_keeps_low_modes() {
        let u = smooth(Grid::new(1, 32).unwrap());
        assert!(max_diff(&dealias(&u), &u) < 1e-13);
        let hi = Field::from_fn(Grid::new(1, 32).unwrap(), |p| (12.0 * PI * p[0]).cos());
        assert!(dealias(&hi).max_abs() < 1e-13);
    }
}
