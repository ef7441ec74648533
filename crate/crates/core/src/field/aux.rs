//! Auxiliary-variable quantities for the Allen-Cahn gradient flow
//! (`G = I`, `D = -eps^2 Laplacian`, `F(phi) = (phi^2 - 1)^2 / 4`), used as
//! continuum oracles and to seed the network state.

use super::{gradient_sq, laplacian, Field};
use crate::error::{Error, Result};

/// Double-well potential `F(phi) = (phi^2 - 1)^2 / 4`.
pub fn double_well(phi: f64) -> f64 {
    let s = phi * phi - 1.0;
    0.25 * s * s
}

/// `1/2 phi^2 + eps^2/2 |grad phi|^2 + F(phi) + C`, pointwise.
pub fn radicand_u(phi: &Field, eps: f64, c: f64) -> Field {
    let g2 = gradient_sq(phi);
    phi.zip_map(&g2, |p, g| 0.5 * p * p + 0.5 * eps * eps * g + double_well(p) + c)
        .expect("same grid")
}

fn radicand_utilde(phi: &Field, eps: f64, c_tilde: f64) -> Field {
    let g2 = gradient_sq(phi);
    phi.zip_map(&g2, |p, g| 0.5 * eps * eps * g + double_well(p) + c_tilde)
        .expect("same grid")
}

fn checked_sqrt(radicand: Field) -> Result<Field> {
    let min = radicand.values().iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        return Err(Error::NegativeRadicand { min });
    }
    Ok(radicand.map(f64::sqrt))
}

/// Initial auxiliary variable `U(phi)`.
pub fn aux_u_init(phi0: &Field, eps: f64, c: f64) -> Result<Field> {
    checked_sqrt(radicand_u(phi0, eps, c))
}

/// Alternative auxiliary variable built from the whole energy density.
pub fn aux_utilde_init(phi0: &Field, eps: f64, c_tilde: f64) -> Result<Field> {
    checked_sqrt(radicand_utilde(phi0, eps, c_tilde))
}

/// `H1(phi) = (G^{-1} phi + D phi + f(phi)) / U(phi)`; for Allen-Cahn the
/// numerator reduces to `-eps^2 Laplacian(phi) + phi^3`.
pub fn h1_apply(phi: &Field, eps: f64, c: f64) -> Result<Field> {
    let u = aux_u_init(phi, eps, c)?;
    if u.values().iter().any(|&v| v == 0.0) {
        return Err(Error::ZeroRadicand);
    }
    let numerator = h1_numerator(phi, eps);
    numerator.zip_map(&u, |a, b| a / b)
}

pub(crate) fn h1_numerator(phi: &Field, eps: f64) -> Field {
    let lap = laplacian(phi);
    phi.zip_map(&lap, |p, l| p - eps * eps * l + (p * p * p - p))
        .expect("same grid")
}

/// Relative discrepancy between the auxiliary-variable right-hand side
/// `phi - H1(phi) U(phi)` and the Allen-Cahn right-hand side
/// `eps^2 Laplacian(phi) + phi - phi^3`.
pub fn equivalence_residual(phi: &Field, eps: f64, c: f64) -> Result<f64> {
    let h1 = h1_apply(phi, eps, c)?;
    let u = aux_u_init(phi, eps, c)?;
    let lap = laplacian(phi);
    let aux_rhs = phi.sub(&h1.zip_map(&u, |a, b| a * b)?)?;
    let ac_rhs = phi.zip_map(&lap, |p, l| eps * eps * l + p - p * p * p)?;
    let diff = aux_rhs.sub(&ac_rhs)?;
    Ok(diff.norm() / ac_rhs.norm().max(1.0))
}
