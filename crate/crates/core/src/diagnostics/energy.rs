use crate::error::Result;
use crate::field::{compensated_sum, g_inverse, gradient_sq, inner_product, Field, OperatorKind};

/// Network energy `-1/2 ||phi||^2 + ||U||^2 - C |Omega|` for `G = I`.
pub fn discrete_energy(phi: &Field, u: &Field, c: f64) -> Result<f64> {
    Ok(-0.5 * inner_product(phi, phi)? + inner_product(u, u)? - c * phi.grid().volume())
}

/// [`discrete_energy`] for a general mobility: the quadratic term becomes
/// `-1/2 (phi, G^{-1} phi)`. Equal to it for `OperatorKind::Identity`.
pub fn discrete_energy_with(phi: &Field, u: &Field, c: f64, g_inverse_kind: OperatorKind) -> Result<f64> {
    if g_inverse_kind == OperatorKind::Identity {
        return discrete_energy(phi, u, c);
    }
    Ok(-0.5 * g_norm_sq(phi, g_inverse_kind)? + inner_product(u, u)? - c * phi.grid().volume())
}

/// `(v, G^{-1} v)`, with `G^{-1}` taken as the pseudo-inverse that ignores
/// the mean (the same operator the network blocks apply).
pub fn g_norm_sq(v: &Field, g_inverse_kind: OperatorKind) -> Result<f64> {
    if g_inverse_kind == OperatorKind::Identity {
        return inner_product(v, v);
    }
    let m = v.mean();
    let centered = v.map(|x| x - m);
    inner_product(&centered, &g_inverse(&centered, g_inverse_kind)?)
}

/// Energy of the alternative auxiliary variable, `||U~||^2 - C~ |Omega|`.
pub fn discrete_energy_new(u_tilde: &Field, c_tilde: f64) -> f64 {
    u_tilde.norm().powi(2) - c_tilde * u_tilde.grid().volume()
}

/// Allen-Cahn energy `int eps^2/2 |grad phi|^2 + (phi^2 - 1)^2 / 4`, with
/// spectral gradients and the rectangle rule.
pub fn original_energy(phi: &Field, eps: f64) -> f64 {
    let g2 = gradient_sq(phi);
    let density = compensated_sum(
        phi.values()
            .iter()
            .zip(g2.values())
            .map(|(&p, &g)| 0.5 * eps * eps * g + 0.25 * (p * p - 1.0).powi(2)),
    );
    density * phi.grid().cell_volume()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::SQRT_2;

    use super::*;
    use crate::field::{aux_u_init, Grid};

    #[test]
    fn discrete_energy_constants() {
        let g = Grid::new(1, 32).unwrap();
        assert_eq!(discrete_energy(&Field::zeros(g), &Field::zeros(g), 0.0).unwrap(), 0.0);
        let one = Field::constant(g, 1.0);
        assert!((discrete_energy(&one, &one, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let g2 = Grid::new(2, 16).unwrap();
        let one = Field::constant(g2, 1.0);
        assert!((discrete_energy(&one, &one, 0.5).unwrap() - (-2.0 + 4.0 - 2.0)).abs() < 1e-14);
    }

    #[test]
    fn discrete_energy_matches_naive_sum() {
        let g = Grid::new(1, 128).unwrap();
        let phi = Field::from_fn(g, |p| (3.0 * p[0]).sin() + 0.2);
        let u = Field::from_fn(g, |p| (p[0] * p[0] + 0.1).sqrt());
        let c = 0.3;
        let h = g.h();
        let mut oracle = 0.0;
        for (a, b) in phi.values().iter().zip(u.values()) {
            oracle += h * (-0.5 * a * a + b * b);
        }
        oracle -= c * 2.0;
        let e = discrete_energy(&phi, &u, c).unwrap();
        assert!((e - oracle).abs() <= 1e-13 * oracle.abs());
    }

    #[test]
    fn discrete_energy_new_constants() {
        let g = Grid::new(1, 32).unwrap();
        assert_eq!(discrete_energy_new(&Field::zeros(g), 0.0), 0.0);
        assert!((discrete_energy_new(&Field::constant(g, 0.5), 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn original_energy_constants() {
        let g = Grid::new(1, 32).unwrap();
        assert!(original_energy(&Field::constant(g, 1.0), 0.01).abs() < 1e-15);
        assert!((original_energy(&Field::zeros(g), 0.01) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn original_energy_of_kink_matches_refined_quadrature() {
        // Periodic kink pair with interfaces at x = 0 and x = +-1.
        let eps = 0.05;
        let sharpness = 1.0 / (SQRT_2 * eps * std::f64::consts::PI);
        let kink = move |x: f64| (sharpness * (std::f64::consts::PI * x).sin()).tanh();
        let g = Grid::new(1, 256).unwrap();
        let phi = Field::from_fn(g, |p| kink(p[0]));
        let e = original_energy(&phi, eps);

        // Oracle: fine-grid rectangle rule with fourth-order differences.
        let n = 1 << 16;
        let h = 2.0 / n as f64;
        let mut oracle = 0.0;
        for j in 0..n {
            let x = -1.0 + j as f64 * h;
            let d = (-kink(x + 2.0 * h) + 8.0 * kink(x + h) - 8.0 * kink(x - h) + kink(x - 2.0 * h))
                / (12.0 * h);
            let p = kink(x);
            oracle += h * (0.5 * eps * eps * d * d + 0.25 * (p * p - 1.0).powi(2));
        }
        assert!((e - oracle).abs() <= 1e-6, "{e} vs {oracle}");
    }

    #[test]
    fn exact_auxiliary_variable_recovers_original_energy() {
        let g = Grid::new(1, 256).unwrap();
        let phi = Field::from_fn(g, |p| 0.8 * (std::f64::consts::PI * p[0]).sin() + 0.1);
        for c in [0.0, 0.7] {
            let u = aux_u_init(&phi, 0.01, c).unwrap();
            let lhs = discrete_energy(&phi, &u, c).unwrap();
            assert!((lhs - original_energy(&phi, 0.01)).abs() <= 1e-12);
        }
    }
}
