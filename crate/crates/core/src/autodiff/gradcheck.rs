use super::{Graph, Ops, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf)`, per
    /// input, maximized over inputs. Zero when both gradients vanish.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences with step `step`, coordinate by coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(&out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
    let out = f(&mut g, &vars)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = g.grad_of(out, *var)?;
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + step;
            let fp = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - step;
            let fm = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            numeric.push((fp - fm) / (2.0 * step));
        }
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let abs = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        report.max_abs_error = report.max_abs_error.max(abs);
        if scale > 0.0 {
            report.max_rel_error = report.max_rel_error.max(abs / scale);
        }
        report.coordinates += analytic.len();
    }
    Ok(report)
}
