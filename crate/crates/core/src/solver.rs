//! Pseudo-spectral Allen-Cahn reference solver with adaptive Dormand-Prince
//! 5(4) time stepping.

use crate::diagnostics::original_energy;
use crate::error::{Error, Result};
use crate::field::{dealias, laplacian, Field};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub dealias: bool,
    /// Sorted output times in `[0, t_end]`; empty means `[t_end]`.
    pub snapshot_times: Vec<f64>,
    /// When false the reaction term `phi - phi^3` is dropped and the solver
    /// integrates the heat equation `phi_t = eps^2 Laplacian(phi)`. Test hook.
    pub reaction: bool,
    pub max_steps: usize,
    /// Record the energy after every accepted step in
    /// [`Trajectory::step_energy`].
    pub track_step_energy: bool,
}

impl SolverConfig {
    pub fn new(epsilon: f64, t_end: f64) -> Self {
        Self {
            epsilon,
            t_end,
            rtol: 1e-3,
            atol: 1e-6,
            dealias: true,
            snapshot_times: vec![t_end],
            reaction: true,
            max_steps: 1_000_000,
            track_step_energy: false,
        }
    }

    /// Snapshots at `t_end * k / count` for `k = 0..=count`.
    pub fn with_uniform_snapshots(mut self, count: usize) -> Self {
        self.snapshot_times = (0..=count)
            .map(|k| self.t_end * k as f64 / count as f64)
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::SolverConfig(m.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad("t_end must be finite and non-negative");
        }
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return bad("rtol and atol must be positive");
        }
        if self.snapshot_times.windows(2).any(|w| w[0] > w[1]) {
            return bad("snapshot times must be sorted");
        }
        if self
            .snapshot_times
            .iter()
            .any(|&t| !(0.0..=self.t_end).contains(&t))
        {
            return bad("snapshot times must lie in [0, t_end]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    /// Allen-Cahn energy at each snapshot.
    pub energy: Vec<f64>,
    /// Energy at `t = 0` and after each accepted step, when tracked.
    pub step_energy: Vec<f64>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Field {
        self.states.last().expect("trajectory has at least one snapshot")
    }
}

/// Allen-Cahn right-hand side `eps^2 Laplacian(phi) - phi^3 + phi`, with the
/// cubic term passed through the 2/3-rule filter when `dealias` is set.
pub fn ac_rhs(phi: &Field, eps: f64, dealias_cubic: bool) -> Field {
    rhs(phi, eps, dealias_cubic, true)
}

fn rhs(phi: &Field, eps: f64, dealias_cubic: bool, reaction: bool) -> Field {
    let mut out = laplacian(phi).scale(eps * eps);
    if !reaction {
        return out;
    }
    let cube = phi.map(|p| p * p * p);
    let cube = if dealias_cubic { dealias(&cube) } else { cube };
    for ((o, &p), &c) in out.values_mut().iter_mut().zip(phi.values()).zip(cube.values()) {
        *o += p - c;
    }
    out
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Difference between the 5th- and embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const H_MIN: f64 = 1e-12;

struct Stepper<'a> {
    cfg: &'a SolverConfig,
}

impl Stepper<'_> {
    fn f(&self, phi: &Field) -> Field {
        rhs(phi, self.cfg.epsilon, self.cfg.dealias, self.cfg.reaction)
    }

    fn error_norm(&self, err: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        let (atol, rtol) = (self.cfg.atol, self.cfg.rtol);
        let sum: f64 = err
            .iter()
            .zip(y0.iter().zip(y1))
            .map(|(e, (a, b))| {
                let sc = atol + rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum();
        (sum / err.len() as f64).sqrt()
    }

    fn rms_scaled(&self, v: &[f64], y: &[f64]) -> f64 {
        let sum: f64 = v
            .iter()
            .zip(y)
            .map(|(x, yi)| (x / (self.cfg.atol + self.cfg.rtol * yi.abs())).powi(2))
            .sum();
        (sum / v.len() as f64).sqrt()
    }

    /// Starting step from the usual two-evaluation heuristic.
    fn initial_step(&self, y0: &Field, f0: &Field) -> f64 {
        let d0 = self.rms_scaled(y0.values(), y0.values());
        let d1 = self.rms_scaled(f0.values(), y0.values());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let mut y1 = y0.clone();
        axpy(y1.values_mut(), h0, f0.values());
        let f1 = self.f(&y1);
        let diff: Vec<f64> = f1.values().iter().zip(f0.values()).map(|(a, b)| a - b).collect();
        let d2 = self.rms_scaled(&diff, y0.values()) / h0;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dm).powf(1.0 / 5.0)
        };
        (100.0 * h0).min(h1)
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Integrates Allen-Cahn from `phi0` to `cfg.t_end`, landing exactly on each
/// snapshot time.
pub fn integrate(phi0: &Field, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if phi0.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    let snapshots = if cfg.snapshot_times.is_empty() {
        vec![cfg.t_end]
    } else {
        cfg.snapshot_times.clone()
    };
    let stepper = Stepper { cfg };
    let mut traj = Trajectory {
        times: Vec::with_capacity(snapshots.len()),
        states: Vec::with_capacity(snapshots.len()),
        energy: Vec::with_capacity(snapshots.len()),
        step_energy: Vec::new(),
        steps_accepted: 0,
        steps_rejected: 0,
    };
    let record = |traj: &mut Trajectory, t: f64, y: &Field| {
        traj.times.push(t);
        traj.energy.push(original_energy(y, cfg.epsilon));
        traj.states.push(y.clone());
    };

    let mut t = 0.0;
    let mut y = phi0.clone();
    let mut next = 0;
    while next < snapshots.len() && snapshots[next] <= 0.0 {
        record(&mut traj, 0.0, &y);
        next += 1;
    }
    if next == snapshots.len() {
        return Ok(traj);
    }

    if cfg.track_step_energy {
        traj.step_energy.push(original_energy(&y, cfg.epsilon));
    }
    let mut k1 = stepper.f(&y);
    let mut h = stepper.initial_step(&y, &k1);
    let len = y.values().len();
    let mut stage = Field::zeros(y.grid());
    let mut ks: Vec<Field> = Vec::with_capacity(7);
    let mut err = vec![0.0; len];
    let mut last_rejected = false;
    let mut steps = 0;

    while next < snapshots.len() {
        let target = snapshots[next];
        let remaining = target - t;
        let hits = h >= remaining * (1.0 - 1e-12);
        let h_step = if hits { remaining } else { h };
        if h_step < H_MIN && !hits {
            return Err(Error::StepUnderflow { t, h: h_step });
        }
        steps += 1;
        if steps > cfg.max_steps {
            return Err(Error::StepUnderflow { t, h: h_step });
        }

        ks.clear();
        ks.push(k1.clone());
        for s in 1..7 {
            stage.values_mut().copy_from_slice(y.values());
            for (j, kj) in ks.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    axpy(stage.values_mut(), h_step * a, kj.values());
                }
            }
            if s == 6 {
                break;
            }
            ks.push(stepper.f(&stage));
        }
        // `stage` now holds the 5th-order solution; its slope is the FSAL stage.
        let y_new = stage.clone();
        if y_new.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state at t = {t}")));
        }
        let k7 = stepper.f(&y_new);
        ks.push(k7);
        err.iter_mut().for_each(|e| *e = 0.0);
        for (j, kj) in ks.iter().enumerate() {
            if E[j] != 0.0 {
                axpy(&mut err, h_step * E[j], kj.values());
            }
        }
        let err_norm = stepper.error_norm(&err, y.values(), y_new.values());

        if err_norm <= 1.0 {
            t = if hits { target } else { t + h_step };
            y = y_new;
            k1 = ks.pop().expect("fsal stage");
            traj.steps_accepted += 1;
            if cfg.track_step_energy {
                traj.step_energy.push(original_energy(&y, cfg.epsilon));
            }
            let mut fac = if err_norm == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err_norm.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            if last_rejected {
                fac = fac.min(1.0);
            }
            last_rejected = false;
            // A clipped step says nothing about the admissible size.
            h = if hits { h.max(h_step * fac) } else { h_step * fac };
            while next < snapshots.len() && snapshots[next] <= t {
                record(&mut traj, snapshots[next], &y);
                next += 1;
            }
        } else {
            traj.steps_rejected += 1;
            last_rejected = true;
            h = h_step * (SAFETY * err_norm.powf(-0.2)).max(FAC_MIN);
            if h < H_MIN {
                return Err(Error::StepUnderflow { t, h });
            }
        }
    }
    Ok(traj)
}
