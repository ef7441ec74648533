use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::energy::{discrete_energy_new, discrete_energy_with, g_norm_sq, original_energy};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::model::{BlockKind, BlockState, EStableNet};

/// Absolute per-block tolerance for the decay identity and for monotonicity.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

/// Energies of one sample after one block; block 0 is the input state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockRecord {
    pub sample: usize,
    pub block: usize,
    /// `E~(phi, U)` for estable nets, `E~_new(U~)` for aux-tilde nets.
    pub discrete_energy: f64,
    pub original_energy: f64,
    /// `||phi^n - phi^{n-1}||^2` (G-weighted for non-identity G); 0 for block 0.
    pub phi_increment: f64,
    /// `||U^n - U^{n-1}||^2`; 0 for block 0.
    pub u_increment: f64,
    /// `|dE~ + phi_increment / 2 + u_increment|` for estable nets; 0 otherwise.
    pub identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub blocks: usize,
    pub records: Vec<BlockRecord>,
}

impl EnergyTrace {
    pub fn samples(&self) -> usize {
        self.records.len() / (self.blocks + 1)
    }

    pub fn sample(&self, s: usize) -> &[BlockRecord] {
        &self.records[s * (self.blocks + 1)..(s + 1) * (self.blocks + 1)]
    }

    pub fn max_identity_residual(&self) -> f64 {
        self.records.iter().map(|r| r.identity_residual).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    /// The discrete energy went up by this much.
    Increase(f64),
    /// The decay identity missed by this much.
    Identity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub sample: usize,
    pub block: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ViolationKind::Increase(d) => write!(
                f,
                "sample {} block {}: discrete energy increased by {d:e}",
                self.sample, self.block
            ),
            ViolationKind::Identity(r) => write!(
                f,
                "sample {} block {}: decay identity residual {r:e} exceeds {IDENTITY_TOLERANCE:e}",
                self.sample, self.block
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub trace: EnergyTrace,
    pub violations: Vec<Violation>,
    /// Samples whose original energy never increases from block to block.
    pub original_monotone: usize,
}

impl DecayReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.trace.samples()
    }

    pub fn discrete_monotone(&self) -> usize {
        let mut bad: Vec<usize> = self
            .violations
            .iter()
            .filter(|v| matches!(v.kind, ViolationKind::Increase(_)))
            .map(|v| v.sample)
            .collect();
        bad.dedup();
        self.samples() - bad.len()
    }

    pub fn original_monotone_fraction(&self) -> f64 {
        self.original_monotone as f64 / self.samples().max(1) as f64
    }
}

fn slice_fields(t: &Tensor, grid: Grid) -> Vec<Field> {
    t.data()
        .chunks_exact(grid.len())
        .map(|c| Field::from_vec_unchecked(grid, c.to_vec()))
        .collect()
}

/// Runs `net` on `phi0` and checks block-by-block energy decay. Estable nets
/// are also checked against the exact identity
/// `dE~ = -1/2 ||dphi||^2 - ||dU||^2`.
pub fn verify_decay(net: &EStableNet, phi0: &[Field], batch_size: usize) -> Result<DecayReport> {
    let kind = net.config.kind;
    if kind == BlockKind::Plain {
        return Err(Error::Model(
            "plain networks carry no auxiliary variable, so there is no discrete energy to verify".into(),
        ));
    }
    let grid = phi0
        .first()
        .map(Field::grid)
        .ok_or_else(|| Error::Model("no input samples".into()))?;
    net.check_grid(Some(grid))?;
    let (eps, c, g_kind) = (net.config.epsilon, net.config.c, net.config.g_inverse);
    let blocks = net.config.blocks;

    let mut records = Vec::with_capacity(phi0.len() * (blocks + 1));
    let mut violations = Vec::new();
    let mut original_monotone = 0;
    let mut offset = 0;
    for chunk in phi0.chunks(batch_size.max(1)) {
        let trace: Vec<BlockState<Tensor>> = net.forward(chunk)?;
        let states: Vec<(Vec<Field>, Vec<Field>)> = trace
            .iter()
            .map(|st| {
                let u = st.u.as_ref().expect("aux kinds carry U");
                (slice_fields(&st.phi, grid), slice_fields(u, grid))
            })
            .collect();
        for s in 0..chunk.len() {
            let sample = offset + s;
            let mut prev: Option<(f64, f64)> = None;
            let mut orig_ok = true;
            for (block, (phis, us)) in states.iter().enumerate() {
                let (phi, u) = (&phis[s], &us[s]);
                let energy = match kind {
                    BlockKind::EStable => discrete_energy_with(phi, u, c, g_kind)?,
                    _ => discrete_energy_new(u, c),
                };
                let orig = original_energy(phi, eps);
                let mut rec = BlockRecord {
                    sample,
                    block,
                    discrete_energy: energy,
                    original_energy: orig,
                    phi_increment: 0.0,
                    u_increment: 0.0,
                    identity_residual: 0.0,
                };
                if let Some((e_prev, o_prev)) = prev {
                    let (p_prev, u_prev) = (&states[block - 1].0[s], &states[block - 1].1[s]);
                    rec.phi_increment = g_norm_sq(&phi.sub(p_prev)?, g_kind)?;
                    let du = u.sub(u_prev)?.norm();
                    rec.u_increment = du * du;
                    let delta = energy - e_prev;
                    if kind == BlockKind::EStable {
                        rec.identity_residual = (delta + 0.5 * rec.phi_increment + rec.u_increment).abs();
                        if !(rec.identity_residual <= IDENTITY_TOLERANCE) {
                            violations.push(Violation {
                                sample,
                                block,
                                kind: ViolationKind::Identity(rec.identity_residual),
                            });
                        }
                    }
                    if !(delta <= IDENTITY_TOLERANCE) {
                        violations.push(Violation {
                            sample,
                            block,
                            kind: ViolationKind::Increase(delta),
                        });
                    }
                    if orig > o_prev {
                        orig_ok = false;
                    }
                }
                prev = Some((energy, orig));
                records.push(rec);
            }
            if orig_ok {
                original_monotone += 1;
            }
        }
        offset += chunk.len();
    }
    Ok(DecayReport {
        trace: EnergyTrace { blocks, records },
        violations,
        original_monotone,
    })
}

/// Writes `sample,block,discrete_energy,original_energy,identity_residual`
/// with 17 significant digits.
pub fn export_trace(trace: &EnergyTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "sample,block,discrete_energy,original_energy,identity_residual").map_err(io)?;
    for r in &trace.records {
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{:.16e}",
            r.sample, r.block, r.discrete_energy, r.original_energy, r.identity_residual
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parses a file written by [`export_trace`]. Increments are not stored and
/// come back as zero.
pub fn read_trace(path: impl AsRef<Path>) -> Result<EnergyTrace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::format(path, format!("line {}: malformed row", i + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        records.push(BlockRecord {
            sample: cols[0].parse().map_err(|_| bad())?,
            block: cols[1].parse().map_err(|_| bad())?,
            discrete_energy: num(cols[2])?,
            original_energy: num(cols[3])?,
            phi_increment: 0.0,
            u_increment: 0.0,
            identity_residual: num(cols[4])?,
        });
    }
    let blocks = records.iter().map(|r| r.block).max().unwrap_or(0);
    Ok(EnergyTrace { blocks, records })
}

/// Dumps every intermediate state: `sample,block,index,x[,y],phi,u`. The `u`
/// column is empty for plain networks.
pub fn export_block_fields(net: &EStableNet, phi0: &[Field], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let grid = phi0
        .first()
        .map(Field::grid)
        .ok_or_else(|| Error::Model("no input samples".into()))?;
    let trace = net.forward(phi0)?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let n = grid.n();
    if grid.dims() == 1 {
        writeln!(w, "sample,block,index,x,phi,u").map_err(io)?;
    } else {
        writeln!(w, "sample,block,index,x,y,phi,u").map_err(io)?;
    }
    for (block, st) in trace.iter().enumerate() {
        let phis = slice_fields(&st.phi, grid);
        let us = st.u.as_ref().map(|u| slice_fields(u, grid));
        for (s, phi) in phis.iter().enumerate() {
            for (idx, p) in phi.values().iter().enumerate() {
                let u = us.as_ref().map(|u| format!("{:?}", u[s].values()[idx])).unwrap_or_default();
                if grid.dims() == 1 {
                    writeln!(w, "{s},{block},{idx},{:?},{p:?},{u}", grid.coord(idx)).map_err(io)?;
                } else {
                    let (x, y) = (grid.coord(idx % n), grid.coord(idx / n));
                    writeln!(w, "{s},{block},{idx},{x:?},{y:?},{p:?},{u}").map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}
