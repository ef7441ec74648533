//! Block networks for gradient flows.
//!
//! Every block owns a small convolution net `Conv-Tanh-Conv-Tanh-Conv-Tanh-Conv`
//! (channel plan `1-16-1-16-1`) evaluated on `phi^n`. Three block kinds use
//! that net differently:
//!
//! * [`BlockKind::EStable`]: the net output is `g = 1/H^n` and the state
//!   `(phi, U)` advances by `U' = g G^{-1}(phi)`, `phi' = phi + 2 g (U' - U)`.
//!   The same `g` enters both updates, so
//!   `E(phi', U') - E(phi, U) = -1/2 |phi' - phi|^2 - |U' - U|^2` for any
//!   weights.
//! * [`BlockKind::AuxTilde`]: the net output is `H` and
//!   `U~' = U~ / (1 + dt H^2 / 2)`, `phi' = phi - dt H U~ / (1 + dt H^2 / 2)`.
//! * [`BlockKind::Plain`]: `phi' = net(phi)`, no auxiliary variable.

mod checkpoint;
mod init;

use std::fmt;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use init::InitScheme;

use crate::autodiff::{Eager, Ops, Parameter, Tensor};
use crate::error::{Error, Result};
use crate::field::{aux_u_init, aux_utilde_init, Field, Grid, OperatorKind};

pub const DEFAULT_CHANNELS: [usize; 5] = [1, 16, 1, 16, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    EStable,
    AuxTilde,
    Plain,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::EStable => "estable-g",
            BlockKind::AuxTilde => "aux-tilde",
            BlockKind::Plain => "plain",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "estable-g" | "estable" => Some(BlockKind::EStable),
            "aux-tilde" => Some(BlockKind::AuxTilde),
            "plain" => Some(BlockKind::Plain),
            _ => None,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            BlockKind::EStable => 0,
            BlockKind::AuxTilde => 1,
            BlockKind::Plain => 2,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(BlockKind::EStable),
            1 => Some(BlockKind::AuxTilde),
            2 => Some(BlockKind::Plain),
            _ => None,
        }
    }

    /// Whether the block carries an auxiliary variable.
    pub fn has_aux(self) -> bool {
        !matches!(self, BlockKind::Plain)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub kind: BlockKind,
    pub dims: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub channels: Vec<usize>,
    pub epsilon: f64,
    /// `C` for the estable kind, `C~` for aux-tilde; unused by plain.
    pub c: f64,
    /// Pseudo time step `T / M` of the aux-tilde kind.
    pub dt: f64,
    pub g_inverse: OperatorKind,
    /// Points per axis of the grid the network was built for; `None`
    /// accepts any grid large enough for the kernel.
    pub grid_n: Option<usize>,
}

impl NetConfig {
    pub fn new(kind: BlockKind, dims: usize, blocks: usize, kernel: usize, epsilon: f64, t_end: f64) -> Self {
        Self {
            kind,
            dims,
            blocks,
            kernel,
            channels: DEFAULT_CHANNELS.to_vec(),
            epsilon,
            c: 0.0,
            dt: t_end / blocks.max(1) as f64,
            g_inverse: OperatorKind::Identity,
            grid_n: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.blocks == 0 {
            return bad("at least one block is required".into());
        }
        if self.dims != 1 && self.dims != 2 {
            return bad(format!("dims must be 1 or 2, got {}", self.dims));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel));
        }
        if self.channels.len() < 2 || self.channels[0] != 1 || *self.channels.last().unwrap() != 1 {
            return bad(format!("channel plan must start and end with 1, got {:?}", self.channels));
        }
        if self.channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if self.kind == BlockKind::AuxTilde && !(self.dt > 0.0) {
            return bad("aux-tilde blocks need dt > 0".into());
        }
        if self.kind == BlockKind::AuxTilde && self.g_inverse != OperatorKind::Identity {
            return bad("aux-tilde blocks require G = identity".into());
        }
        Ok(())
    }

    pub fn layers_per_block(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.pow(self.dims as u32)
    }

    /// Trainable scalars in one block.
    pub fn block_param_count(&self) -> usize {
        let kv = self.kernel_volume();
        self.channels
            .windows(2)
            .map(|w| w[0] * w[1] * kv + w[1])
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.blocks * self.block_param_count()
    }

    /// Parameter shapes in declaration order: for each block and layer, the
    /// weight `(out, in, k[, k])` then the bias `(out)`.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for b in 0..self.blocks {
            for (l, w) in self.channels.windows(2).enumerate() {
                let mut shape = vec![w[1], w[0]];
                shape.extend(std::iter::repeat(self.kernel).take(self.dims));
                out.push((format!("block{b}.conv{l}.weight"), shape));
                out.push((format!("block{b}.conv{l}.bias"), vec![w[1]]));
            }
        }
        out
    }
}

/// One network state; `u` is `None` for plain networks.
#[derive(Debug, Clone)]
pub struct BlockState<V> {
    pub phi: V,
    pub u: Option<V>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EStableNet {
    pub config: NetConfig,
    pub params: Vec<Parameter>,
}

impl EStableNet {
    /// Network with every weight and bias zero.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let params = config
            .param_layout()
            .into_iter()
            .map(|(name, shape)| Parameter::new(name, Tensor::zeros(shape)))
            .collect();
        Ok(Self { config, params })
    }

    pub fn init(config: NetConfig, scheme: InitScheme, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        init::initialize(&mut net, scheme, seed);
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    fn params_per_block(&self) -> usize {
        2 * self.config.layers_per_block()
    }

    /// Registers all parameters with `ops`, in declaration order.
    pub fn bind<O: Ops>(&self, ops: &mut O) -> Vec<O::V> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| ops.param(i, &p.value))
            .collect()
    }

    /// The block's convolution net applied to `phi`: `g` for estable blocks,
    /// `H` for aux-tilde blocks, the next state for plain blocks.
    pub fn block_net<O: Ops>(&self, ops: &mut O, vars: &[O::V], block: usize, phi: &O::V) -> Result<O::V> {
        let per = self.params_per_block();
        let layer_vars = &vars[block * per..(block + 1) * per];
        let layers = self.config.layers_per_block();
        let mut x = phi.clone();
        for l in 0..layers {
            x = ops.conv(&x, &layer_vars[2 * l], &layer_vars[2 * l + 1])?;
            if l + 1 < layers {
                x = ops.tanh(&x);
            }
        }
        Ok(x)
    }

    /// One block update.
    pub fn block_step<O: Ops>(
        &self,
        ops: &mut O,
        vars: &[O::V],
        block: usize,
        state: &BlockState<O::V>,
    ) -> Result<BlockState<O::V>> {
        Ok(self.block_step_with_output(ops, vars, block, state)?.0)
    }

    /// One block update, also returning the block net's output.
    pub fn block_step_with_output<O: Ops>(
        &self,
        ops: &mut O,
        vars: &[O::V],
        block: usize,
        state: &BlockState<O::V>,
    ) -> Result<(BlockState<O::V>, O::V)> {
        let net_out = self.block_net(ops, vars, block, &state.phi)?;
        let next = match self.config.kind {
            BlockKind::EStable => {
                let u = state.u.as_ref().ok_or_else(|| Error::Model("estable block needs U".into()))?;
                estable_update(ops, &net_out, &state.phi, u, self.config.g_inverse)
            }
            BlockKind::AuxTilde => {
                let u = state.u.as_ref().ok_or_else(|| Error::Model("aux-tilde block needs U~".into()))?;
                auxtilde_update(ops, &net_out, &state.phi, u, self.config.dt)
            }
            BlockKind::Plain => Ok(BlockState {
                phi: net_out.clone(),
                u: None,
            }),
        }?;
        Ok((next, net_out))
    }

    /// Initial auxiliary variable for a batch of inputs, as `(batch, 1, ..)`.
    pub fn initial_aux(&self, phi0: &[Field]) -> Result<Option<Tensor>> {
        let (eps, c) = (self.config.epsilon, self.config.c);
        let fields: Vec<Field> = match self.config.kind {
            BlockKind::Plain => return Ok(None),
            BlockKind::EStable => phi0.iter().map(|p| aux_u_init(p, eps, c)).collect::<Result<_>>()?,
            BlockKind::AuxTilde => phi0
                .iter()
                .map(|p| aux_utilde_init(p, eps, c))
                .collect::<Result<_>>()?,
        };
        Tensor::from_fields(&fields).map(Some)
    }

    /// Runs all blocks; the returned trace starts with the input state and
    /// has `M + 1` entries.
    pub fn forward_with<O: Ops>(
        &self,
        ops: &mut O,
        vars: &[O::V],
        phi0: O::V,
        u0: Option<O::V>,
    ) -> Result<Vec<BlockState<O::V>>> {
        Ok(self.forward_with_outputs(ops, vars, phi0, u0)?.0)
    }

    /// [`Self::forward_with`] that also returns each block net's output
    /// (`g`, `H` or the next state, depending on the kind).
    pub fn forward_with_outputs<O: Ops>(
        &self,
        ops: &mut O,
        vars: &[O::V],
        phi0: O::V,
        u0: Option<O::V>,
    ) -> Result<(Vec<BlockState<O::V>>, Vec<O::V>)> {
        if self.config.kind.has_aux() && u0.is_none() {
            return Err(Error::Model(format!("{} network needs an initial U", self.config.kind)));
        }
        let in_shape = ops.value(&phi0).shape();
        if in_shape.len() != self.config.dims + 2 || in_shape[1] != 1 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: in_shape.to_vec(),
                right: vec![0, 1, self.config.dims],
            });
        }
        let mut trace = Vec::with_capacity(self.config.blocks + 1);
        let mut outputs = Vec::with_capacity(self.config.blocks);
        trace.push(BlockState { phi: phi0, u: u0 });
        for block in 0..self.config.blocks {
            let (next, out) = self.block_step_with_output(ops, vars, block, trace.last().unwrap())?;
            trace.push(next);
            outputs.push(out);
        }
        Ok((trace, outputs))
    }

    /// Untracked forward over a batch of fields.
    pub fn forward(&self, phi0: &[Field]) -> Result<Vec<BlockState<Tensor>>> {
        self.check_grid(phi0.first().map(Field::grid))?;
        let mut ops = Eager;
        let vars = self.bind(&mut ops);
        let u0 = self.initial_aux(phi0)?;
        self.forward_with(&mut ops, &vars, Tensor::from_fields(phi0)?, u0)
    }

    /// Final states `phi^M` for a batch of fields.
    pub fn predict(&self, phi0: &[Field]) -> Result<Vec<Field>> {
        let grid = phi0
            .first()
            .map(Field::grid)
            .ok_or_else(|| Error::Model("empty batch".into()))?;
        let trace = self.forward(phi0)?;
        let last = trace.last().expect("trace is never empty");
        let values = last.phi.data().chunks_exact(grid.len());
        Ok(values
            .map(|c| Field::from_vec_unchecked(grid, c.to_vec()))
            .collect())
    }

    pub fn check_grid(&self, grid: Option<Grid>) -> Result<()> {
        let Some(grid) = grid else {
            return Err(Error::Model("empty batch".into()));
        };
        if grid.dims() != self.config.dims {
            return Err(Error::Model(format!(
                "network is {}D but input is on a {grid}",
                self.config.dims
            )));
        }
        if let Some(n) = self.config.grid_n {
            if n != grid.n() {
                return Err(Error::Model(format!(
                    "network was built for {n} points per axis but input is on a {grid}"
                )));
            }
        }
        if self.config.kernel > grid.n() {
            return Err(Error::Model(format!(
                "kernel size {} exceeds grid size {}",
                self.config.kernel,
                grid.n()
            )));
        }
        Ok(())
    }
}

/// `U' = g G^{-1}(phi)`, `phi' = phi + 2 g (U' - U)` with a single `g`.
pub fn estable_update<O: Ops>(
    ops: &mut O,
    g: &O::V,
    phi: &O::V,
    u: &O::V,
    g_inverse: OperatorKind,
) -> Result<BlockState<O::V>> {
    let ginv_phi = ops.g_inverse(phi, g_inverse)?;
    let u_next = ops.mul(g, &ginv_phi)?;
    let du = ops.sub(&u_next, u)?;
    let step = ops.mul(g, &du)?;
    let step = ops.scale(&step, 2.0);
    let phi_next = ops.add(phi, &step)?;
    Ok(BlockState {
        phi: phi_next,
        u: Some(u_next),
    })
}

/// `U~' = U~ / (1 + dt H^2 / 2)`, `phi' = phi - dt H U~ / (1 + dt H^2 / 2)`.
pub fn auxtilde_update<O: Ops>(
    ops: &mut O,
    h: &O::V,
    phi: &O::V,
    u: &O::V,
    dt: f64,
) -> Result<BlockState<O::V>> {
    let h2 = ops.mul(h, h)?;
    let denom = ops.scale(&h2, 0.5 * dt);
    let denom = ops.add_scalar(&denom, 1.0);
    let factor = ops.recip(&denom);
    let u_next = ops.mul(u, &factor)?;
    let drift = ops.mul(h, &u_next)?;
    let drift = ops.scale(&drift, dt);
    let phi_next = ops.sub(phi, &drift)?;
    Ok(BlockState {
        phi: phi_next,
        u: Some(u_next),
    })
}
