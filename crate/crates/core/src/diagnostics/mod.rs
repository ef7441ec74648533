//! Energy functionals, per-block energy traces and the decay-identity check.

mod energy;
mod trace;

pub use energy::{discrete_energy, discrete_energy_new, discrete_energy_with, g_norm_sq, original_energy};
pub use trace::{
    export_block_fields, export_trace, read_trace, verify_decay, BlockRecord, DecayReport, EnergyTrace, Violation,
    ViolationKind, IDENTITY_TOLERANCE,
};
