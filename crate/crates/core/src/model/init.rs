use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EStableNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    XavierUniform,
    /// Weights `U(-a, a)` with `a = sqrt(6 / fan_in)`, biases
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    KaimingUniform,
    /// Kaiming-uniform with negative slope `sqrt(5)`, the stock convolution
    /// initializer of common deep-learning frameworks: weights and biases both
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    KaimingDefault,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::XavierUniform => "xavier",
            InitScheme::KaimingUniform => "kaiming",
            InitScheme::KaimingDefault => "kaiming-default",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "xavier" | "xavier-uniform" => Some(InitScheme::XavierUniform),
            "kaiming" | "kaiming-uniform" => Some(InitScheme::KaimingUniform),
            "kaiming-default" => Some(InitScheme::KaimingDefault),
            _ => None,
        }
    }

    /// Weight bound `a` for a conv layer with the given fans.
    pub fn weight_bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::XavierUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            InitScheme::KaimingUniform => (6.0 / fan_in as f64).sqrt(),
            InitScheme::KaimingDefault => 1.0 / (fan_in as f64).sqrt(),
        }
    }

    pub fn bias_bound(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::XavierUniform => 0.0,
            InitScheme::KaimingUniform | InitScheme::KaimingDefault => 1.0 / (fan_in as f64).sqrt(),
        }
    }
}

pub(super) fn initialize(net: &mut EStableNet, scheme: InitScheme, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kv = net.config.kernel_volume();
    for pair in net.params.chunks_exact_mut(2) {
        let (w, b) = pair.split_at_mut(1);
        let (c_out, c_in) = (w[0].value.shape()[0], w[0].value.shape()[1]);
        let fan_in = c_in * kv;
        let fan_out = c_out * kv;
        let a = scheme.weight_bound(fan_in, fan_out);
        let dist = Uniform::new_inclusive(-a, a);
        w[0].value.data_mut().iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        let bb = scheme.bias_bound(fan_in);
        if bb > 0.0 {
            let dist = Uniform::new_inclusive(-bb, bb);
            b[0].value.data_mut().iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        } else {
            b[0].value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
