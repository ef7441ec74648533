//! Run configuration: built-in defaults, then a preset, then a `key=value`
//! file, then command-line flags. Later sources win.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use estable_core::field::{Grid, OperatorKind};
use estable_core::model::{BlockKind, InitScheme, NetConfig};
use estable_core::solver::SolverConfig;
use estable_core::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // grid and PDE
    pub dims: usize,
    pub n: usize,
    pub epsilon: f64,
    pub t_end: f64,
    // data
    pub count: usize,
    pub seed: u64,
    pub train_fraction: f64,
    // solver
    pub rtol: f64,
    pub atol: f64,
    pub dealias: bool,
    // model
    pub kind: BlockKind,
    pub blocks: usize,
    pub kernel: usize,
    pub channels: Vec<usize>,
    pub c: f64,
    pub g_inverse: OperatorKind,
    pub init: InitScheme,
    pub init_seed: u64,
    // training
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub halve_every: usize,
    pub restart_every: usize,
    pub beta: f64,
    pub eval_every: usize,
    pub train_seed: u64,
    // execution
    pub workers: usize,
    pub deterministic: bool,
    pub samples: usize,
    // paths
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dims: 1,
            n: 256,
            epsilon: 0.01,
            t_end: 5.0,
            count: 1120,
            seed: 0,
            train_fraction: 0.7,
            rtol: 1e-3,
            atol: 1e-6,
            dealias: true,
            kind: BlockKind::EStable,
            blocks: 4,
            kernel: 21,
            channels: vec![1, 16, 1, 16, 1],
            c: 0.0,
            g_inverse: OperatorKind::Identity,
            init: InitScheme::XavierUniform,
            init_seed: 0,
            lr0: 1e-3,
            weight_decay: 1e-6,
            batch_size: 16,
            epochs: 1000,
            halve_every: 50,
            restart_every: 200,
            beta: 0.0,
            eval_every: 1,
            train_seed: 0,
            workers: 1,
            deterministic: false,
            samples: 256,
            dataset: None,
            checkpoint: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in the order used when echoing a configuration.
pub const KEYS: &[&str] = &[
    "dims",
    "n",
    "epsilon",
    "t_end",
    "count",
    "seed",
    "train_fraction",
    "rtol",
    "atol",
    "dealias",
    "kind",
    "blocks",
    "kernel",
    "channels",
    "c",
    "g_inverse",
    "init",
    "init_seed",
    "lr0",
    "weight_decay",
    "batch_size",
    "epochs",
    "halve_every",
    "restart_every",
    "beta",
    "eval_every",
    "train_seed",
    "workers",
    "deterministic",
    "samples",
    "dataset",
    "checkpoint",
    "output_dir",
];

pub const PRESETS: &[&str] = &["ac1d", "ac2d"];

fn preset_pairs(name: &str) -> Result<&'static [(&'static str, &'static str)]> {
    Ok(match name {
        "ac1d" => &[
            ("dims", "1"),
            ("n", "256"),
            ("epsilon", "0.01"),
            ("t_end", "5"),
            ("count", "1120"),
            ("train_fraction", "0.7"),
            ("blocks", "4"),
            ("kernel", "21"),
            ("channels", "1,16,1,16,1"),
            ("init", "xavier"),
            ("lr0", "1e-3"),
            ("weight_decay", "1e-6"),
            ("batch_size", "16"),
            ("epochs", "1000"),
            ("halve_every", "50"),
            ("restart_every", "200"),
        ],
        "ac2d" => &[
            ("dims", "2"),
            ("n", "128"),
            ("epsilon", "0.02"),
            ("t_end", "5"),
            ("count", "2528"),
            ("train_fraction", "0.8101265822784810"),
            ("blocks", "5"),
            ("kernel", "13"),
            ("channels", "1,16,1,16,1"),
            ("init", "kaiming-default"),
            ("lr0", "1e-3"),
            ("weight_decay", "1e-7"),
            ("batch_size", "32"),
            ("epochs", "4000"),
            ("halve_every", "100"),
            ("restart_every", "800"),
        ],
        other => bail!("unknown preset '{other}' (expected one of {})", PRESETS.join(", ")),
    })
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| anyhow!("invalid value '{value}' for '{key}'"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("invalid value '{value}' for '{key}' (expected true or false)"),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dims" => self.dims = parse_num(key, value)?,
            "n" => self.n = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "t_end" => self.t_end = parse_num(key, value)?,
            "count" => self.count = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "train_fraction" => self.train_fraction = parse_num(key, value)?,
            "rtol" => self.rtol = parse_num(key, value)?,
            "atol" => self.atol = parse_num(key, value)?,
            "dealias" => self.dealias = parse_bool(key, value)?,
            "kind" => {
                self.kind = BlockKind::from_name(value.trim())
                    .ok_or_else(|| anyhow!("unknown kind '{value}' (expected estable-g, aux-tilde or plain)"))?
            }
            "blocks" => self.blocks = parse_num(key, value)?,
            "kernel" => self.kernel = parse_num(key, value)?,
            "channels" => {
                self.channels = value
                    .split(',')
                    .map(|c| parse_num(key, c))
                    .collect::<Result<_>>()?
            }
            "c" => self.c = parse_num(key, value)?,
            "g_inverse" => {
                self.g_inverse = OperatorKind::from_name(value.trim()).ok_or_else(|| {
                    anyhow!("unknown g_inverse '{value}' (expected identity or inverse-neg-laplacian)")
                })?
            }
            "init" => {
                self.init = InitScheme::from_name(value.trim())
                    .ok_or_else(|| anyhow!("unknown init '{value}' (expected xavier, kaiming or kaiming-default)"))?
            }
            "init_seed" => self.init_seed = parse_num(key, value)?,
            "lr0" => self.lr0 = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "halve_every" => self.halve_every = parse_num(key, value)?,
            "restart_every" => self.restart_every = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "train_seed" => self.train_seed = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "samples" => self.samples = parse_num(key, value)?,
            "dataset" => self.dataset = optional_path(value),
            "checkpoint" => self.checkpoint = optional_path(value),
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            other => bail!("unknown configuration key '{other}'"),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "dims" => self.dims.to_string(),
            "n" => self.n.to_string(),
            "epsilon" => format!("{:?}", self.epsilon),
            "t_end" => format!("{:?}", self.t_end),
            "count" => self.count.to_string(),
            "seed" => self.seed.to_string(),
            "train_fraction" => format!("{:?}", self.train_fraction),
            "rtol" => format!("{:?}", self.rtol),
            "atol" => format!("{:?}", self.atol),
            "dealias" => self.dealias.to_string(),
            "kind" => self.kind.name().to_string(),
            "blocks" => self.blocks.to_string(),
            "kernel" => self.kernel.to_string(),
            "channels" => self
                .channels
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "c" => format!("{:?}", self.c),
            "g_inverse" => self.g_inverse.name().to_string(),
            "init" => self.init.name().to_string(),
            "init_seed" => self.init_seed.to_string(),
            "lr0" => format!("{:?}", self.lr0),
            "weight_decay" => format!("{:?}", self.weight_decay),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "halve_every" => self.halve_every.to_string(),
            "restart_every" => self.restart_every.to_string(),
            "beta" => format!("{:?}", self.beta),
            "eval_every" => self.eval_every.to_string(),
            "train_seed" => self.train_seed.to_string(),
            "workers" => self.workers.to_string(),
            "deterministic" => self.deterministic.to_string(),
            "samples" => self.samples.to_string(),
            "dataset" => path(&self.dataset),
            "checkpoint" => path(&self.checkpoint),
            "output_dir" => self.output_dir.display().to_string(),
            other => unreachable!("unlisted key {other}"),
        }
    }

    /// `key = value` lines for every key; parses back to the same config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    pub fn workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers.max(1)
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.n).map_err(|e| anyhow!("{e}"))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.output_dir.join("dataset.bin"))
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.epsilon, self.t_end);
        cfg.rtol = self.rtol;
        cfg.atol = self.atol;
        cfg.dealias = self.dealias;
        cfg
    }

    /// Network settings; `epsilon` and `t_end` come from the caller (usually
    /// the dataset header).
    pub fn net_config(&self, kind: BlockKind, epsilon: f64, t_end: f64) -> NetConfig {
        let mut cfg = NetConfig::new(kind, self.dims, self.blocks, self.kernel, epsilon, t_end);
        cfg.channels = self.channels.clone();
        cfg.c = self.c;
        cfg.g_inverse = self.g_inverse;
        cfg.grid_n = Some(self.n);
        cfg
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            halve_every: self.halve_every,
            restart_every: self.restart_every,
            beta: self.beta,
            seed: self.train_seed,
            eval_every: self.eval_every,
            workers: self.workers(),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key = value", origin.display(), i + 1))?;
        let key = k.trim();
        if !KEYS.contains(&key) && key != "preset" {
            bail!("{}:{}: unknown configuration key '{key}'", origin.display(), i + 1);
        }
        pairs.push((key.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds the final configuration. `flags` are `(key, value)` pairs from the
/// command line; `env_seed` is the `ESNET_SEED` fallback used when no source
/// sets `seed`.
pub fn resolve(
    preset: Option<&str>,
    file: Option<&Path>,
    flags: &[(String, String)],
    env_seed: Option<&str>,
) -> Result<RunConfig> {
    let file_pairs = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            parse_pairs(&text, path)?
        }
        None => Vec::new(),
    };
    let file_preset = file_pairs.iter().rev().find(|(k, _)| k == "preset").map(|(_, v)| v.as_str());

    let mut cfg = RunConfig::default();
    if let Some(name) = preset.or(file_preset) {
        for (k, v) in preset_pairs(name)? {
            cfg.set(k, v)?;
        }
    }
    let has_seed = file_pairs.iter().chain(flags).any(|(k, _)| k == "seed");
    if !has_seed {
        if let Some(s) = env_seed {
            cfg.set("seed", s).context("ESNET_SEED")?;
        }
    }
    let mut explicit = std::collections::HashSet::new();
    for (k, v) in file_pairs.iter().filter(|(k, _)| k != "preset").chain(flags) {
        cfg.set(k, v)?;
        explicit.insert(k.as_str());
    }
    // Derived seeds follow `seed` unless set on their own.
    if !explicit.contains("init_seed") {
        cfg.init_seed = cfg.seed;
    }
    if !explicit.contains("train_seed") {
        cfg.train_seed = cfg.seed;
    }
    Ok(cfg)
}
