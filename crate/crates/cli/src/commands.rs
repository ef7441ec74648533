use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use anyhow::anyhow;
use estable_core::autodiff::Tensor;
use estable_core::dataset::{generate as generate_dataset, sample_ic, sample_seed, Dataset, Sample};
use estable_core::diagnostics::{export_block_fields, export_trace, original_energy, verify_decay, DecayReport};
use estable_core::field::Field;
use estable_core::model::{read_checkpoint, BlockKind, EStableNet};
use estable_core::training::{evaluate, train as train_net, EvalMetrics, TrainOutputs, TrainReport};
use estable_core::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INVARIANT: u8 = 3;

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Invariant(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Invariant(_) => EXIT_INVARIANT,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Invariant(e) => e,
        }
    }
}

/// Sorts core errors into usage errors (bad settings) and data errors
/// (files, grids, numerics).
fn core(context: &str) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| {
        let usage = matches!(e, Error::SolverConfig(_) | Error::TrainConfig(_) | Error::InvalidGrid(_));
        let err = anyhow::Error::new(e).context(context.to_string());
        if usage {
            Failure::Usage(err)
        } else {
            Failure::Data(err)
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(anyhow::Error::new(e).context(format!("cannot write {}", path.display())))
}

fn usage(msg: String) -> Failure {
    Failure::Usage(anyhow!(msg))
}

fn prepare_output(cfg: &RunConfig, command: &str) -> Result<(), Failure> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_failure(dir))?;
    let path = dir.join(format!("{command}.resolved.conf"));
    let text = format!("# resolved configuration for `esnet {command}`\n{}", cfg.render());
    fs::write(&path, text).map_err(io_failure(&path))
}

fn write_summary(path: &Path, pairs: &[(&str, String)]) -> Result<(), Failure> {
    let mut text = String::new();
    for (k, v) in pairs {
        let _ = writeln!(text, "{k} = {v}");
    }
    fs::write(path, text).map_err(io_failure(path))
}

pub fn generate(cfg: &RunConfig, command: &str, export_csv: Option<&Path>) -> Result<(), Failure> {
    if cfg.count == 0 {
        return Err(usage("count must be at least 1".into()));
    }
    let grid = cfg.grid().map_err(Failure::Usage)?;
    let solver = cfg.solver_config();
    solver.validate().map_err(core("invalid solver settings"))?;
    prepare_output(cfg, command)?;
    let path = cfg.dataset_path();

    let start = Instant::now();
    let done = AtomicUsize::new(0);
    let count = cfg.count;
    let ds = generate_dataset(grid, &solver, count, cfg.seed, cfg.workers(), |i| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!("sample {k}/{count} (index {i}) {:.1}s", start.elapsed().as_secs_f64());
    })
    .map_err(core("data generation failed"))?;
    ds.write(&path).map_err(core("cannot write dataset"))?;
    if let Some(csv) = export_csv {
        ds.export_csv(csv).map_err(core("cannot export dataset"))?;
    }
    println!(
        "wrote {} samples on a {} (epsilon {}, T {}) to {} in {:.2}s",
        ds.len(),
        grid,
        cfg.epsilon,
        cfg.t_end,
        path.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    let path = cfg.dataset_path();
    if !path.exists() {
        return Err(Failure::Data(anyhow!(
            "dataset {} not found (run `esnet generate` first or pass --dataset)",
            path.display()
        )));
    }
    Dataset::read(&path).map_err(core("cannot read dataset"))
}

fn split(cfg: &RunConfig, ds: &Dataset) -> Result<(usize, usize), Failure> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(usage(format!("train_fraction must lie in (0, 1), got {}", cfg.train_fraction)));
    }
    let (train, test) = ds.split(cfg.train_fraction);
    if train.is_empty() || test.is_empty() {
        return Err(Failure::Data(anyhow!(
            "dataset of {} samples leaves an empty train or test split",
            ds.len()
        )));
    }
    Ok((train.len(), test.len()))
}

fn new_net(cfg: &RunConfig, ds: &Dataset, kind: BlockKind) -> Result<EStableNet, Failure> {
    let mut local = cfg.clone();
    local.dims = ds.grid.dims();
    local.n = ds.grid.n();
    let net_cfg = local.net_config(kind, ds.epsilon, ds.t_end);
    let net = EStableNet::init(net_cfg, cfg.init, cfg.init_seed).map_err(|e| Failure::Usage(anyhow!(e)))?;
    net.check_grid(Some(ds.grid)).map_err(core("network does not fit the dataset"))?;
    Ok(net)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("checkpoint.ck"))
}

struct Trained {
    net: EStableNet,
    report: TrainReport,
    test: EvalMetrics,
}

fn fit(cfg: &RunConfig, ds: &Dataset, kind: BlockKind, dir: &Path, checkpoint: &Path) -> Result<Trained, Failure> {
    split(cfg, ds)?;
    let (train_set, test_set) = ds.split(cfg.train_fraction);
    let mut net = new_net(cfg, ds, kind)?;
    let tcfg = cfg.train_config();
    tcfg.validate().map_err(core("invalid training settings"))?;
    fs::create_dir_all(dir).map_err(io_failure(dir))?;
    let outputs = TrainOutputs {
        checkpoint: Some(checkpoint.to_path_buf()),
        metrics: Some(dir.join("metrics.csv")),
    };
    eprintln!(
        "training {kind} network: {} parameters, {} train / {} test samples, {} epochs",
        net.param_count(),
        train_set.len(),
        test_set.len(),
        tcfg.epochs
    );
    let start = Instant::now();
    let epochs = tcfg.epochs;
    let report = train_net(&mut net, train_set, test_set, &tcfg, &outputs, |m| {
        let test = m
            .test
            .map(|t| format!(" test_mse {:.4e} rel_l2 {:.4e}", t.mse, t.rel_l2))
            .unwrap_or_default();
        eprintln!(
            "[{kind}] epoch {}/{epochs} lr {:.3e} train_mse {:.4e}{test} ({:.0}s)",
            m.epoch + 1,
            m.lr,
            m.train_mse,
            start.elapsed().as_secs_f64()
        );
    })
    .map_err(core("training failed"))?;
    let test = evaluate(&net, test_set, cfg.batch_size.max(32)).map_err(core("evaluation failed"))?;
    if test.skipped > 0 {
        eprintln!("warning: {} test samples with zero-norm truth were left out of rel_l2", test.skipped);
    }
    write_summary(
        &dir.join("summary.txt"),
        &[
            ("kind", kind.name().to_string()),
            ("params", net.param_count().to_string()),
            ("epochs", epochs.to_string()),
            ("best_epoch", report.best_epoch.map(|e| (e + 1).to_string()).unwrap_or_default()),
            ("test_mse", format!("{:e}", test.mse)),
            ("test_rel_l2", format!("{:e}", test.rel_l2)),
            ("checkpoint", checkpoint.display().to_string()),
            ("seconds", format!("{:.1}", start.elapsed().as_secs_f64())),
        ],
    )?;
    Ok(Trained { net, report, test })
}

pub fn train(cfg: &RunConfig, command: &str) -> Result<(), Failure> {
    let ds = load_dataset(cfg)?;
    prepare_output(cfg, command)?;
    let ck = checkpoint_path(cfg);
    let t = fit(cfg, &ds, cfg.kind, &cfg.output_dir, &ck)?;
    println!(
        "{}: test_mse {:.6e} test_rel_l2 {:.6e} (best epoch {}), checkpoint {}",
        cfg.kind,
        t.test.mse,
        t.test.rel_l2,
        t.report.best_epoch.map(|e| (e + 1).to_string()).unwrap_or_else(|| "-".into()),
        ck.display()
    );
    Ok(())
}

fn load_net(path: &Path) -> Result<EStableNet, Failure> {
    if !path.exists() {
        return Err(Failure::Data(anyhow!("checkpoint {} not found", path.display())));
    }
    read_checkpoint(path).map_err(core("cannot read checkpoint"))
}

pub fn eval(cfg: &RunConfig, export_csv: Option<&Path>, export_fields: Option<&Path>) -> Result<(), Failure> {
    let ds = load_dataset(cfg)?;
    split(cfg, &ds)?;
    let (_, test_set) = ds.split(cfg.train_fraction);
    let net = load_net(&checkpoint_path(cfg))?;
    net.check_grid(Some(ds.grid)).map_err(core("checkpoint does not match the dataset"))?;
    prepare_output(cfg, "eval")?;
    let m = evaluate(&net, test_set, cfg.batch_size.max(32)).map_err(core("evaluation failed"))?;
    if m.skipped > 0 {
        eprintln!("warning: {} test samples with zero-norm truth were left out of rel_l2", m.skipped);
    }
    write_summary(
        &cfg.output_dir.join("eval.txt"),
        &[
            ("kind", net.config.kind.name().to_string()),
            ("samples", test_set.len().to_string()),
            ("test_mse", format!("{:e}", m.mse)),
            ("test_rel_l2", format!("{:e}", m.rel_l2)),
        ],
    )?;
    if let Some(path) = export_csv {
        export_per_sample(&net, test_set, path)?;
    }
    if let Some(path) = export_fields {
        let chosen = &test_set[..cfg.samples.min(test_set.len())];
        export_predictions(&net, chosen, path)?;
    }
    println!(
        "{} on {} test samples: test_mse {:.6e} test_rel_l2 {:.6e}",
        net.config.kind,
        test_set.len(),
        m.mse,
        m.rel_l2
    );
    Ok(())
}

fn predictions(net: &EStableNet, samples: &[Sample]) -> Result<Vec<Field>, Failure> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let phi0: Vec<Field> = chunk.iter().map(|s| s.phi0.clone()).collect();
        out.extend(net.predict(&phi0).map_err(core("forward pass failed"))?);
    }
    Ok(out)
}

fn export_per_sample(net: &EStableNet, samples: &[Sample], path: &Path) -> Result<(), Failure> {
    let preds = predictions(net, samples)?;
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_failure(path))?);
    let mut body = String::from("sample,seed,mse,rel_l2\n");
    for (i, (p, s)) in preds.iter().zip(samples).enumerate() {
        let d = p.sub(&s.phi_t).map_err(core("shape mismatch"))?;
        let mse = d.values().iter().map(|v| v * v).sum::<f64>() / d.values().len() as f64;
        let truth = s.phi_t.norm();
        let rel = if truth > 0.0 { format!("{:e}", d.norm() / truth) } else { String::new() };
        let _ = writeln!(body, "{i},{},{mse:e},{rel}", s.seed);
    }
    w.write_all(body.as_bytes()).map_err(io_failure(path))?;
    w.flush().map_err(io_failure(path))
}

fn export_predictions(net: &EStableNet, samples: &[Sample], path: &Path) -> Result<(), Failure> {
    let preds = predictions(net, samples)?;
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_failure(path))?);
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let grid = first.phi0.grid();
    let n = grid.n();
    let header = if grid.dims() == 1 {
        "sample,index,x,phi0,truth,pred"
    } else {
        "sample,index,x,y,phi0,truth,pred"
    };
    let mut body = format!("{header}\n");
    for (s, (sample, pred)) in samples.iter().zip(&preds).enumerate() {
        for idx in 0..grid.len() {
            let (a, b, c) = (sample.phi0.values()[idx], sample.phi_t.values()[idx], pred.values()[idx]);
            if grid.dims() == 1 {
                let _ = writeln!(body, "{s},{idx},{:?},{a:?},{b:?},{c:?}", grid.coord(idx));
            } else {
                let (x, y) = (grid.coord(idx % n), grid.coord(idx / n));
                let _ = writeln!(body, "{s},{idx},{x:?},{y:?},{a:?},{b:?},{c:?}");
            }
        }
    }
    w.write_all(body.as_bytes()).map_err(io_failure(path))?;
    w.flush().map_err(io_failure(path))
}

/// `count` inputs: a seeded random subset of the dataset when one is
/// available, otherwise fresh random initial conditions on the config grid.
fn diagnose_inputs(cfg: &RunConfig, ds: Option<&Dataset>, count: usize) -> Result<Vec<Field>, Failure> {
    match ds {
        Some(ds) => {
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            Ok(idx.iter().take(count).map(|&i| ds.samples[i].phi0.clone()).collect())
        }
        None => {
            let grid = cfg.grid().map_err(Failure::Usage)?;
            Ok((0..count as u64).map(|i| sample_ic(grid, sample_seed(cfg.seed, i))).collect())
        }
    }
}

fn optional_dataset(cfg: &RunConfig) -> Result<Option<Dataset>, Failure> {
    let explicit = cfg.dataset.is_some();
    if explicit || cfg.dataset_path().exists() {
        load_dataset(cfg).map(Some)
    } else {
        Ok(None)
    }
}

fn print_decay(report: &DecayReport) {
    let n = report.samples();
    println!("samples: {n}");
    println!("discrete energy monotone: {}/{n}", report.discrete_monotone());
    println!(
        "original energy monotone: {}/{n} ({:.1}%)",
        report.original_monotone,
        100.0 * report.original_monotone_fraction()
    );
    println!("max identity residual: {:e}", report.trace.max_identity_residual());
}

pub fn diagnose(cfg: &RunConfig, random_weights: bool, export_fields: Option<&Path>) -> Result<(), Failure> {
    if cfg.samples == 0 {
        return Err(usage("samples must be at least 1".into()));
    }
    let ds = optional_dataset(cfg)?;
    let net = if random_weights {
        let (eps, t_end) = ds.as_ref().map(|d| (d.epsilon, d.t_end)).unwrap_or((cfg.epsilon, cfg.t_end));
        let mut local = cfg.clone();
        if let Some(d) = &ds {
            local.dims = d.grid.dims();
            local.n = d.grid.n();
        }
        EStableNet::init(local.net_config(cfg.kind, eps, t_end), cfg.init, cfg.init_seed)
            .map_err(|e| Failure::Usage(anyhow!(e)))?
    } else {
        load_net(&checkpoint_path(cfg))?
    };
    if net.config.kind == BlockKind::Plain {
        return Err(usage(
            "diagnose needs an estable-g or aux-tilde network: a plain network has no auxiliary variable U, \
             so its discrete energy is undefined"
                .into(),
        ));
    }
    let inputs = diagnose_inputs(cfg, ds.as_ref(), cfg.samples)?;
    prepare_output(cfg, "diagnose")?;
    let report = verify_decay(&net, &inputs, 64).map_err(core("energy check failed"))?;
    let trace_path = cfg.output_dir.join("energy_trace.csv");
    export_trace(&report.trace, &trace_path).map_err(core("cannot write energy trace"))?;
    if let Some(path) = export_fields {
        let few = &inputs[..inputs.len().min(8)];
        export_block_fields(&net, few, path).map_err(core("cannot write block fields"))?;
    }
    write_summary(
        &cfg.output_dir.join("diagnose.txt"),
        &[
            ("kind", net.config.kind.name().to_string()),
            ("params", net.param_count().to_string()),
            ("samples", report.samples().to_string()),
            ("discrete_monotone", report.discrete_monotone().to_string()),
            ("original_monotone", report.original_monotone.to_string()),
            ("max_identity_residual", format!("{:e}", report.trace.max_identity_residual())),
            ("violations", report.violations.len().to_string()),
        ],
    )?;
    println!("network: {} ({} parameters)", net.config.kind, net.param_count());
    print_decay(&report);
    println!("trace written to {}", trace_path.display());
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        for v in report.violations.iter().take(10) {
            eprintln!("violation: {v}");
        }
        Err(Failure::Invariant(anyhow!(
            "{} energy-decay violations; first: {}",
            report.violations.len(),
            report.violations[0]
        )))
    }
}

/// Mean original energy after each block over `inputs`.
fn mean_block_energy(net: &EStableNet, inputs: &[Field]) -> Result<Vec<f64>, Failure> {
    let grid = inputs[0].grid();
    let mut sums = vec![0.0; net.config.blocks + 1];
    for chunk in inputs.chunks(64) {
        let trace = net.forward(chunk).map_err(core("forward pass failed"))?;
        for (b, st) in trace.iter().enumerate() {
            for f in fields_of(&st.phi, grid) {
                sums[b] += original_energy(&f, net.config.epsilon);
            }
        }
    }
    Ok(sums.into_iter().map(|s| s / inputs.len() as f64).collect())
}

fn fields_of(t: &Tensor, grid: estable_core::field::Grid) -> Vec<Field> {
    t.to_fields(grid).expect("network output matches its grid")
}

pub fn compare(cfg: &RunConfig, reuse_estable: Option<&Path>) -> Result<(), Failure> {
    let ds = load_dataset(cfg)?;
    split(cfg, &ds)?;
    prepare_output(cfg, "compare")?;
    let (_, test_set) = ds.split(cfg.train_fraction);

    let estable_dir = cfg.output_dir.join("estable");
    let (estable, estable_test) = match reuse_estable {
        Some(path) => {
            let net = load_net(path)?;
            if net.config.kind == BlockKind::Plain {
                return Err(usage(format!("{} holds a plain network, not an estable one", path.display())));
            }
            net.check_grid(Some(ds.grid)).map_err(core("checkpoint does not match the dataset"))?;
            let m = evaluate(&net, test_set, cfg.batch_size.max(32)).map_err(core("evaluation failed"))?;
            eprintln!("reusing {} network from {}", net.config.kind, path.display());
            (net, m)
        }
        None => {
            let kind = if cfg.kind == BlockKind::Plain { BlockKind::EStable } else { cfg.kind };
            let t = fit(cfg, &ds, kind, &estable_dir, &estable_dir.join("checkpoint.ck"))?;
            (t.net, t.test)
        }
    };
    let plain_dir = cfg.output_dir.join("plain");
    let plain = fit(cfg, &ds, BlockKind::Plain, &plain_dir, &plain_dir.join("checkpoint.ck"))?;

    let ratio = plain.test.rel_l2 / estable_test.rel_l2;
    write_summary(
        &cfg.output_dir.join("compare.txt"),
        &[
            ("estable_kind", estable.config.kind.name().to_string()),
            ("estable_params", estable.param_count().to_string()),
            ("plain_params", plain.net.param_count().to_string()),
            ("estable_test_mse", format!("{:e}", estable_test.mse)),
            ("estable_test_rel_l2", format!("{:e}", estable_test.rel_l2)),
            ("plain_test_mse", format!("{:e}", plain.test.mse)),
            ("plain_test_rel_l2", format!("{:e}", plain.test.rel_l2)),
            ("rel_l2_ratio", format!("{ratio:e}")),
        ],
    )?;

    let inputs: Vec<Field> = test_set
        .iter()
        .take(cfg.samples.max(1))
        .map(|s| s.phi0.clone())
        .collect();
    let e_est = mean_block_energy(&estable, &inputs)?;
    let e_plain = mean_block_energy(&plain.net, &inputs)?;
    let energy_path = cfg.output_dir.join("compare_energy.csv");
    let mut body = String::from("block,estable_original_energy,plain_original_energy\n");
    for b in 0..e_est.len().max(e_plain.len()) {
        let cell = |v: &[f64]| v.get(b).map(|x| format!("{x:.16e}")).unwrap_or_default();
        let _ = writeln!(body, "{b},{},{}", cell(&e_est), cell(&e_plain));
    }
    fs::write(&energy_path, body).map_err(io_failure(&energy_path))?;

    println!("{:<10} {:>8} {:>14} {:>14}", "network", "params", "test_mse", "test_rel_l2");
    println!(
        "{:<10} {:>8} {:>14.6e} {:>14.6e}",
        estable.config.kind.name(),
        estable.param_count(),
        estable_test.mse,
        estable_test.rel_l2
    );
    println!(
        "{:<10} {:>8} {:>14.6e} {:>14.6e}",
        "plain",
        plain.net.param_count(),
        plain.test.mse,
        plain.test.rel_l2
    );
    println!("plain / estable relative L2: {ratio:.3}");
    Ok(())
}
