use estable_core::dataset::{generate, Dataset};
use estable_core::diagnostics::verify_decay;
use estable_core::field::{Field, Grid};
use estable_core::model::{read_checkpoint, BlockKind, EStableNet, InitScheme, NetConfig};
use estable_core::solver::SolverConfig;
use estable_core::training::{evaluate, train, TrainConfig, TrainOutputs};

fn dataset() -> Dataset {
    let grid = Grid::new(1, 64).unwrap();
    generate(grid, &SolverConfig::new(0.05, 1.0), 48, 5, 1, |_| {}).unwrap()
}

fn small_net(kind: BlockKind) -> EStableNet {
    let mut c = NetConfig::new(kind, 1, 3, 7, 0.05, 1.0);
    c.c = 1.0;
    c.channels = vec![1, 8, 1, 8, 1];
    EStableNet::init(c, InitScheme::XavierUniform, 2).unwrap()
}

#[test]
fn trained_network_beats_its_initialization_and_keeps_decay() {
    let ds = dataset();
    let (train_set, test_set) = ds.split(0.75);
    let dir = std::env::temp_dir().join(format!("esnet-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let outputs = TrainOutputs {
        checkpoint: Some(dir.join("best.ck")),
        metrics: Some(dir.join("metrics.csv")),
    };

    let mut net = small_net(BlockKind::EStable);
    let untrained = evaluate(&net, test_set, 16).unwrap();
    let cfg = TrainConfig {
        lr0: 5e-3,
        batch_size: 8,
        epochs: 40,
        halve_every: 20,
        restart_every: 40,
        seed: 1,
        ..TrainConfig::default()
    };
    let report = train(&mut net, train_set, test_set, &cfg, &outputs, |_| {}).unwrap();
    let trained = evaluate(&net, test_set, 16).unwrap();
    assert!(trained.rel_l2 < untrained.rel_l2, "{} vs {}", trained.rel_l2, untrained.rel_l2);
    assert_eq!(trained.mse, report.best_test_mse);

    // Evaluating the saved checkpoint reproduces the logged numbers exactly.
    let restored = read_checkpoint(outputs.checkpoint.as_ref().unwrap()).unwrap();
    let again = evaluate(&restored, test_set, 16).unwrap();
    assert_eq!(again.mse.to_bits(), report.best_test_mse.to_bits());
    assert_eq!(again.rel_l2.to_bits(), report.best_test_rel_l2.to_bits());

    let phi0: Vec<Field> = ds.samples.iter().map(|s| s.phi0.clone()).collect();
    let decay = verify_decay(&restored, &phi0, 16).unwrap();
    assert!(decay.passed(), "{:?}", decay.violations.first());
    assert_eq!(decay.discrete_monotone(), phi0.len());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mismatched_grid_is_an_error() {
    let ds = dataset();
    let mut c = NetConfig::new(BlockKind::EStable, 2, 2, 5, 0.05, 1.0);
    c.c = 1.0;
    let net = EStableNet::init(c, InitScheme::XavierUniform, 0).unwrap();
    assert!(evaluate(&net, &ds.samples, 8).is_err());
    let mut wide = small_net(BlockKind::EStable);
    wide.config.kernel = 65;
    assert!(evaluate(&wide, &ds.samples, 8).is_err());
}
