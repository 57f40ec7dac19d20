use std::path::PathBuf;

use proptest::prelude::*;
use slfv_core::harness::{run_experiment, run_experiment_with_workers, ExperimentConfig, EXPERIMENTS};
use slfv_core::Accumulator;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small(name: &str, replicas: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&configs_dir().join(name)).unwrap();
    cfg.replicas = replicas;
    cfg.out = None;
    cfg
}

#[test]
fn shipped_configs_parse() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(EXPERIMENTS.contains(&cfg.experiment.as_str()));
            seen += 1;
        }
    }
    assert!(seen >= EXPERIMENTS.len());
}

#[test]
fn same_config_gives_identical_csv() {
    let mut cfg = small("mass.toml", 40);
    cfg.grid.as_mut().unwrap().h = 0.25;
    let a = run_experiment(&cfg).unwrap().csv();
    let b = run_experiment(&cfg).unwrap().csv();
    assert_eq!(a, b);
    cfg.seed += 1;
    assert_ne!(a, run_experiment(&cfg).unwrap().csv());
}

#[test]
fn worker_count_does_not_change_aggregates() {
    let mut gamma = small("gamma_e_d2.toml", 300);
    gamma.options.times = vec![10.0, 100.0];
    let mut coupling = small("coupling.toml", 300);
    coupling.options.ks = vec![10.0, 30.0];
    for cfg in [gamma, coupling] {
        let one = run_experiment_with_workers(&cfg, 1).unwrap();
        let many = run_experiment_with_workers(&cfg, 8).unwrap();
        assert_eq!(one.rows, many.rows, "{}", cfg.experiment);
    }
}

proptest! {
    #[test]
    fn merged_accumulators_match_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut.min(xs.len());
        let mut whole = Accumulator::new();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut left, mut right) = (Accumulator::new(), Accumulator::new());
        xs[..cut].iter().for_each(|&x| left.push(x));
        xs[cut..].iter().for_each(|&x| right.push(x));
        left.merge(&right);
        prop_assert_eq!(left.count(), whole.count());
        prop_assert!((left.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
        prop_assert!((left.variance() - whole.variance()).abs() <= 1e-7 * (1.0 + whole.variance()));
    }
}
