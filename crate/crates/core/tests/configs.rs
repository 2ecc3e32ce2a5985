use std::path::Path;

use dualperm::pipelines::{Method, RunConfig};

fn shipped(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::from_file(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn shipped_configs_parse_and_validate() {
    let cases = [
        ("reference-25.toml", Method::Reference),
        ("reference-36.toml", Method::Reference),
        ("hybrid-25.toml", Method::Hybrid),
        ("hybrid-small.toml", Method::Hybrid),
        ("hybrid-small.toml", Method::Pinn),
        ("dataset.toml", Method::Dataset),
        ("train-surrogate.toml", Method::TrainSurrogate),
        ("sweep.toml", Method::Sweep),
    ];
    for (name, method) in cases {
        let mut c = shipped(name);
        c.method = method;
        c.validate().unwrap_or_else(|e| panic!("{name} as {}: {e}", method.name()));
    }
}

#[test]
fn full_hybrid_config_keeps_the_training_schedule() {
    let h = shipped("hybrid-25.toml").hybrid.unwrap();
    assert_eq!((h.k_max, h.k_c, h.coupling_every), (25_000, 5_000, 250));
    assert_eq!((h.k_lb, h.k_init, h.k_ub), (5e-5, 4.5e-4, 5e-4));
    assert_eq!(h.adam.l0, 1e-3);
    assert_eq!(shipped("train-surrogate.toml").surrogate.emulator.folds, 5);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(RunConfig::from_toml("[geometry]\nn_sides = 5\n").is_err());
    assert!(RunConfig::from_toml("seed = 3\n").is_err());
    assert!(RunConfig::from_toml("[geometry]\nn_side = 4\n").is_ok());
}

#[test]
fn hash_tracks_content() {
    let a = RunConfig::from_toml("[geometry]\nn_side = 4\n").unwrap();
    let b = RunConfig::from_toml("[geometry]\nn_side = 4\n").unwrap();
    let c = RunConfig::from_toml("[geometry]\nn_side = 3\n").unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
}
