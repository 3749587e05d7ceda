use std::path::PathBuf;

use sacl_core::config::{DatasetKind, ModelConfig};
use sacl_pipeline::{PipelineError, RunConfig};

fn preset(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::load(&path).unwrap()
}

#[test]
fn shipped_presets_match_the_built_in_ones() {
    assert_eq!(preset("toy.toml"), RunConfig::toy());
    let bp4d = preset("bp4d.toml");
    assert_eq!(bp4d.model.dataset, DatasetKind::Bp4d);
    assert_eq!(bp4d.train.lr_max, 1e-3);
    assert_eq!((bp4d.train.epochs, bp4d.train.batch_size), (12, 16));
    let disfa = preset("disfa.toml");
    assert_eq!(disfa.model.au_list().unwrap().len(), 8);
    assert_eq!(
        ModelConfig { n_roi: None, n_au: None, ..disfa.model },
        ModelConfig::disfa()
    );
    let overfit = preset("overfit.toml");
    assert!(!overfit.data.augment);
    assert_eq!(overfit.data.synth_samples, 32);
}

#[test]
fn toml_round_trip() {
    let cfg = RunConfig::toy();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let err = RunConfig::from_toml("d0 = 8\nlearning_rate = 0.1\n").unwrap_err();
    assert!(matches!(&err, PipelineError::Config(m) if m.contains("learning_rate")), "{err}");
    assert!(RunConfig::from_toml("K = 30\n").is_err());
    assert!(RunConfig::from_toml("lr_max = -1.0\n").is_err());
    assert!(RunConfig::from_toml("flip_pairs = [[1, 2], [2, 3]]\n").is_err());
    assert!(RunConfig::from_toml("aligned_size = 100\n").is_err());
}
