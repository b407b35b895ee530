use std::path::Path;

use genifer::models::MatchingMode;
use genifer::trainer::{ExperimentConfig, ARMS};
use genifer::Error;

fn shipped(name: &str) -> ExperimentConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&p).unwrap()
}

#[test]
fn unknown_keys_are_rejected_at_every_level() {
    for text in [
        "unknown = 1\n",
        "[data]\nfirst_task = 5\n",
        "[model]\nwidth = 3\n",
        "[classifier]\nmomentum = 0.9\n",
        "[replay]\nmode = \"ifm\"\nratio = 0.5\n",
        "[gan]\nbudget = 10\n",
        "[adaptive]\ntarget = 0.4\n",
        "[augment.ada]\nprob = 0.1\n",
        "[augment.classifier]\nflip = 0.5\n",
        "[ablation]\nruns = 3\n",
        "[extra]\nx = 1\n",
    ] {
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))), "accepted: {text}");
    }
}

#[test]
fn invalid_values_are_config_errors() {
    for text in [
        "[replay]\neta = 1.5\n",
        "[replay]\nmode = \"pixel\"\n",
        "[classifier]\nepochs = 0\n",
        "[gan]\nema_decay = 2.0\n",
        "[data]\nsource = \"dir\"\n",
        "[adaptive]\ninterval = 0\n",
    ] {
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))), "accepted: {text}");
    }
}

#[test]
fn toml_round_trip_preserves_the_config_and_hash() {
    let cfg = shipped("toy.toml");
    let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.hash(), again.hash());
    let mut changed = cfg.clone();
    changed.gan.gamma = 0.2;
    assert_ne!(cfg.hash(), changed.hash());
    let mut ablation_only = cfg.clone();
    ablation_only.ablation.seeds = vec![9];
    assert_eq!(cfg.hash(), ablation_only.hash());
}

#[test]
fn shipped_configs_parse() {
    for name in ["toy.toml", "micro.toml"] {
        let c = shipped(name);
        c.validate().unwrap();
    }
    let toy = shipped("toy.toml");
    assert_eq!((toy.data.first_task_size, toy.data.classes_per_task), (5, 5));
    assert_eq!(toy.ablation.seeds.len(), 3);
}

#[test]
fn relative_dataset_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "[data]\nsource = \"dir\"\npath = \"data\"\n").unwrap();
    let c = ExperimentConfig::load(&p).unwrap();
    assert_eq!(c.data.path.unwrap(), dir.path().join("data"));
}

#[test]
fn arms_map_to_their_settings() {
    let base = ExperimentConfig::default();
    for arm in ARMS {
        base.with_arm(arm).unwrap();
    }
    assert_eq!(base.with_arm("dfm").unwrap().replay.mode, MatchingMode::Dfm);
    assert!(!base.with_arm("finetune").unwrap().uses_replay());
    assert!(!base.with_arm("ifm-const-lambda").unwrap().adaptive.enabled);
    assert!(!base.with_arm("ifm-no-ada").unwrap().augment.ada.enabled);
    assert!(!base.with_arm("ifm-no-ca").unwrap().augment.classifier.augment_synthetic);
    assert!(matches!(base.with_arm("gan"), Err(Error::Config(_))));
}

#[test]
fn replay_split_follows_eta() {
    let mut c = ExperimentConfig::default();
    c.classifier.batch_size = 32;
    c.replay.eta = 0.5;
    assert_eq!(c.replay_split(), (16, 16));
    c.replay.eta = 0.25;
    assert_eq!(c.replay_split(), (24, 8));
}
