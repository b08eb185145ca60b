use std::path::PathBuf;

use stone_core::config::{BranchKind, RunConfig};
use stone_core::train::TrainConfig;

fn shipped(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

#[test]
fn desk_config_matches_reference_scale() {
    let cfg = shipped("desk.json");
    let synth = cfg.data.synth.as_ref().expect("desk config generates its data");
    assert_eq!((synth.seed, synth.sensors, synth.grid, synth.days), (7, 4, [8, 16], 400));
    assert_eq!((cfg.data.k_hist, cfg.data.k_fut), (16, 16));
    assert_eq!(cfg.model.q, 16);
    assert_eq!(cfg.model.branch, BranchKind::Gru);
    assert_eq!(cfg.train.max_epochs, 200);
}

#[test]
fn full_size_config_uses_default_regimen() {
    let cfg = shipped("paper.json");
    assert_eq!((cfg.data.k_hist, cfg.data.k_fut), (180, 180));
    assert_eq!(cfg.data.split, [0.45, 0.10, 0.45]);
    assert_eq!((cfg.model.q, cfg.model.depth, cfg.model.heads), (128, 3, 8));
    assert_eq!((cfg.model.trunk_hidden, cfg.model.trunk_layers), (128, 2));
    assert_eq!(cfg.train, TrainConfig::default());
    let t = &cfg.train;
    assert_eq!((t.lr0, t.plateau_factor, t.plateau_threshold, t.lr_min), (1e-3, 0.5, 1e-4, 1e-7));
    assert_eq!((t.plateau_patience, t.early_stop_patience, t.max_epochs), (5, 10, 500));
}

#[test]
fn every_branch_resolves_for_both_configs() {
    for name in ["desk.json", "paper.json"] {
        let cfg = shipped(name);
        for kind in BranchKind::ALL {
            let sensors = if name == "paper.json" { 12 } else { 4 };
            let m = cfg.model.resolve(kind, sensors, cfg.data.k_hist, cfg.data.k_fut);
            m.validate().unwrap();
            assert_eq!(m.trunk.out_width(), m.trunk.q * m.trunk.p * cfg.data.k_fut);
        }
    }
}
