use std::path::Path;

use adaswitch::app::{self, ParamTable};
use adaswitch::config::RunConfig;
use adaswitch::dataio::{read_image, write_image};
use adaswitch::models::checkpoint::Checkpoint;
use adaswitch::Tensor;

fn tiny(root: &Path, run: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("image_size", "16"),
        ("patch_size", "16"),
        ("wavelet_levels", "3"),
        ("train_pairs", "4"),
        ("eval_pairs", "2"),
        ("base_channels", "2"),
        ("disc_channels", "2"),
        ("steps_per_epoch", "3"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.data_dir = root.join("data").to_string_lossy().into_owned();
    cfg.out_dir = root.join(run).to_string_lossy().into_owned();
    cfg
}

fn weights(path: &Path) -> Vec<(String, Tensor)> {
    Checkpoint::load(path).unwrap().tensors
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let straight = RunConfig { epochs: 2, ..tiny(dir.path(), "straight") };
    app::cmd_synth(&straight).unwrap();
    app::cmd_train(&straight, false, |_| {}).unwrap();

    let split = RunConfig { epochs: 1, ..tiny(dir.path(), "split") };
    app::cmd_train(&split, false, |_| {}).unwrap();
    let resumed = RunConfig { epochs: 2, ..split.clone() };
    let state = app::cmd_train(&resumed, true, |_| {}).unwrap();
    assert_eq!(state.epoch, 2);

    let a = weights(&app::latest_checkpoint(&straight).unwrap());
    let b = weights(&app::latest_checkpoint(&split).unwrap());
    assert_eq!(a, b);
}

#[test]
fn denoise_writes_an_image_of_the_input_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { epochs: 1, ..tiny(dir.path(), "run") };
    app::cmd_synth(&cfg).unwrap();
    app::cmd_train(&cfg, false, |_| {}).unwrap();

    let input = Tensor::from_fn([16, 16], |i| 40.0 + (i % 7) as f64 * 10.0);
    let path = dir.path().join("in.img");
    write_image(&path, &input).unwrap();
    cfg.checkpoint = app::latest_checkpoint(&cfg).unwrap().to_string_lossy().into_owned();
    cfg.input = path.to_string_lossy().into_owned();
    cfg.output = dir.path().join("out.img").to_string_lossy().into_owned();
    let out = app::cmd_denoise(&cfg).unwrap();
    assert_eq!(out.shape(), input.shape());
    assert_eq!(read_image(&cfg.output).unwrap(), out);
    assert!(out.data().iter().all(|v| v.is_finite()));
}

#[test]
fn denoiser_reads_only_generator_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { epochs: 1, ..tiny(dir.path(), "run") };
    app::cmd_synth(&cfg).unwrap();
    app::cmd_train(&cfg, false, |_| {}).unwrap();
    let d = app::load_denoiser(app::latest_checkpoint(&cfg).unwrap()).unwrap();
    assert!(!d.loaded.is_empty());
    assert!(d.loaded.iter().all(|n| n.starts_with("gen/")));
}

#[test]
fn switchable_total_counts_one_generator_and_the_code_generator() {
    let t = ParamTable::for_config(&RunConfig::default()).unwrap();
    assert_eq!(t.switchable_total, t.generator + t.code_generator);
    assert_eq!(t.two_generator_total, 2 * t.generator);
    assert!(t.ratio() > 0.5 && t.ratio() < 1.0);
}
