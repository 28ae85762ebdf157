mod common;

use terraseg::checkpoint::load_checkpoint;
use terraseg::data::{scan_dataset, Manifest};
use terraseg::trainer::{evaluate, predict, train, TrainConfig, UNetDriver, CHECKPOINT_FILE, METRICS_FILE};
use terraseg::unet::{init_params, ParamStore, UNetConfig};
use terraseg::Error;

fn small(data: &std::path::Path, out: &std::path::Path) -> TrainConfig {
    TrainConfig {
        train_batch: 3,
        val_batch: 2,
        max_epochs: 4,
        patience: 2,
        split: 0.7,
        seed: 5,
        model: UNetConfig {
            depth: 1,
            base_width: 2,
            img_size: 16,
            ..UNetConfig::default()
        },
        data_root: data.to_path_buf(),
        out_dir: out.to_path_buf(),
        ..TrainConfig::default()
    }
}

fn zeroed(config: &UNetConfig) -> ParamStore {
    let mut p = init_params(config, 0).unwrap();
    for (_, t) in p.iter_mut() {
        t.data_mut().fill(0.0);
    }
    p
}

#[test]
fn zero_logits_score_the_foreground_fraction() {
    let (_d, data, out) = common::scratch();
    common::red_threshold_dataset(&data, 5, 16, 1);
    let config = small(&data, &out).model;
    let m = scan_dataset(&data).unwrap().manifest;
    let metrics = evaluate(&zeroed(&config), &config, &m, 2).unwrap();

    let mut fg = 0usize;
    for e in &m.entries {
        let mask = image::open(&e.mask_path).unwrap().to_luma8();
        fg += mask.pixels().filter(|p| p.0[0] >= 128).count();
    }
    let fraction = fg as f64 / (5 * 16 * 16) as f64;
    assert!((metrics.accuracy - fraction).abs() < 1e-12, "{} vs {fraction}", metrics.accuracy);
    assert!((metrics.loss - std::f64::consts::LN_2).abs() < 1e-6);
}

#[test]
fn evaluation_is_pure() {
    let (_d, data, out) = common::scratch();
    common::red_threshold_dataset(&data, 4, 16, 2);
    let config = small(&data, &out).model;
    let params = init_params(&config, 9).unwrap();
    let before = terraseg::checkpoint::encode(&params, &config).unwrap();
    let m = scan_dataset(&data).unwrap().manifest;
    let a = evaluate(&params, &config, &m, 3).unwrap();
    let b = evaluate(&params, &config, &m, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(terraseg::checkpoint::encode(&params, &config).unwrap(), before);

    let empty = Manifest { root: data.clone(), entries: vec![] };
    assert!(matches!(evaluate(&params, &config, &empty, 3), Err(Error::Dataset(_))));
}

#[test]
fn divergence_aborts_naming_epoch_and_batch() {
    let (_d, data, out) = common::scratch();
    common::red_threshold_dataset(&data, 6, 16, 3);
    let config = small(&data, &out);
    let mut params = init_params(&config.model, 0).unwrap();
    params.get_mut("head.b").unwrap().data_mut()[0] = f32::NAN;
    let m = scan_dataset(&data).unwrap().manifest;
    let (train_m, val_m) = terraseg::data::split_manifest(&m, 0.5, 0).unwrap();
    let mut driver = UNetDriver::new(params, train_m, val_m, &config).unwrap();
    let err = terraseg::trainer::fit(&mut driver, 3, 2, &out).unwrap_err();
    assert!(matches!(err, Error::NonFinite { epoch: 1, batch: 1, .. }), "{err}");
}

#[test]
fn best_parameters_are_returned_and_checkpointed() {
    let (_d, data, out) = common::scratch();
    common::red_threshold_dataset(&data, 10, 16, 4);
    let outcome = train(&small(&data, &out)).unwrap();
    let csv = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), outcome.history.len() + 1);

    let best = outcome.best_epoch.unwrap();
    let min = outcome
        .history
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .unwrap();
    assert_eq!(min.epoch, best);

    let (saved, saved_config) = load_checkpoint(&out.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(saved_config, small(&data, &out).model);
    for ((n1, a), (n2, b)) in saved.iter().zip(outcome.best_params.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let (_d, data, out) = common::scratch();
    common::red_threshold_dataset(&data, 8, 16, 5);
    let out2 = out.with_file_name("out2");
    train(&small(&data, &out)).unwrap();
    train(&small(&data, &out2)).unwrap();
    for f in [METRICS_FILE, CHECKPOINT_FILE] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(out2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn prediction_files() {
    let (d, data, _) = common::scratch();
    common::red_threshold_dataset(&data, 2, 40, 6);
    let config = UNetConfig {
        depth: 2,
        base_width: 2,
        img_size: 32,
        ..UNetConfig::default()
    };
    let params = init_params(&config, 1).unwrap();
    let image = data.join("images/s000.png");
    let a = d.path().join("a.png");
    let b = d.path().join("b.png");
    predict(&params, &config, &image, &a).unwrap();
    predict(&params, &config, &image, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let img = image::open(&a).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (32, 32));
    assert!(img.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));

    let bad = UNetConfig { img_size: 30, ..config };
    assert!(predict(&params, &bad, &image, &a).is_err());
}

#[test]
fn thread_count_does_not_change_results() {
    let (_d, data, out) = common::scratch();
    common::red_threshold_dataset(&data, 8, 16, 7);
    let out4 = out.with_file_name("out4");
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    pool(1).install(|| train(&small(&data, &out))).unwrap();
    pool(4).install(|| train(&small(&data, &out4))).unwrap();
    for f in [METRICS_FILE, CHECKPOINT_FILE] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(out4.join(f)).unwrap(), "{f}");
    }
}
