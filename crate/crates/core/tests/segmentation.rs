mod common;

use ndarray::Array2;
use rand::Rng;
use xmodseg::phantom::{Domain, Sample, Spacing};
use xmodseg::segmentation::{
    build_model, predict_mask, train_segmenter, validation_dsc, SegArchitecture, SegKind, SegTrainConfig,
};

// Bright noisy disc on a darker noisy background.
fn disc_samples(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|i| {
            let (cr, cc) = (r.random_range(8.0..size as f64 - 8.0), r.random_range(8.0..size as f64 - 8.0));
            let rad = r.random_range(3.0..6.0);
            let mask = Array2::from_shape_fn((size, size), |(y, x)| {
                u8::from((y as f64 - cr).powi(2) + (x as f64 - cc).powi(2) <= rad * rad)
            });
            let image = mask.mapv(|m| if m == 1 { 0.6 } else { -0.4 } + r.random_range(-0.2f32..0.2));
            let sp = Spacing::new(1.0, 1.0).unwrap();
            Sample::new(format!("s{i}"), format!("S{i}"), Domain::B, sp, image, Some(mask)).unwrap()
        })
        .collect()
}

fn config(lr: f64) -> SegTrainConfig {
    SegTrainConfig {
        steps: 12,
        batch_size: 2,
        lr,
        epoch_steps: 3,
        patience: 10,
        augment: true,
        seed: 4,
    }
}

fn model(seed: u64) -> xmodseg::segmentation::SegModel {
    build_model(SegArchitecture::new(SegKind::UnetBn, 0.0625), seed).unwrap()
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let (train, val) = (disc_samples(4, 32, 1), disc_samples(2, 32, 2));
    let m = model(3);
    let before = m.params.fingerprint(true).unwrap();
    let out = train_segmenter(m, &train, &val, &config(0.0)).unwrap();
    assert_eq!(out.model.params.fingerprint(true).unwrap(), before);
}

#[test]
fn keeps_the_best_validation_epoch() {
    let (train, val) = (disc_samples(6, 32, 5), disc_samples(3, 32, 6));
    let out = train_segmenter(model(7), &train, &val, &config(1e-2)).unwrap();
    let best = out.history.iter().map(|h| h.val_dsc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_dsc, best);
    assert_eq!(out.history[out.best_epoch - 1].val_dsc, best);
    assert_eq!(validation_dsc(&out.model, &val).unwrap(), best);
}

#[test]
fn identical_seeds_reproduce_validation_dsc() {
    let (train, val) = (disc_samples(4, 32, 8), disc_samples(2, 32, 9));
    let run = || train_segmenter(model(10), &train, &val, &config(1e-2)).unwrap();
    let (a, b) = (run(), run());
    assert!((a.best_val_dsc - b.best_val_dsc).abs() <= 1e-6);
    assert_eq!(a.history, b.history);
}

#[test]
fn early_stopping_ends_before_the_budget() {
    let (train, val) = (disc_samples(4, 32, 11), disc_samples(2, 32, 12));
    let cfg = SegTrainConfig {
        patience: 1,
        steps: 60,
        ..config(0.0)
    };
    let out = train_segmenter(model(13), &train, &val, &cfg).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.history.len(), out.best_epoch + 1);
}

#[test]
fn every_architecture_predicts_at_input_resolution() {
    let img = disc_samples(1, 32, 14).remove(0);
    let odd = img.image.slice(ndarray::s![..30, ..27]).to_owned();
    for kind in SegKind::ALL {
        let m = build_model(SegArchitecture::new(kind, 0.0625), 1).unwrap();
        assert_eq!(predict_mask(&m, &odd).unwrap().dim(), (30, 27), "{kind}");
    }
}
