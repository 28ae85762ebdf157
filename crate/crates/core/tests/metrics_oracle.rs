mod common;

use terraseg::metrics::{bce_term, PixelCounts};
use terraseg::Tensor;

#[test]
fn metrics_agree_with_pixel_counting() {
    let run = common::oracle::run(100, 2024);
    assert_eq!(run.pairs, 100);
    assert!(run.mismatches.is_empty(), "{:#?}", run.mismatches);
}

#[test]
fn all_zero_logits_predict_foreground_everywhere() {
    // sigmoid(0) = 0.5 sits on the threshold and counts as foreground.
    let probs = Tensor::<f32>::full(&[1, 1, 4, 4], 0.5).unwrap();
    let targets = Tensor::<f32>::from_fn(&[1, 1, 4, 4], |i| f32::from(u8::from(i < 5))).unwrap();
    let c = PixelCounts::tally(&probs, &targets, 0.5).unwrap();
    assert_eq!(c.accuracy(), 5.0 / 16.0);
}

#[test]
fn bce_matches_naive_formula_where_it_is_stable() {
    for &(z, y) in &[(0.3f64, 1.0), (-2.0, 0.0), (4.0, 0.0), (-0.7, 1.0)] {
        let p = 1.0 / (1.0 + (-z).exp());
        let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        assert!((bce_term(z, y) - naive).abs() < 1e-12);
    }
    assert!(bce_term(1000.0f64, 0.0).is_finite());
    assert!((bce_term(-1000.0f64, 1.0) - 1000.0).abs() < 1e-9);
}
