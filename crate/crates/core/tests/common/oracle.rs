//! Brute-force pixel counting used to cross-check the metric implementations.

use terraseg::metrics::{iou, pixel_accuracy, DEFAULT_IOU_EPS, DEFAULT_THRESHOLD};
use terraseg::rng::SplitMix64;
use terraseg::Tensor;

pub struct OracleRun {
    pub pairs: usize,
    pub mismatches: Vec<String>,
}

fn grid(rng: &mut SplitMix64, density: f64) -> Vec<Vec<bool>> {
    (0..16).map(|_| (0..16).map(|_| rng.next_f64() < density).collect()).collect()
}

fn oracle(pred: &[Vec<bool>], target: &[Vec<bool>]) -> (f64, f64) {
    let (mut both, mut either, mut agree) = (0u32, 0u32, 0u32);
    for r in 0..16 {
        for c in 0..16 {
            let (p, t) = (pred[r][c], target[r][c]);
            both += u32::from(p && t);
            either += u32::from(p || t);
            agree += u32::from(p == t);
        }
    }
    let accuracy = f64::from(agree) / 256.0;
    let iou = (f64::from(both) + DEFAULT_IOU_EPS) / (f64::from(either) + DEFAULT_IOU_EPS);
    (accuracy, iou)
}

/// Compares `pixel_accuracy` and `iou` with the oracle on random 16×16
/// pairs. Predictions are probabilities that land on either side of the
/// threshold; targets are exact 0/1.
pub fn run(pairs: usize, seed: u64) -> OracleRun {
    let mut rng = SplitMix64::new(seed);
    let mut mismatches = Vec::new();
    for i in 0..pairs {
        // Vary the density so empty and full masks show up too.
        let density = [0.0, 0.05, 0.5, 0.95, 1.0, rng.next_f64()][i % 6];
        let pred = grid(&mut rng, density);
        let target_density = rng.next_f64();
        let target = grid(&mut rng, target_density);
        let probs = Tensor::<f32>::from_fn(&[1, 1, 16, 16], |k| {
            let u = rng.next_f64() as f32 * 0.5;
            if pred[k / 16][k % 16] { 0.5 + u } else { 0.499 - u.min(0.499) }
        })
        .unwrap();
        let targets = Tensor::<f32>::from_fn(&[1, 1, 16, 16], |k| f32::from(u8::from(target[k / 16][k % 16]))).unwrap();
        let (acc, jac) = oracle(&pred, &target);
        let got_acc = pixel_accuracy(&probs, &targets, DEFAULT_THRESHOLD).unwrap();
        let got_iou = iou(&probs, &targets, DEFAULT_THRESHOLD, DEFAULT_IOU_EPS).unwrap();
        if got_acc != acc || got_iou != jac {
            mismatches.push(format!("pair {i}: accuracy {got_acc} vs {acc}, iou {got_iou} vs {jac}"));
        }
    }
    OracleRun { pairs, mismatches }
}
