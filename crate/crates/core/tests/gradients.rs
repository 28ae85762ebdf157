mod common;

use common::grad::{kernel_reports, unet_report};
use terraseg::rng::SplitMix64;
use terraseg::unet::{forward, init_params};
use terraseg::{grad_check, ConvSpec, Tape, Tensor};

#[test]
fn kernels_match_finite_differences() {
    for r in kernel_reports(20, 0x5eed) {
        assert!(r.worst < 1e-5, "{}: worst relative error {:e}", r.op, r.worst);
    }
}

#[test]
fn composed_network_matches_finite_differences() {
    let r = unet_report(24, 42);
    assert!(r.worst < 1e-5, "worst relative error {:e}", r.worst);
}

#[test]
fn single_precision_smoke() {
    let mut rng = SplitMix64::new(9);
    let spec = ConvSpec::same(2, 3, 3);
    let x = Tensor::<f32>::from_fn(&[1, 2, 5, 5], |_| rng.next_f64() as f32 - 0.5).unwrap();
    let w = Tensor::<f32>::from_fn(&[3, 2, 3, 3], |_| rng.next_f64() as f32 - 0.5).unwrap();
    let b = Tensor::<f32>::zeros(&[3]);
    let err = grad_check(
        |t, x| {
            let (w, b) = (t.leaf(w.clone()), t.leaf(b.clone()));
            let y = t.conv2d(x, w, b, &spec)?;
            let y = t.relu(y);
            let sq = t.mul(y, y)?;
            Ok(t.sum(sq))
        },
        &x,
        1e-2,
    )
    .unwrap();
    assert!(err < 1e-2, "err = {err}");
}

/// Backward is linear in the seed gradient: scaling the loss by `a` and
/// adding a second loss scaled by `b` gives `a·g1 + b·g2`.
#[test]
fn backward_is_linear() {
    let config = common::grad::tiny_unet();
    let params = init_params::<f64>(&config, 3).unwrap();
    let mut rng = SplitMix64::new(77);
    let x = Tensor::<f64>::from_fn(&[1, 3, 8, 8], |_| rng.next_f64()).unwrap();
    let y1 = Tensor::<f64>::from_fn(&[1, 1, 8, 8], |_| rng.below(2) as f64).unwrap();
    let y2 = y1.map(|v| 1.0 - v);

    let grads = |a: f64, b: f64| {
        let mut t = Tape::<f64>::new();
        let bound = params.bind(&mut t);
        let xv = t.leaf(x.clone());
        let z = forward(&mut t, &bound, &config, xv).unwrap();
        let l1 = t.bce_with_logits(z, &y1).unwrap();
        let l2 = t.bce_with_logits(z, &y2).unwrap();
        let l1 = t.scale(l1, a).unwrap();
        let l2 = t.scale(l2, b).unwrap();
        let l = t.add(l1, l2).unwrap();
        t.backward(l).unwrap();
        bound.grads(&mut t)
    };
    let g1 = grads(1.0, 0.0);
    let g2 = grads(0.0, 1.0);
    let (a, b) = (0.7, -1.3);
    let gab = grads(a, b);
    for ((name, t1), ((_, t2), (_, tab))) in g1.iter().zip(g2.iter().zip(gab.iter())) {
        for ((&u, &v), &w) in t1.data().iter().zip(t2.data()).zip(tab.data()) {
            assert!((a * u + b * v - w).abs() < 1e-12, "{name}: {} vs {w}", a * u + b * v);
        }
    }
}
