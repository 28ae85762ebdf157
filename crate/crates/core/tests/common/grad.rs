//! Randomized finite-difference checks shared by the gradient tests and the
//! acceptance runner.

use terraseg::rng::SplitMix64;
use terraseg::unet::{forward, init_params, UNetConfig};
use terraseg::{grad_check, ConvSpec, Padding, Result, Tape, Tensor, Var};

pub const EPS: f64 = 1e-6;

pub struct OpReport {
    pub op: &'static str,
    pub trials: usize,
    pub worst: f64,
}

fn uniform(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.next_f64() * 2.0 - 1.0).unwrap()
}

fn binary(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| (rng.below(2)) as f64).unwrap()
}

/// Reduces `y` to a scalar through fixed random weights, so every output
/// element carries a distinct upstream gradient.
fn project(t: &mut Tape<f64>, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = SplitMix64::new(rng_seed);
    let w = uniform(t.value(y).shape(), &mut rng);
    let w = t.leaf(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn run(op: &'static str, trials: usize, seed: u64, mut trial: impl FnMut(&mut SplitMix64, u64) -> f64) -> OpReport {
    let mut rng = SplitMix64::new(seed);
    let worst = (0..trials)
        .map(|i| trial(&mut rng, seed ^ (i as u64).wrapping_mul(0x9e37_79b9)))
        .fold(0.0, f64::max);
    OpReport { op, trials, worst }
}

fn random_conv(rng: &mut SplitMix64) -> (ConvSpec, [usize; 4]) {
    let kernel = [1, 3, 3, 5][rng.below(4)];
    let stride = 1 + rng.below(2);
    let padding = if rng.below(2) == 0 { Padding::Same } else { Padding::None };
    let spec = ConvSpec {
        in_channels: 1 + rng.below(3),
        out_channels: 1 + rng.below(3),
        kernel,
        stride,
        padding,
    };
    let extent = kernel + 1 + rng.below(4);
    (spec, [1 + rng.below(2), spec.in_channels, extent, extent + rng.below(2)])
}

pub fn kernel_reports(trials: usize, seed: u64) -> Vec<OpReport> {
    vec![
        run("conv2d/input", trials, seed, |rng, s| {
            let (spec, xs) = random_conv(rng);
            let w = uniform(&spec.weight_shape(), rng);
            let b = uniform(&[spec.out_channels], rng);
            let x = uniform(&xs, rng);
            grad_check(
                |t, x| {
                    let (w, b) = (t.leaf(w.clone()), t.leaf(b.clone()));
                    let y = t.conv2d(x, w, b, &spec)?;
                    project(t, y, s)
                },
                &x,
                EPS,
            )
            .unwrap()
        }),
        run("conv2d/weight", trials, seed + 1, |rng, s| {
            let (spec, xs) = random_conv(rng);
            let w = uniform(&spec.weight_shape(), rng);
            let b = uniform(&[spec.out_channels], rng);
            let x = uniform(&xs, rng);
            grad_check(
                |t, w| {
                    let (x, b) = (t.leaf(x.clone()), t.leaf(b.clone()));
                    let y = t.conv2d(x, w, b, &spec)?;
                    project(t, y, s)
                },
                &w,
                EPS,
            )
            .unwrap()
        }),
        run("conv2d/bias", trials, seed + 2, |rng, s| {
            let (spec, xs) = random_conv(rng);
            let w = uniform(&spec.weight_shape(), rng);
            let b = uniform(&[spec.out_channels], rng);
            let x = uniform(&xs, rng);
            grad_check(
                |t, b| {
                    let (x, w) = (t.leaf(x.clone()), t.leaf(w.clone()));
                    let y = t.conv2d(x, w, b, &spec)?;
                    project(t, y, s)
                },
                &b,
                EPS,
            )
            .unwrap()
        }),
        run("maxpool2d", trials, seed + 3, |rng, s| {
            let shape = [1 + rng.below(2), 1 + rng.below(3), 2 * (1 + rng.below(3)), 2 * (1 + rng.below(3))];
            let x = uniform(&shape, rng);
            grad_check(
                |t, x| {
                    let y = t.maxpool2d(x)?;
                    project(t, y, s)
                },
                &x,
                EPS,
            )
            .unwrap()
        }),
        run("conv_transpose2d/input", trials, seed + 4, |rng, s| {
            let (cin, cout) = (1 + rng.below(3), 1 + rng.below(3));
            let x = uniform(&[1 + rng.below(2), cin, 1 + rng.below(4), 1 + rng.below(4)], rng);
            let w = uniform(&[cin, cout, 2, 2], rng);
            grad_check(
                |t, x| {
                    let w = t.leaf(w.clone());
                    let y = t.conv_transpose2d(x, w)?;
                    project(t, y, s)
                },
                &x,
                EPS,
            )
            .unwrap()
        }),
        run("conv_transpose2d/weight", trials, seed + 5, |rng, s| {
            let (cin, cout) = (1 + rng.below(3), 1 + rng.below(3));
            let x = uniform(&[1 + rng.below(2), cin, 1 + rng.below(4), 1 + rng.below(4)], rng);
            let w = uniform(&[cin, cout, 2, 2], rng);
            grad_check(
                |t, w| {
                    let x = t.leaf(x.clone());
                    let y = t.conv_transpose2d(x, w)?;
                    project(t, y, s)
                },
                &w,
                EPS,
            )
            .unwrap()
        }),
        run("concat_channels", trials, seed + 6, |rng, s| {
            let (n, h, w) = (1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(4));
            let a = uniform(&[n, 1 + rng.below(3), h, w], rng);
            let b = uniform(&[n, 1 + rng.below(3), h, w], rng);
            let ea = grad_check(
                |t, a| {
                    let b = t.leaf(b.clone());
                    let y = t.concat_channels(a, b)?;
                    project(t, y, s)
                },
                &a,
                EPS,
            )
            .unwrap();
            let eb = grad_check(
                |t, b| {
                    let a = t.leaf(a.clone());
                    let y = t.concat_channels(a, b)?;
                    project(t, y, s)
                },
                &b,
                EPS,
            )
            .unwrap();
            ea.max(eb)
        }),
        run("relu", trials, seed + 7, |rng, s| {
            let x = uniform(&[1 + rng.below(20)], rng);
            grad_check(
                |t, x| {
                    let y = t.relu(x);
                    project(t, y, s)
                },
                &x,
                EPS,
            )
            .unwrap()
        }),
        run("sigmoid", trials, seed + 8, |rng, s| {
            let x = uniform(&[1 + rng.below(20)], rng).map(|v| 8.0 * v);
            grad_check(
                |t, x| {
                    let y = t.sigmoid(x);
                    project(t, y, s)
                },
                &x,
                EPS,
            )
            .unwrap()
        }),
        run("bce_with_logits", trials, seed + 9, |rng, _| {
            let n = 1 + rng.below(20);
            let z = uniform(&[n], rng).map(|v| 6.0 * v);
            let y = binary(&[n], rng);
            grad_check(|t, z| t.bce_with_logits(z, &y), &z, EPS).unwrap()
        }),
    ]
}

pub fn tiny_unet() -> UNetConfig {
    UNetConfig {
        depth: 2,
        base_width: 2,
        img_size: 8,
        ..UNetConfig::default()
    }
}

/// Checks the composed network against its input and, cycling through the
/// parameter names, against one parameter tensor per trial.
pub fn unet_report(trials: usize, seed: u64) -> OpReport {
    let config = tiny_unet();
    let names: Vec<String> = config.param_shapes().into_iter().map(|(n, _)| n).collect();
    let mut k = 0;
    run("unet(depth 2, width 2, 8x8)", trials, seed, |rng, s| {
        let mut params = init_params::<f64>(&config, s).unwrap();
        // Non-zero biases so every bias gradient is exercised away from the init.
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v += 0.05 * (rng.next_f64() - 0.5);
            }
        }
        let x = uniform(&[2, 3, 8, 8], rng).map(|v| 0.5 + 0.5 * v);
        let y = binary(&[2, 1, 8, 8], rng);
        let loss = |t: &mut Tape<f64>, bound: &terraseg::unet::BoundParams, x: Var| -> Result<Var> {
            let z = forward(t, bound, &config, x)?;
            t.bce_with_logits(z, &y)
        };
        let input_err = grad_check(
            |t, x| {
                let bound = params.bind(t);
                loss(t, &bound, x)
            },
            &x,
            EPS,
        )
        .unwrap();
        let name = &names[k % names.len()];
        k += 1;
        let p = params.get(name).unwrap().clone();
        let param_err = grad_check(
            |t, p| {
                let mut bound = params.bind(t);
                bound.substitute(name, p)?;
                let x = t.leaf(x.clone());
                loss(t, &bound, x)
            },
            &p,
            EPS,
        )
        .unwrap();
        input_err.max(param_err)
    })
}
