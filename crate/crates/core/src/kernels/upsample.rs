use rayon::prelude::*;

use crate::autodiff::{BackwardRule, Tape, Values, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

/// Per-sample gemm view: `Y[cout·4, h·w] = Wᵀ · X[cin, h·w]`, with `W`
/// read as `cin × cout·4`. Row `co·4 + 2a + b` of `Y` holds the tap `(a, b)`
/// contribution, scattered to output pixel `(2i + a, 2j + b)`.
#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
}

impl Dims {
    fn taps(&self) -> usize {
        self.cout * 4
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Index into one output sample for tap row `r` and input pixel `(i, j)`.
    #[inline]
    fn out_index(&self, r: usize, i: usize, j: usize) -> usize {
        let (co, a, b) = (r / 4, (r / 2) % 2, r % 2);
        (co * 2 * self.h + 2 * i + a) * 2 * self.w + 2 * j + b
    }

    fn scatter<T: Real>(&self, taps: &[T], out: &mut [T]) {
        let plane = self.plane();
        for r in 0..self.taps() {
            for i in 0..self.h {
                for j in 0..self.w {
                    out[self.out_index(r, i, j)] = taps[r * plane + i * self.w + j];
                }
            }
        }
    }

    fn gather<T: Real>(&self, out: &[T], taps: &mut [T]) {
        let plane = self.plane();
        for r in 0..self.taps() {
            for i in 0..self.h {
                for j in 0..self.w {
                    taps[r * plane + i * self.w + j] = out[self.out_index(r, i, j)];
                }
            }
        }
    }
}

struct ConvTransposeRule {
    input: Var,
    weight: Var,
    dims: Dims,
}

impl<T: Real> BackwardRule<T> for ConvTransposeRule {
    fn op_name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.input, self.weight]
    }

    fn backward(
        &self,
        values: &Values<'_, T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let d = self.dims;
        let x = values.get(self.input);
        let w = values.get(self.weight);
        let (plane, taps) = (d.plane(), d.taps());
        let mut dx = vec![T::zero(); d.n * d.cin * plane];
        let partials: Vec<Vec<T>> = dx
            .par_chunks_mut(d.cin * plane)
            .zip(x.data().par_chunks(d.cin * plane))
            .zip(grad.data().par_chunks(taps * plane))
            .map(|((dx_n, x_n), dy_n)| {
                let mut dtaps = vec![T::zero(); taps * plane];
                d.gather(dy_n, &mut dtaps);
                gemm(d.cin, taps, plane, T::one(), (w.data(), taps, 1), (&dtaps, plane, 1), T::zero(), (dx_n, plane, 1));
                let mut dw = vec![T::zero(); d.cin * taps];
                gemm(d.cin, plane, taps, T::one(), (x_n, plane, 1), (&dtaps, 1, plane), T::zero(), (&mut dw, taps, 1));
                dw
            })
            .collect();
        let mut dw = vec![T::zero(); d.cin * taps];
        for p in &partials {
            for (a, &b) in dw.iter_mut().zip(p) {
                *a = *a + b;
            }
        }
        Ok(vec![
            Tensor::from_parts(x.shape().to_vec(), dx),
            Tensor::from_parts(w.shape().to_vec(), dw),
        ])
    }
}

impl<T: Real> Tape<T> {
    /// Learned 2× upsampling: transposed convolution with a 2×2 kernel and
    /// stride 2. `weight` is `Cin×Cout×2×2`; every input pixel scatters
    /// `value · kernel` into its own 2×2 output block.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var) -> Result<Var> {
        let x = self.value(input);
        let wt = self.value(weight);
        let [n, cin, h, w] = x.dims4()?;
        let cout = match wt.shape() {
            &[wc, co, 2, 2] if wc == cin => co,
            other => {
                return Err(Error::Shape(format!(
                    "conv_transpose2d weight {other:?} incompatible with {cin} input channels (want {cin}×Cout×2×2)"
                )))
            }
        };
        let d = Dims { n, cin, cout, h, w };
        let (plane, taps) = (d.plane(), d.taps());
        let mut out = vec![T::zero(); n * cout * 4 * plane];
        out.par_chunks_mut(taps * plane)
            .zip(x.data().par_chunks(cin * plane))
            .for_each_init(Vec::new, |buf, (y, x_n)| {
                buf.resize(taps * plane, T::zero());
                gemm(taps, cin, plane, T::one(), (wt.data(), 1, taps), (x_n, plane, 1), T::zero(), (buf.as_mut_slice(), plane, 1));
                d.scatter(buf, y);
            });
        let value = Tensor::from_parts(vec![n, cout, 2 * h, 2 * w], out);
        Ok(self.record(value, Box::new(ConvTransposeRule { input, weight, dims: d })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{ConvSpec, Padding};
    use crate::rng::SplitMix64;

    fn run(x: Tensor<f64>, w: Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (x, w) = (tape.leaf(x), tape.leaf(w));
        let y = tape.conv_transpose2d(x, w).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn single_scatter() {
        let y = run(
            Tensor::new(&[1, 1, 1, 1], vec![3.0]).unwrap(),
            Tensor::full(&[1, 1, 2, 2], 0.5).unwrap(),
        );
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.5; 4]);
    }

    #[test]
    fn block_scatter() {
        let y = run(
            Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Tensor::full(&[1, 1, 2, 2], 1.0).unwrap(),
        );
        #[rustfmt::skip]
        let want = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn adjoint_of_stride_two_convolution() {
        let mut rng = SplitMix64::new(5);
        let mut rand = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rng.next_f64() - 0.5).unwrap();
        let (cin, cout) = (3, 2);
        let x = rand(&[2, cin, 3, 4]);
        let w = rand(&[cin, cout, 2, 2]);
        let y = rand(&[2, cout, 6, 8]);
        let up = run(x.clone(), w.clone());
        let lhs: f64 = up.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();

        // A stride-2 2×2 convolution from cout to cin channels shares the
        // same weight buffer: conv weight[ci][co][a][b] = w[ci][co][a][b].
        let spec = ConvSpec { in_channels: cout, out_channels: cin, kernel: 2, stride: 2, padding: Padding::None };
        let mut tape = Tape::new();
        let (yv, wv, bv) = (tape.leaf(y), tape.leaf(w), tape.leaf(Tensor::zeros(&[cin])));
        let down = tape.conv2d(yv, wv, bv, &spec).unwrap();
        let rhs: f64 = tape.value(down).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn weight_shape_checked() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 2, 2]));
        let w = tape.leaf(Tensor::zeros(&[3, 1, 2, 2]));
        assert!(matches!(tape.conv_transpose2d(x, w), Err(Error::Shape(_))));
    }
}
