use rayon::prelude::*;

use crate::autodiff::{BackwardRule, Tape, Values, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(kernel - 1) / 2` on every side; needs an odd kernel.
    Same,
    None,
}

/// Geometry of a square 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    /// Stride-1 same-padded convolution.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Shape(format!("{self:?}: channel counts must be positive")));
        }
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Shape(format!("{self:?}: kernel and stride must be ≥ 1")));
        }
        if self.padding == Padding::Same && self.kernel.is_multiple_of(2) {
            return Err(Error::Shape(format!("{self:?}: same padding needs an odd kernel")));
        }
        Ok(())
    }

    pub fn pad(&self) -> usize {
        match self.padding {
            Padding::Same => (self.kernel - 1) / 2,
            Padding::None => 0,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn output_extent(&self, extent: usize) -> Result<usize> {
        let padded = extent + 2 * self.pad();
        if padded < self.kernel {
            return Err(Error::Shape(format!(
                "extent {extent} too small for {}×{} kernel",
                self.kernel, self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    hout: usize,
    wout: usize,
}

impl Geometry {
    fn cols_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.hout * self.wout
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input window coordinate for an output coordinate and kernel tap, if
    /// it falls inside the unpadded input.
    #[inline]
    fn src(&self, out: usize, tap: usize, limit: usize) -> Option<usize> {
        (out * self.stride + tap).checked_sub(self.pad).filter(|&i| i < limit)
    }

    /// Unfolds one sample (`cin×h×w`) into columns (`cin·k·k × hout·wout`).
    fn im2col<T: Real>(&self, input: &[T], cols: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.cin {
            let chan = &input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oh in 0..self.hout {
                        let line = &mut dst[oh * self.wout..(oh + 1) * self.wout];
                        match self.src(oh, ki, self.h) {
                            None => line.fill(T::zero()),
                            Some(ih) => {
                                let src = &chan[ih * self.w..(ih + 1) * self.w];
                                for (ow, v) in line.iter_mut().enumerate() {
                                    *v = self.src(ow, kj, self.w).map_or(T::zero(), |iw| src[iw]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: folds columns back, accumulating overlaps.
    fn col2im<T: Real>(&self, cols: &[T], out: &mut [T]) {
        let plane = self.out_plane();
        out.fill(T::zero());
        for c in 0..self.cin {
            let chan = &mut out[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oh in 0..self.hout {
                        let Some(ih) = self.src(oh, ki, self.h) else {
                            continue;
                        };
                        let line = &src[oh * self.wout..(oh + 1) * self.wout];
                        let dst = &mut chan[ih * self.w..(ih + 1) * self.w];
                        for (ow, &v) in line.iter().enumerate() {
                            if let Some(iw) = self.src(ow, kj, self.w) {
                                dst[iw] = dst[iw] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(usize, Geometry)> {
    spec.validate()?;
    let [n, cin, h, w] = input.dims4()?;
    if cin != spec.in_channels {
        return Err(Error::Shape(format!(
            "conv2d expects {} input channels, got {cin}",
            spec.in_channels
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::Shape(format!(
            "conv2d weight {:?} does not match {:?}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::Shape(format!(
            "conv2d bias {:?} does not match [{}]",
            bias.shape(),
            spec.out_channels
        )));
    }
    Ok((
        n,
        Geometry {
            cin,
            cout: spec.out_channels,
            h,
            w,
            k: spec.kernel,
            stride: spec.stride,
            pad: spec.pad(),
            hout: spec.output_extent(h)?,
            wout: spec.output_extent(w)?,
        },
    ))
}

fn conv2d_forward<T: Real>(
    n: usize,
    g: Geometry,
    input: &[T],
    weight: &[T],
    bias: &[T],
) -> Tensor<T> {
    let in_len = g.cin * g.h * g.w;
    let plane = g.out_plane();
    let kk = g.cols_rows();
    let mut out = vec![T::zero(); n * g.cout * plane];
    out.par_chunks_mut(g.cout * plane)
        .zip(input.par_chunks(in_len))
        .for_each_init(Vec::new, |cols, (y, x)| {
            let cols_ref: &[T] = if g.is_pointwise() {
                x
            } else {
                cols.resize(kk * plane, T::zero());
                g.im2col(x, cols);
                cols
            };
            for (co, row) in y.chunks_mut(plane).enumerate() {
                row.fill(bias[co]);
            }
            gemm(g.cout, kk, plane, T::one(), (weight, kk, 1), (cols_ref, plane, 1), T::one(), (y, plane, 1));
        });
    Tensor::from_parts(vec![n, g.cout, g.hout, g.wout], out)
}

struct Conv2dRule {
    input: Var,
    weight: Var,
    bias: Var,
    n: usize,
    geometry: Geometry,
}

impl<T: Real> BackwardRule<T> for Conv2dRule {
    fn op_name(&self) -> &'static str {
        "conv2d"
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.input, self.weight, self.bias]
    }

    fn backward(
        &self,
        values: &Values<'_, T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let g = self.geometry;
        let x = values.get(self.input);
        let w = values.get(self.weight);
        let in_len = g.cin * g.h * g.w;
        let plane = g.out_plane();
        let kk = g.cols_rows();

        let mut dx = vec![T::zero(); self.n * in_len];
        // Per-sample (dW, db) partials, reduced below in batch order.
        let partials: Vec<(Vec<T>, Vec<T>)> = dx
            .par_chunks_mut(in_len)
            .zip(x.data().par_chunks(in_len))
            .zip(grad.data().par_chunks(g.cout * plane))
            .map(|((dx_n, x_n), dy_n)| {
                let db: Vec<T> = dy_n.chunks(plane).map(|row| row.iter().copied().sum()).collect();
                let mut dw = vec![T::zero(); g.cout * kk];
                if g.is_pointwise() {
                    gemm(g.cout, plane, kk, T::one(), (dy_n, plane, 1), (x_n, 1, plane), T::zero(), (&mut dw, kk, 1));
                    gemm(kk, g.cout, plane, T::one(), (w.data(), 1, kk), (dy_n, plane, 1), T::zero(), (dx_n, plane, 1));
                } else {
                    let mut cols = vec![T::zero(); kk * plane];
                    g.im2col(x_n, &mut cols);
                    gemm(g.cout, plane, kk, T::one(), (dy_n, plane, 1), (&cols, 1, plane), T::zero(), (&mut dw, kk, 1));
                    gemm(kk, g.cout, plane, T::one(), (w.data(), 1, kk), (dy_n, plane, 1), T::zero(), (&mut cols, plane, 1));
                    g.col2im(&cols, dx_n);
                }
                (dw, db)
            })
            .collect();

        let mut dw = vec![T::zero(); g.cout * kk];
        let mut db = vec![T::zero(); g.cout];
        for (pw, pb) in &partials {
            for (a, &b) in dw.iter_mut().zip(pw) {
                *a = *a + b;
            }
            for (a, &b) in db.iter_mut().zip(pb) {
                *a = *a + b;
            }
        }
        Ok(vec![
            Tensor::from_parts(x.shape().to_vec(), dx),
            Tensor::from_parts(w.shape().to_vec(), dw),
            Tensor::from_parts(vec![g.cout], db),
        ])
    }
}

impl<T: Real> Tape<T> {
    /// 2-D cross-correlation (no kernel flip) plus a per-channel bias.
    ///
    /// `input` is `N×Cin×H×W`, `weight` is `Cout×Cin×k×k`, `bias` is `Cout`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: &ConvSpec) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (n, geometry) = geometry(x, w, b, spec)?;
        let out = conv2d_forward(n, geometry, x.data(), w.data(), b.data());
        Ok(self.record(
            out,
            Box::new(Conv2dRule {
                input,
                weight,
                bias,
                n,
                geometry,
            }),
        ))
    }
}
