use rayon::prelude::*;

use crate::autodiff::{BackwardRule, Tape, Values, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

struct MaxPoolRule {
    input: Var,
    /// Flat input index of the winning element for each output element.
    argmax: Vec<usize>,
}

impl<T: Real> BackwardRule<T> for MaxPoolRule {
    fn op_name(&self) -> &'static str {
        "maxpool2d"
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(
        &self,
        values: &Values<'_, T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let mut dx = Tensor::zeros(values.get(self.input).shape());
        let d = dx.data_mut();
        // Windows do not overlap, so each input slot receives at most one value.
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            d[src] = d[src] + g;
        }
        Ok(vec![dx])
    }
}

impl<T: Real> Tape<T> {
    /// Non-overlapping 2×2 max pooling. Ties go to the first element in
    /// row-major scan order of the window.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "maxpool2d needs even spatial extents, got {h}×{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let planes = n * c;
        let mut out = vec![T::zero(); planes * ho * wo];
        let mut argmax = vec![0usize; planes * ho * wo];
        out.par_chunks_mut(ho * wo)
            .zip(argmax.par_chunks_mut(ho * wo))
            .enumerate()
            .for_each(|(p, (y, idx))| {
                let base = p * h * w;
                let plane = &x.data()[base..base + h * w];
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = (2 * oh) * w + 2 * ow;
                        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                            let cand = (2 * oh + di) * w + 2 * ow + dj;
                            if plane[cand] > plane[best] {
                                best = cand;
                            }
                        }
                        y[oh * wo + ow] = plane[best];
                        idx[oh * wo + ow] = base + best;
                    }
                }
            });
        let value = Tensor::from_parts(vec![n, c, ho, wo], out);
        Ok(self.record(value, Box::new(MaxPoolRule { input, argmax })))
    }
}
