use crate::autodiff::{BackwardRule, Tape, Values, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

struct ConcatRule {
    a: Var,
    b: Var,
}

impl<T: Real> BackwardRule<T> for ConcatRule {
    fn op_name(&self) -> &'static str {
        "concat_channels"
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(
        &self,
        values: &Values<'_, T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let va = values.get(self.a);
        let vb = values.get(self.b);
        let la = va.numel() / va.shape()[0];
        let lb = vb.numel() / vb.shape()[0];
        let mut ga = Vec::with_capacity(va.numel());
        let mut gb = Vec::with_capacity(vb.numel());
        for sample in grad.data().chunks(la + lb) {
            ga.extend_from_slice(&sample[..la]);
            gb.extend_from_slice(&sample[la..]);
        }
        Ok(vec![
            Tensor::from_parts(va.shape().to_vec(), ga),
            Tensor::from_parts(vb.shape().to_vec(), gb),
        ])
    }
}

impl<T: Real> Tape<T> {
    /// Joins two `N×C×H×W` tensors along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let [na, ca, ha, wa] = va.dims4()?;
        let [nb, cb, hb, wb] = vb.dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::Shape(format!(
                "concat_channels: {:?} and {:?} differ outside the channel axis",
                va.shape(),
                vb.shape()
            )));
        }
        let la = ca * ha * wa;
        let lb = cb * hb * wb;
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        for (sa, sb) in va.data().chunks(la).zip(vb.data().chunks(lb)) {
            data.extend_from_slice(sa);
            data.extend_from_slice(sb);
        }
        let value = Tensor::from_parts(vec![na, ca + cb, ha, wa], data);
        Ok(self.record(value, Box::new(ConcatRule { a, b })))
    }
}
