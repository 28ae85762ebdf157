use crate::autodiff::{BackwardRule, Tape, Values, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Logistic function without overflow for large `|x|`.
pub fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

struct ReluRule {
    input: Var,
}

impl<T: Real> BackwardRule<T> for ReluRule {
    fn op_name(&self) -> &'static str {
        "relu"
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
        // Subgradient 0 at exactly 0.
        let dx = values
            .get(self.input)
            .zip_map(grad, |x, g| if x > T::zero() { g } else { T::zero() })?;
        Ok(vec![dx])
    }
}

struct SigmoidRule {
    input: Var,
}

impl<T: Real> BackwardRule<T> for SigmoidRule {
    fn op_name(&self) -> &'static str {
        "sigmoid"
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(
        &self,
        _values: &Values<'_, T>,
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        Ok(vec![output.zip_map(grad, |s, g| g * s * (T::one() - s))?])
    }
}

impl<T: Real> Tape<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.record(y, Box::new(ReluRule { input: x }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(stable_sigmoid);
        self.record(y, Box::new(SigmoidRule { input: x }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(data: &[f64]) -> Tensor<f64> {
        Tensor::new(&[data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn relu_values_and_slopes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(vec1(&[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_sum_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(vec1(&[-1.0, 2.0]));
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_is_idempotent() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(vec1(&[-3.0, -0.5, 0.0, 0.25, 4.0]));
        let once = tape.relu(x);
        let twice = tape.relu(once);
        assert_eq!(tape.value(once), tape.value(twice));
    }

    #[test]
    fn sigmoid_special_points() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(vec1(&[0.0, 40.0, -40.0, 1000.0, -1000.0]));
        let y = tape.sigmoid(x);
        let v = tape.value(y).data().to_vec();
        assert_eq!(v[0], 0.5);
        assert!((1.0 - v[1]).abs() < 1e-15);
        assert!(v[2] > 0.0 && v[2] < 1e-17);
        assert_eq!(v[3], 1.0);
        assert_eq!(v[4], 0.0);
        assert!(tape.value(y).all_finite());
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data()[0], 0.25);
    }

    #[test]
    fn sigmoid_f32_saturates_without_overflow() {
        assert_eq!(stable_sigmoid(40.0f32), 1.0);
        assert_eq!(stable_sigmoid(-200.0f32), 0.0);
    }
}
