//! Binary cross-entropy loss and the monitored segmentation metrics.

use crate::autodiff::{BackwardRule, Tape, Values, Var};
use crate::error::{Error, Result};
use crate::kernels::stable_sigmoid;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_IOU_EPS: f64 = 1e-6;

/// Accuracy, loss and IoU of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricTriple {
    pub accuracy: f64,
    pub loss: f64,
    pub iou: f64,
}

fn ensure_binary<T: Real>(targets: &Tensor<T>) -> Result<()> {
    match targets
        .data()
        .iter()
        .position(|&y| y != T::zero() && y != T::one())
    {
        Some(i) => Err(Error::Contract(format!(
            "target element {i} is {}, expected 0 or 1",
            targets.data()[i]
        ))),
        None => Ok(()),
    }
}

struct BceRule<T: Real> {
    logits: Var,
    targets: Tensor<T>,
}

impl<T: Real> BackwardRule<T> for BceRule<T> {
    fn op_name(&self) -> &'static str {
        "bce_with_logits"
    }

    fn parents(&self) -> Vec<Var> {
        vec![self.logits]
    }

    fn backward(
        &self,
        values: &Values<'_, T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let z = values.get(self.logits);
        let scale = grad.data()[0] / T::lit(z.numel() as f64);
        Ok(vec![z.zip_map(&self.targets, |z, y| (stable_sigmoid(z) - y) * scale)?])
    }
}

/// Per-element loss `max(z, 0) - z·y + ln(1 + e^{-|z|})`.
pub fn bce_term<T: Real>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

impl<T: Real> Tape<T> {
    /// Mean binary cross-entropy between `sigmoid(logits)` and binary targets,
    /// evaluated in the overflow-safe logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::Shape(format!(
                "logits {:?} and targets {:?} differ",
                z.shape(),
                targets.shape()
            )));
        }
        ensure_binary(targets)?;
        let total: f64 = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| bce_term(z, y).as_f64())
            .sum();
        let mean = Tensor::scalar(T::lit(total / z.numel() as f64));
        Ok(self.record(
            mean,
            Box::new(BceRule {
                logits,
                targets: targets.clone(),
            }),
        ))
    }
}

/// Confusion counts of thresholded predictions against binary targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PixelCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl PixelCounts {
    /// Predicted positive where `prob >= threshold`; target positive where `target == 1`.
    pub fn tally<T: Real>(probs: &Tensor<T>, targets: &Tensor<T>, threshold: f64) -> Result<Self> {
        if probs.shape() != targets.shape() {
            return Err(Error::Shape(format!(
                "predictions {:?} and targets {:?} differ",
                probs.shape(),
                targets.shape()
            )));
        }
        let t = T::lit(threshold);
        let mut c = Self::default();
        for (&p, &y) in probs.data().iter().zip(targets.data()) {
            match (p >= t, y == T::one()) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_pos += 1,
                (false, true) => c.false_neg += 1,
                (false, false) => c.true_neg += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_pos + self.true_neg) as f64 / self.total() as f64
    }

    /// `(|P∩T| + eps) / (|P∪T| + eps)`; two empty sets score 1.
    pub fn iou(&self, eps: f64) -> f64 {
        let inter = self.true_pos as f64;
        let union = (self.true_pos + self.false_pos + self.false_neg) as f64;
        (inter + eps) / (union + eps)
    }
}

/// Fraction of elements whose thresholded prediction matches the target.
pub fn pixel_accuracy<T: Real>(probs: &Tensor<T>, targets: &Tensor<T>, threshold: f64) -> Result<f64> {
    Ok(PixelCounts::tally(probs, targets, threshold)?.accuracy())
}

/// Hard intersection-over-union of thresholded predictions and targets.
pub fn iou<T: Real>(probs: &Tensor<T>, targets: &Tensor<T>, threshold: f64, eps: f64) -> Result<f64> {
    Ok(PixelCounts::tally(probs, targets, threshold)?.iou(eps))
}
