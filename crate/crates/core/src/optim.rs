//! Adam updates and the early-stopping policy.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::unet::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added to `sqrt(v_hat)`, after the square root.
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    step: u64,
    m: ParamStore<T>,
    v: ParamStore<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |p: &ParamStore<T>| {
            let mut z = ParamStore::new();
            for (name, t) in p.iter() {
                z.insert(name, Tensor::zeros(t.shape()));
            }
            z
        };
        Self {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &ParamStore<T> {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamStore<T> {
        &self.v
    }

    /// One bias-corrected Adam update of `params` from `grads`.
    ///
    /// All shapes are checked before anything is mutated.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moment tensors",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((name, p), (gname, g)) in params.iter().zip(grads.iter()) {
            let m = self.m.get(name);
            if name != gname || m.map(Tensor::shape) != Some(p.shape()) || g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "adam: parameter {name} {:?} does not line up with gradient {gname} {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));

        for ((name, p), (_, g)) in params.iter_mut().zip(grads.iter()) {
            let m = self.m.get_mut(name).expect("checked above").data_mut();
            let v = self.v.get_mut(name).expect("checked above").data_mut();
            for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EarlyStopUpdate {
    /// The epoch set a new best validation loss; its parameters were snapshot.
    pub improved: bool,
    pub decision: Decision,
}

/// Stops training after `patience` consecutive epochs without a strict
/// decrease in validation loss, remembering the best parameters seen.
#[derive(Clone, Debug)]
pub struct EarlyStopping<T: Real = f32> {
    patience: usize,
    best_loss: f64,
    best_epoch: Option<usize>,
    since_improvement: usize,
    last_epoch: Option<usize>,
    best_params: Option<ParamStore<T>>,
}

impl<T: Real> EarlyStopping<T> {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: None,
            since_improvement: 0,
            last_epoch: None,
            best_params: None,
        }
    }

    pub fn patience(&self) -> usize {
        self.patience
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    /// Deep copy of the parameters at the best epoch so far.
    pub fn best_params(&self) -> Option<&ParamStore<T>> {
        self.best_params.as_ref()
    }

    pub fn into_best_params(self) -> Option<ParamStore<T>> {
        self.best_params
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64, params: &ParamStore<T>) -> Result<EarlyStopUpdate> {
        if self.last_epoch.is_some_and(|last| epoch <= last) {
            return Err(Error::Contract(format!(
                "early stopping saw epoch {epoch} after epoch {}",
                self.last_epoch.unwrap_or_default()
            )));
        }
        self.last_epoch = Some(epoch);

        if val_loss.is_nan() {
            log::warn!("epoch {epoch}: validation loss is NaN, counted as no improvement");
        }
        let improved = val_loss < self.best_loss;
        if improved {
            self.best_loss = val_loss;
            self.best_epoch = Some(epoch);
            self.since_improvement = 0;
            self.best_params = Some(params.clone());
        } else {
            self.since_improvement += 1;
        }
        let decision = if self.since_improvement >= self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        };
        Ok(EarlyStopUpdate { improved, decision })
    }
}
