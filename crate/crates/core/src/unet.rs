//! The U-Net encoder–decoder: parameter layout, initialization and forward pass.
//!
//! Encoder stage `i` runs two same-padded 3×3 convolutions with
//! `base_width·2^i` channels, keeps the result as a skip connection and max
//! pools. The bottleneck runs two convolutions at `base_width·2^depth`.
//! Decoder stages walk back up: a 2×2 stride-2 transposed convolution halves
//! the channels, the matching skip is concatenated, and two convolutions
//! follow. A 1×1 head produces one logit map per output channel. There is no
//! fully-connected layer anywhere.

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::rng::{hash64, SplitMix64};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of pooling stages.
    pub depth: usize,
    /// Channels of the first encoder stage.
    pub base_width: usize,
    /// Square training input extent.
    pub img_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 1,
            depth: 4,
            base_width: 64,
            img_size: 256,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be ≥ 1".into()));
        }
        if self.depth == 0 || self.base_width == 0 {
            return Err(Error::Config("depth and base_width must be ≥ 1".into()));
        }
        if self.depth >= 31 {
            return Err(Error::Config(format!("depth {} is absurd", self.depth)));
        }
        self.base_width
            .checked_mul(1 << self.depth)
            .ok_or_else(|| Error::Config("channel schedule overflows".into()))?;
        let step = self.spatial_multiple();
        if self.img_size == 0 || !self.img_size.is_multiple_of(step) {
            return Err(Error::Config(format!(
                "img_size {} is not a positive multiple of 2^depth = {step}",
                self.img_size
            )));
        }
        Ok(())
    }

    /// Every spatial extent fed to the network must be a multiple of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Channels at encoder/decoder stage `stage` (stage `depth` is the bottleneck).
    pub fn width_at(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Canonical parameter names and shapes, sorted by name.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>)>, prefix: String, cin: usize, cout: usize, k: usize| {
            out.push((format!("{prefix}.w"), vec![cout, cin, k, k]));
            out.push((format!("{prefix}.b"), vec![cout]));
        };
        let mut cin = self.in_channels;
        for i in 0..self.depth {
            let w = self.width_at(i);
            conv(&mut out, format!("enc{i}.conv0"), cin, w, 3);
            conv(&mut out, format!("enc{i}.conv1"), w, w, 3);
            cin = w;
        }
        let wb = self.width_at(self.depth);
        conv(&mut out, "bottleneck.conv0".into(), cin, wb, 3);
        conv(&mut out, "bottleneck.conv1".into(), wb, wb, 3);
        for i in (0..self.depth).rev() {
            let w = self.width_at(i);
            out.push((format!("dec{i}.up.w"), vec![2 * w, w, 2, 2]));
            conv(&mut out, format!("dec{i}.conv0"), 2 * w, w, 3);
            conv(&mut out, format!("dec{i}.conv1"), w, w, 3);
        }
        conv(&mut out, "head".into(), self.base_width, self.out_channels, 1);
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// Named trainable tensors, iterated in lexicographic name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Real = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks names and shapes against the layout a config implies.
    pub fn check_layout(&self, config: &UNetConfig) -> Result<()> {
        let expected = config.param_shapes();
        if expected.len() != self.len() {
            return Err(Error::Integrity(format!(
                "config implies {} tensors, store has {}",
                expected.len(),
                self.len()
            )));
        }
        for ((name, shape), (have_name, have)) in expected.iter().zip(self.iter()) {
            if name != have_name || shape.as_slice() != have.shape() {
                return Err(Error::Integrity(format!(
                    "expected {name} {shape:?}, found {have_name} {:?}",
                    have.shape()
                )));
            }
        }
        Ok(())
    }

    /// Places every tensor on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Tape handles of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Routes `name` to another tape variable, e.g. to differentiate
    /// with respect to a single parameter.
    pub fn substitute(&mut self, name: &str, var: Var) -> Result<()> {
        match self.vars.get_mut(name) {
            Some(slot) => {
                *slot = var;
                Ok(())
            }
            None => Err(Error::Config(format!("missing parameter {name}"))),
        }
    }

    /// Collects the gradients of the last backward sweep, keyed like the store.
    pub fn grads<T: Real>(&self, tape: &mut Tape<T>) -> ParamStore<T> {
        ParamStore {
            tensors: self
                .vars
                .iter()
                .map(|(k, &v)| (k.clone(), tape.take_grad(v)))
                .collect(),
        }
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
///
/// Each tensor draws from its own SplitMix64 stream seeded with
/// `fnv1a64(name) ^ seed`, in row-major order, so the result does not depend
/// on construction order. For the 2×2 stride-2 up-convolutions every output
/// pixel sees exactly one tap per input channel, so their fan-in is `Cin`.
pub fn init_params<T: Real>(config: &UNetConfig, seed: u64) -> Result<ParamStore<T>> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (name, shape) in config.param_shapes() {
        let tensor = if name.ends_with(".b") {
            Tensor::zeros(&shape)
        } else {
            let fan_in = if name.ends_with(".up.w") {
                shape[0]
            } else {
                shape[1] * shape[2] * shape[3]
            };
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = SplitMix64::new(hash64(seed, name.as_bytes()));
            Tensor::from_fn(&shape, |_| T::lit(std * rng.next_normal()))?
        };
        store.insert(name, tensor);
    }
    Ok(store)
}

fn conv_relu<T: Real>(
    tape: &mut Tape<T>,
    params: &BoundParams,
    x: Var,
    prefix: &str,
    cin: usize,
    cout: usize,
) -> Result<Var> {
    let w = params.get(&format!("{prefix}.w"))?;
    let b = params.get(&format!("{prefix}.b"))?;
    let y = tape.conv2d(x, w, b, &ConvSpec::same(cin, cout, 3))?;
    Ok(tape.relu(y))
}

/// Runs the network on an `N×Cin×H×W` batch and returns `N×Cout×H×W` logits.
///
/// `H` and `W` must be positive multiples of `2^depth`.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    params: &BoundParams,
    config: &UNetConfig,
    input: Var,
) -> Result<Var> {
    let [_, c, h, w] = tape.value(input).dims4()?;
    if c != config.in_channels {
        return Err(Error::Shape(format!(
            "model expects {} input channels, got {c}",
            config.in_channels
        )));
    }
    let step = config.spatial_multiple();
    if h % step != 0 || w % step != 0 {
        return Err(Error::Shape(format!(
            "input {h}×{w} is not divisible by 2^depth = {step}"
        )));
    }

    let mut skips = Vec::with_capacity(config.depth);
    let mut x = input;
    let mut cin = config.in_channels;
    for i in 0..config.depth {
        let width = config.width_at(i);
        x = conv_relu(tape, params, x, &format!("enc{i}.conv0"), cin, width)?;
        x = conv_relu(tape, params, x, &format!("enc{i}.conv1"), width, width)?;
        skips.push(x);
        x = tape.maxpool2d(x)?;
        cin = width;
    }

    let wb = config.width_at(config.depth);
    x = conv_relu(tape, params, x, "bottleneck.conv0", cin, wb)?;
    x = conv_relu(tape, params, x, "bottleneck.conv1", wb, wb)?;

    for i in (0..config.depth).rev() {
        let width = config.width_at(i);
        let up = params.get(&format!("dec{i}.up.w"))?;
        x = tape.conv_transpose2d(x, up)?;
        x = tape.concat_channels(x, skips[i])?;
        x = conv_relu(tape, params, x, &format!("dec{i}.conv0"), 2 * width, width)?;
        x = conv_relu(tape, params, x, &format!("dec{i}.conv1"), width, width)?;
    }

    let hw = params.get("head.w")?;
    let hb = params.get("head.b")?;
    tape.conv2d(x, hw, hb, &ConvSpec::same(config.base_width, config.out_channels, 1))
}
