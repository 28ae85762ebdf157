pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod ndwi;
pub mod optim;
pub mod plot;
pub mod raster;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod unet;

pub use autodiff::{grad_check, BackwardReport, BackwardRule, Tape, Values, Var};
pub use error::{Error, Result};
pub use kernels::{ConvSpec, Padding};
pub use tensor::{Real, Tensor};
