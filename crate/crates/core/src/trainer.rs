//! Epoch loop, evaluation and inference.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::save_checkpoint;
use crate::data::{load_batch, load_image, plan_batches, scan_dataset, split_manifest, Batch, BatchOrder, Manifest};
use crate::error::{Error, Result};
use crate::kernels::stable_sigmoid;
use crate::metrics::{MetricTriple, PixelCounts, DEFAULT_IOU_EPS, DEFAULT_THRESHOLD};
use crate::optim::{AdamConfig, AdamState, Decision, EarlyStopping};
use crate::raster::write_gray8;
use crate::tensor::Tensor;
use crate::unet::{forward, init_params, BoundParams, ParamStore, UNetConfig};

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,train_iou,val_loss,val_acc,val_iou";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub train_batch: usize,
    pub val_batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of the dataset used for training.
    pub split: f64,
    pub seed: u64,
    /// Also fixes the input size through `model.img_size`.
    pub model: UNetConfig,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            train_batch: 32,
            val_batch: 24,
            max_epochs: 50,
            patience: 9,
            split: 0.8,
            seed: 0,
            model: UNetConfig::default(),
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.train_batch == 0 || self.val_batch == 0 {
            return Err(Error::Config("batch sizes must be ≥ 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be ≥ 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One row of the metrics history. `epoch` is 1-based.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub train_iou: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_iou: f64,
}

impl EpochMetrics {
    pub fn new(epoch: usize, train: MetricTriple, val: MetricTriple) -> Self {
        Self {
            epoch,
            train_loss: train.loss,
            train_acc: train.accuracy,
            train_iou: train.iou,
            val_loss: val.loss,
            val_acc: val.accuracy,
            val_iou: val.iou,
        }
    }

    /// CSV row; floats use the shortest representation that round-trips.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.train_loss, self.train_acc, self.train_iou, self.val_loss, self.val_acc, self.val_iou
        )
    }
}

/// Metrics CSV that is flushed to disk after every row.
pub struct MetricsLog {
    path: PathBuf,
    file: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            file: BufWriter::new(file),
        };
        log.write_line(METRICS_HEADER)?;
        Ok(log)
    }

    pub fn append(&mut self, row: &EpochMetrics) -> Result<()> {
        self.write_line(&row.csv_row())
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        let path = &self.path;
        writeln!(self.file, "{line}").map_err(|e| Error::io(path, e))?;
        self.file.flush().map_err(|e| Error::io(path, e))?;
        self.file.get_ref().sync_data().map_err(|e| Error::io(path, e))
    }
}

/// Source of per-epoch training and validation results for [`fit`].
pub trait EpochDriver {
    fn model_config(&self) -> &UNetConfig;
    fn params(&self) -> &ParamStore;
    /// Runs one epoch of updates; returns metrics of the pre-update forward passes.
    fn train_epoch(&mut self, epoch: usize) -> Result<MetricTriple>;
    fn validate(&mut self, epoch: usize) -> Result<MetricTriple>;
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub best_params: ParamStore,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochMetrics>,
}

/// Runs epochs until early stopping fires or `max_epochs` is reached.
///
/// `out_dir/metrics.csv` gains a row per epoch and `out_dir/best.ckpt` is
/// rewritten on every improvement of the validation loss.
pub fn fit<D: EpochDriver>(driver: &mut D, max_epochs: usize, patience: usize, out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let mut log = MetricsLog::create(&out_dir.join(METRICS_FILE))?;
    let mut stopper = EarlyStopping::new(patience);
    let mut history = Vec::new();

    for epoch in 1..=max_epochs {
        let train = driver.train_epoch(epoch)?;
        let val = driver.validate(epoch)?;
        let row = EpochMetrics::new(epoch, train, val);
        log.append(&row)?;
        history.push(row);
        log::info!(
            "epoch {epoch}: loss {:.4}/{:.4} acc {:.4}/{:.4} iou {:.4}/{:.4} (train/val)",
            row.train_loss,
            row.val_loss,
            row.train_acc,
            row.val_acc,
            row.train_iou,
            row.val_iou
        );

        let update = stopper.update(epoch, val.loss, driver.params())?;
        if update.improved {
            save_checkpoint(driver.params(), driver.model_config(), &ckpt)?;
        }
        if update.decision == Decision::Stop {
            log::info!(
                "no improvement for {patience} epochs, stopping after epoch {epoch}; best was epoch {}",
                stopper.best_epoch().unwrap_or_default()
            );
            break;
        }
    }

    let best_epoch = stopper.best_epoch();
    let best_params = match stopper.into_best_params() {
        Some(p) => p,
        None => {
            log::warn!("validation loss never improved; keeping the final parameters");
            save_checkpoint(driver.params(), driver.model_config(), &ckpt)?;
            driver.params().clone()
        }
    };
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        history,
    })
}

/// Accumulates batch metrics weighted by batch size.
#[derive(Default)]
struct Running {
    samples: usize,
    loss: f64,
    accuracy: f64,
    iou: f64,
}

impl Running {
    fn add(&mut self, n: usize, loss: f64, counts: &PixelCounts) {
        let w = n as f64;
        self.samples += n;
        self.loss += w * loss;
        self.accuracy += w * counts.accuracy();
        self.iou += w * counts.iou(DEFAULT_IOU_EPS);
    }

    fn mean(&self) -> MetricTriple {
        let n = self.samples as f64;
        MetricTriple {
            accuracy: self.accuracy / n,
            loss: self.loss / n,
            iou: self.iou / n,
        }
    }
}

struct BatchResult {
    loss: f64,
    counts: PixelCounts,
}

/// Forward pass and loss for one batch; leaves the graph on `tape` for backward.
fn forward_batch(
    tape: &mut Tape,
    params: &ParamStore,
    config: &UNetConfig,
    batch: &Batch,
) -> Result<(Var, BoundParams, BatchResult)> {
    tape.clear();
    let bound = params.bind(tape);
    let input = tape.leaf(batch.images.clone());
    let logits = forward(tape, &bound, config, input)?;
    let probs = tape.value(logits).map(stable_sigmoid);
    let counts = PixelCounts::tally(&probs, &batch.masks, DEFAULT_THRESHOLD)?;
    let loss = tape.bce_with_logits(logits, &batch.masks)?;
    let value = tape.value(loss).data()[0] as f64;
    Ok((loss, bound, BatchResult { loss: value, counts }))
}

/// Validation metrics of `params` over `manifest`, visited in order in
/// batches of `batch_size`. Nothing is mutated.
pub fn evaluate(params: &ParamStore, config: &UNetConfig, manifest: &Manifest, batch_size: usize) -> Result<MetricTriple> {
    if manifest.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty manifest".into()));
    }
    params.check_layout(config)?;
    let mut tape = Tape::new();
    let mut running = Running::default();
    for idx in plan_batches(manifest.len(), batch_size, BatchOrder::Sequential)? {
        let batch = load_batch(manifest, &idx, config.img_size)?;
        let (_, _, r) = forward_batch(&mut tape, params, config, &batch)?;
        running.add(batch.len(), r.loss, &r.counts);
    }
    Ok(running.mean())
}

/// Trains a U-Net on an image/mask split.
pub struct UNetDriver {
    config: UNetConfig,
    params: ParamStore,
    adam: AdamState,
    train: Manifest,
    val: Manifest,
    train_batch: usize,
    val_batch: usize,
    seed: u64,
    tape: Tape,
}

impl UNetDriver {
    pub fn new(params: ParamStore, train: Manifest, val: Manifest, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config.model)?;
        let adam = AdamState::new(
            &params,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        Ok(Self {
            config: config.model,
            params,
            adam,
            train,
            val,
            train_batch: config.train_batch,
            val_batch: config.val_batch,
            seed: config.seed,
            tape: Tape::new(),
        })
    }
}

impl EpochDriver for UNetDriver {
    fn model_config(&self) -> &UNetConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<MetricTriple> {
        let order = BatchOrder::Shuffled { seed: self.seed, epoch };
        let mut running = Running::default();
        for (b, idx) in plan_batches(self.train.len(), self.train_batch, order)?.iter().enumerate() {
            let batch = load_batch(&self.train, idx, self.config.img_size)?;
            let (loss, bound, r) = forward_batch(&mut self.tape, &self.params, &self.config, &batch)?;
            if !r.loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b + 1,
                    value: r.loss,
                });
            }
            running.add(batch.len(), r.loss, &r.counts);
            self.tape.backward(loss)?;
            let grads = bound.grads(&mut self.tape);
            self.adam.step(&mut self.params, &grads)?;
        }
        self.tape.clear();
        Ok(running.mean())
    }

    fn validate(&mut self, _epoch: usize) -> Result<MetricTriple> {
        evaluate(&self.params, &self.config, &self.val, self.val_batch)
    }
}

/// Scans, splits, initializes and trains; writes `best.ckpt` and
/// `metrics.csv` under `config.out_dir`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let scan = scan_dataset(&config.data_root)?;
    let (train, val) = split_manifest(&scan.manifest, config.split, config.seed)?;
    log::info!(
        "{} pairs: {} train, {} validation",
        scan.manifest.len(),
        train.len(),
        val.len()
    );
    let params = init_params(&config.model, config.seed)?;
    let mut driver = UNetDriver::new(params, train, val, config)?;
    fit(&mut driver, config.max_epochs, config.patience, &config.out_dir)
}

/// Thresholded mask of one image at `img_size × img_size`, values 0 or 1.
pub fn predict_mask(params: &ParamStore, config: &UNetConfig, image: &Path) -> Result<Tensor> {
    params.check_layout(config)?;
    let size = config.img_size;
    let input = load_image(image, size)?.reshape(&[1, 3, size, size])?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.leaf(input);
    let logits = forward(&mut tape, &bound, config, x)?;
    let threshold = DEFAULT_THRESHOLD as f32;
    tape.value(logits)
        .map(|z| if stable_sigmoid(z) >= threshold { 1.0 } else { 0.0 })
        .reshape(&[size, size])
}

/// Writes the predicted mask of `image` to `out` as 8-bit {0, 255}.
pub fn predict(params: &ParamStore, config: &UNetConfig, image: &Path, out: &Path) -> Result<()> {
    let mask = predict_mask(params, config, image)?;
    let pixels: Vec<u8> = mask.data().iter().map(|&v| if v > 0.0 { 255 } else { 0 }).collect();
    write_gray8(out, config.img_size, config.img_size, &pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        config: UNetConfig,
        params: ParamStore,
        losses: Vec<f64>,
    }

    impl Scripted {
        fn new(losses: Vec<f64>) -> Self {
            let config = UNetConfig {
                depth: 1,
                base_width: 1,
                img_size: 2,
                ..UNetConfig::default()
            };
            let params = init_params(&config, 0).unwrap();
            Self { config, params, losses }
        }
    }

    impl EpochDriver for Scripted {
        fn model_config(&self) -> &UNetConfig {
            &self.config
        }

        fn params(&self) -> &ParamStore {
            &self.params
        }

        fn train_epoch(&mut self, epoch: usize) -> Result<MetricTriple> {
            self.params.get_mut("head.b").unwrap().data_mut()[0] = epoch as f32;
            Ok(MetricTriple { accuracy: 0.5, loss: 1.0, iou: 0.5 })
        }

        fn validate(&mut self, epoch: usize) -> Result<MetricTriple> {
            Ok(MetricTriple { accuracy: 0.5, loss: self.losses[epoch - 1], iou: 0.5 })
        }
    }

    #[test]
    fn monotone_losses_run_every_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = Scripted::new((0..50).map(|e| 1.0 / (e + 1) as f64).collect());
        let out = fit(&mut d, 50, 9, dir.path()).unwrap();
        assert_eq!(out.history.len(), 50);
        assert_eq!(out.best_epoch, Some(50));
    }

    #[test]
    fn plateau_after_26_stops_at_35() {
        let dir = tempfile::tempdir().unwrap();
        let losses = (1..=50).map(|e| if e <= 26 { 1.0 / e as f64 } else { 0.5 }).collect();
        let mut d = Scripted::new(losses);
        let out = fit(&mut d, 50, 9, dir.path()).unwrap();
        assert_eq!(out.history.len(), 35);
        assert_eq!(out.best_epoch, Some(26));
        assert_eq!(out.best_params.get("head.b").unwrap().data()[0], 26.0);
        let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 36);
        assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
        let (saved, _) = crate::checkpoint::load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(saved.get("head.b").unwrap().data()[0], 26.0);
    }

    #[test]
    fn csv_rows_round_trip_floats() {
        let m = EpochMetrics {
            epoch: 3,
            train_loss: 0.1 + 0.2,
            train_acc: 1.0,
            train_iou: 1.0 / 3.0,
            val_loss: 2.5e-9,
            val_acc: 0.0,
            val_iou: 0.75,
        };
        let row = m.csv_row();
        let fields: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields[1], 0.1 + 0.2);
        assert_eq!(fields[3], 1.0 / 3.0);
        assert_eq!(fields[4], 2.5e-9);
    }

    #[test]
    fn config_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.train_batch, c.val_batch, c.max_epochs, c.patience), (0.001, 32, 24, 50, 9));
        assert_eq!(c.split, 0.8);
        assert_eq!(c.model.img_size, 256);
        assert!(TrainConfig { max_epochs: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..c }.validate().is_err());
    }
}
