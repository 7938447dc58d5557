//! Float training of the detector with mini-batch SGD + momentum and
//! per-batch augmentation.

mod augment;
mod backprop;

use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentationConfig, ShiftDirection};
pub use backprop::{loss, loss_and_gradient, softmax_cross_entropy};

use crate::data::{LabeledDataset, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::nn::{argmax, infer_float, ModelConfig, Tensor, WeightSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 0.8,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.lr_decay > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parse(format!("invalid training config {self:?}")))
        }
    }
}

/// One row of the accuracy trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Accuracy on the augmented batches seen during the epoch.
    pub train_acc: f64,
    /// Accuracy on the evaluation set, if one was supplied.
    pub test_acc: Option<f64>,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: WeightSet,
    pub trace: Vec<EpochStats>,
}

pub fn image_tensor(pixels: &[u8]) -> Tensor {
    Tensor::from_pixels(IMAGE_SIDE, IMAGE_SIDE, pixels).expect("28x28 image")
}

/// Trains from He-initialised weights.
pub fn train(
    model: &ModelConfig,
    data: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    aug: &AugmentationConfig,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = WeightSet::he_init(model, &mut rng);
    train_from(model, weights, data, eval, aug, cfg, &mut rng, on_epoch)
}

#[allow(clippy::too_many_arguments)]
fn train_from(
    model: &ModelConfig,
    mut weights: WeightSet,
    data: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    aug: &AugmentationConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    aug.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.output_len()?;
    if data.num_classes() > classes {
        return Err(Error::shape(format!(
            "labels reach class {} but the model has {classes} outputs",
            data.num_classes() - 1
        )));
    }
    let mut velocity = WeightSet::zeros(model);
    let mut grads = WeightSet::zeros(model);
    let mut lr = cfg.learning_rate;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.layers.iter_mut().flatten().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &idx in batch {
                let img = augment(&data.images[idx], aug, rng.gen());
                let label = data.labels[idx] as usize;
                let input = image_tensor(&img);
                let t = backprop::forward(model, &weights, &input)?;
                if argmax(t.logits()) == label {
                    correct += 1;
                }
                let (l, g) = softmax_cross_entropy(t.logits(), label);
                batch_loss += l;
                backprop::backward(model, &weights, &t, g, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            let scale = lr / batch.len() as f64;
            for ((w, v), g) in weights
                .layers
                .iter_mut()
                .flatten()
                .zip(velocity.layers.iter_mut().flatten())
                .zip(grads.layers.iter().flatten())
            {
                *v = cfg.momentum * *v - scale * g;
                *w += *v;
            }
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            train_acc: correct as f64 / data.len() as f64,
            test_acc: eval.map(|e| accuracy(model, &weights, e)).transpose()?,
            mean_loss: loss_sum / data.len() as f64,
        };
        on_epoch(&stats);
        trace.push(stats);
        lr *= cfg.lr_decay;
    }
    Ok(TrainOutcome { weights, trace })
}

/// Fraction of images whose float prediction equals the label.
pub fn accuracy(model: &ModelConfig, weights: &WeightSet, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        if infer_float(model, weights, &image_tensor(img))?.class == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean cross-entropy over a dataset (no augmentation).
pub fn mean_loss(model: &ModelConfig, weights: &WeightSet, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        total += loss(model, weights, &image_tensor(img), label as usize)?;
    }
    Ok(total / data.len() as f64)
}

/// Seed used for image `index` when a whole split is augmented once.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Applies one fixed augmentation draw to every image of a split.
pub fn augment_dataset(data: &LabeledDataset, aug: &AugmentationConfig, seed: u64) -> LabeledDataset {
    LabeledDataset {
        images: data
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| augment(img, aug, image_seed(seed, i)))
            .collect(),
        labels: data.labels.clone(),
    }
}

/// Writes the accuracy trace as `epoch,train_acc,test_acc`.
pub fn write_trace_csv<W: Write>(trace: &[EpochStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_acc", "test_acc"])?;
    for s in trace {
        w.write_record([
            s.epoch.to_string(),
            format!("{:.6}", s.train_acc),
            s.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

/// Worst relative error between back-propagated gradients and central
/// finite differences, over a random subset of at least `min(100, total)`
/// weights.
pub fn grad_check(
    model: &ModelConfig,
    weights: &WeightSet,
    image: &Tensor,
    label: usize,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Parse(format!(
            "finite-difference step {epsilon} outside [1e-6, 1e-3]"
        )));
    }
    let mut analytic = WeightSet::zeros(model);
    loss_and_gradient(model, weights, image, label, &mut analytic)?;

    let coords: Vec<(usize, usize)> = weights
        .layers
        .iter()
        .enumerate()
        .flat_map(|(k, l)| (0..l.len()).map(move |i| (k, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if coords.len() <= 100 {
        (0..coords.len()).collect()
    } else {
        index::sample(&mut rng, coords.len(), 100.max(coords.len() / 10).min(coords.len())).into_vec()
    };

    let mut probe = weights.clone();
    let mut worst = 0.0f64;
    for p in picks {
        let (k, i) = coords[p];
        let orig = probe.layers[k][i];
        probe.layers[k][i] = orig + epsilon;
        let up = loss(model, &probe, image, label)?;
        probe.layers[k][i] = orig - epsilon;
        let down = loss(model, &probe, image, label)?;
        probe.layers[k][i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let exact = analytic.layers[k][i];
        let denom = exact.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((exact - numeric).abs() / denom);
    }
    Ok(worst)
}
