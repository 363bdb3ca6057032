//! A small convolutional binary classifier exposing the two hooks the
//! pipeline needs: final conv feature maps and gradients with respect to
//! inputs and feature maps.

pub(crate) mod net;

use ndarray::{Array1, Array3, Dimension};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, Image, LabeledImageSet};
use crate::error::{Error, Result};

use net::{Gradients, Network};

/// One conv block: conv (same padding) + ReLU + 2x2 max-pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub conv_blocks: Vec<ConvBlockConfig>,
    pub dense_widths: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_blocks: vec![
                ConvBlockConfig {
                    filters: 16,
                    kernel: 3,
                    stride: 1,
                },
                ConvBlockConfig {
                    filters: 32,
                    kernel: 3,
                    stride: 1,
                },
            ],
            dense_widths: vec![64],
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.conv_blocks.is_empty() {
            return Err(Error::Config("model needs at least one conv block".into()));
        }
        for b in &self.conv_blocks {
            if b.kernel % 2 == 0 || b.kernel == 0 || b.filters == 0 || b.stride == 0 {
                return Err(Error::Config(format!(
                    "bad conv block: {} filters, kernel {}, stride {}",
                    b.filters, b.kernel, b.stride
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// A trained (or seed-initialized) classifier. Class order is fixed:
/// source = index 0, target = index 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    config: ModelConfig,
    net: Network,
    /// Mean training loss per epoch, empty for an untrained model.
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: ClassLabel,
    pub probabilities: [f64; 2],
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    model: TrainedModel,
}

impl TrainedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> (usize, usize, usize) {
        self.net.input_dim
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.dim() != self.net.input_dim {
            return Err(Error::Validation(format!(
                "image dims {:?} do not match model input {:?}",
                image.dim(),
                self.net.input_dim
            )));
        }
        Ok(())
    }

    /// Builds a model around hand-set parameters. Test fixture hook.
    #[cfg(test)]
    pub(crate) fn from_network(config: ModelConfig, net: Network) -> Self {
        Self {
            config,
            net,
            epoch_losses: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Builds an initialized-but-untrained model for an input shape.
    pub fn initialized(cfg: &ModelConfig, input_dim: (usize, usize, usize)) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let conv_specs: Vec<(usize, usize, usize)> = cfg
            .conv_blocks
            .iter()
            .map(|b| (b.filters, b.kernel, b.stride))
            .collect();
        let net = Network::init(input_dim, &conv_specs, &cfg.dense_widths, &mut rng);
        Ok(Self {
            config: cfg.clone(),
            net,
            epoch_losses: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Serializes to a versioned self-describing checkpoint file.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(
            std::io::BufWriter::new(file),
            &CheckpointFile {
                format_version: CHECKPOINT_VERSION,
                model: self.clone(),
            },
        )?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: CheckpointFile = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt.model)
    }

    /// Test hook: recompute the pre-softmax class score from substituted
    /// final-conv activations.
    pub fn class_score_from_activations(&self, acts: &Array3<f64>, class_index: usize) -> f64 {
        self.net.class_score_from_activations(acts, class_index)
    }

    /// Cross-entropy loss at (image, label).
    pub fn loss(&self, image: &Image, label: ClassLabel) -> Result<f64> {
        self.check_image(image)?;
        let fwd = self.net.forward(image.pixels());
        Ok(Network::loss_from_forward(&fwd, label.index()))
    }
}

struct AdamState {
    m: Gradients,
    v: Gradients,
    t: usize,
}

fn adam_update_tensor<D: Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    t: usize,
) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let bc1 = 1.0 - B1.powi(t as i32);
    let bc2 = 1.0 - B2.powi(t as i32);
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + EPS);
        });
}

fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t;
    for i in 0..net.conv.len() {
        adam_update_tensor(
            &mut net.conv[i].w,
            &grads.conv_w[i],
            &mut state.m.conv_w[i],
            &mut state.v.conv_w[i],
            lr,
            t,
        );
        adam_update_tensor(
            &mut net.conv[i].b,
            &grads.conv_b[i],
            &mut state.m.conv_b[i],
            &mut state.v.conv_b[i],
            lr,
            t,
        );
    }
    for i in 0..net.dense.len() {
        adam_update_tensor(
            &mut net.dense[i].w,
            &grads.dense_w[i],
            &mut state.m.dense_w[i],
            &mut state.v.dense_w[i],
            lr,
            t,
        );
        adam_update_tensor(
            &mut net.dense[i].b,
            &grads.dense_b[i],
            &mut state.m.dense_b[i],
            &mut state.v.dense_b[i],
            lr,
            t,
        );
    }
}

/// Trains a model with Adam on 2-way softmax cross-entropy.
pub fn train(train_set: &LabeledImageSet, cfg: &ModelConfig) -> Result<TrainedModel> {
    if train_set.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    let input_dim = train_set.images[0].dim();
    for img in &train_set.images {
        if img.dim() != input_dim {
            return Err(Error::Validation("inconsistent image dims in train set".into()));
        }
    }
    let mut model = TrainedModel::initialized(cfg, input_dim)?;
    if cfg.epochs == 0 {
        return Ok(model);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut state = AdamState {
        m: Gradients::zeros_like(&model.net),
        v: Gradients::zeros_like(&model.net),
        t: 0,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_image: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|&i| {
                    let fwd = model.net.forward(train_set.images[i].pixels());
                    let label = train_set.labels[i].index();
                    let loss = Network::loss_from_forward(&fwd, label);
                    let dlogits = Network::loss_logit_grad(&fwd, label);
                    let (grads, _) = model.net.backward(&fwd, &dlogits);
                    (loss, grads)
                })
                .collect();
            let mut batch_grads = Gradients::zeros_like(&model.net);
            for (loss, grads) in &per_image {
                epoch_loss += loss;
                batch_grads.add(grads);
            }
            batch_grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut model.net, &batch_grads, &mut state, cfg.learning_rate);
        }
        let mean_loss = epoch_loss / train_set.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!("non-finite mean loss {mean_loss}"),
            });
        }
        model.epoch_losses.push(mean_loss);
    }
    if let (Some(&first), Some(&last)) = (model.epoch_losses.first(), model.epoch_losses.last()) {
        if last >= first && cfg.epochs > 1 {
            model.warnings.push(format!(
                "training loss did not decrease: first epoch {first:.6}, last epoch {last:.6}"
            ));
        }
    }
    Ok(model)
}

/// Deterministic forward pass; probabilities normalized.
pub fn predict(model: &TrainedModel, image: &Image) -> Result<Prediction> {
    model.check_image(image)?;
    let fwd = model.net.forward(image.pixels());
    let probs = [fwd.probs[0], fwd.probs[1]];
    let label = if probs[0] >= probs[1] {
        ClassLabel::Source
    } else {
        ClassLabel::Target
    };
    Ok(Prediction {
        label,
        probabilities: probs,
    })
}

/// Fraction of correct predictions over a set.
pub fn accuracy(model: &TrainedModel, set: &LabeledImageSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Validation("accuracy over empty set".into()));
    }
    let correct: usize = set
        .images
        .par_iter()
        .zip(set.labels.par_iter())
        .map(|(img, &label)| {
            predict(model, img)
                .map(|p| usize::from(p.label == label))
                .unwrap_or(0)
        })
        .sum();
    Ok(correct as f64 / set.len() as f64)
}

/// Post-ReLU feature maps of the last conv layer (pre-pool), shape h×w×K.
pub fn final_conv_activations(model: &TrainedModel, image: &Image) -> Result<Array3<f64>> {
    model.check_image(image)?;
    let fwd = model.net.forward(image.pixels());
    Ok(fwd.conv_a.last().expect(">=1 conv block").clone())
}

/// Gradient of the cross-entropy loss at (image, label) with respect to the
/// input pixels.
pub fn loss_gradient_wrt_input(
    model: &TrainedModel,
    image: &Image,
    label: ClassLabel,
) -> Result<Array3<f64>> {
    model.check_image(image)?;
    let fwd = model.net.forward(image.pixels());
    let dlogits = Network::loss_logit_grad(&fwd, label.index());
    let (_, dinput) = model.net.backward(&fwd, &dlogits);
    if dinput.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite input gradient".into()));
    }
    Ok(dinput)
}

/// Gradient of the pre-softmax class score with respect to the final conv
/// activations, shape h×w×K.
pub fn class_gradient_wrt_activations(
    model: &TrainedModel,
    image: &Image,
    class_index: usize,
) -> Result<Array3<f64>> {
    model.check_image(image)?;
    if class_index > 1 {
        return Err(Error::Validation(format!(
            "class index {class_index} not in {{0,1}}"
        )));
    }
    let fwd = model.net.forward(image.pixels());
    let grad = model.net.class_score_activation_grad(&fwd, class_index);
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite activation gradient".into()));
    }
    Ok(grad)
}

/// Softmax probabilities as an owned array; convenience for callers that need
/// both entries.
pub fn probabilities(model: &TrainedModel, image: &Image) -> Result<Array1<f64>> {
    model.check_image(image)?;
    let fwd = model.net.forward(image.pixels());
    Ok(fwd.probs)
}
