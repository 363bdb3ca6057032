//! FGSM adversarial sample generation with clipping to the valid pixel range.

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, Prediction, TrainedModel};
use crate::data::{ClassLabel, Image, LabeledImageSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Perturbation budget in pixel units on the [0,1] scale.
    pub epsilon: f64,
    /// false = untargeted loss ascent on the true label.
    #[serde(default)]
    pub targeted: bool,
}

impl AttackConfig {
    pub fn untargeted(epsilon: f64) -> Self {
        Self {
            epsilon,
            targeted: false,
        }
    }

    fn validate(&self) -> Result<Option<String>> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        // allowed but flagged: the whole pixel range is reachable
        Ok((self.epsilon > 1.0)
            .then(|| format!("epsilon {} exceeds the [0,1] pixel range", self.epsilon)))
    }
}

#[derive(Debug, Clone)]
pub struct AdversarialPair {
    pub clean: Image,
    pub adversarial: Image,
    pub clean_label: ClassLabel,
    pub adv_prediction: Prediction,
    /// Set when the config was accepted with a warning (epsilon > 1).
    pub warning: Option<String>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// x* = clip(x + eps * sign(grad_x L(x, label)), 0, 1).
///
/// Targeted mode descends the loss of the other label instead.
pub fn fgsm(
    model: &TrainedModel,
    image: &Image,
    label: ClassLabel,
    cfg: &AttackConfig,
) -> Result<AdversarialPair> {
    let warning = cfg.validate()?;
    let (grad, step_sign) = if cfg.targeted {
        let other = ClassLabel::from_index(1 - label.index())?;
        (classifier::loss_gradient_wrt_input(model, image, other)?, -1.0)
    } else {
        (classifier::loss_gradient_wrt_input(model, image, label)?, 1.0)
    };
    let mut perturbed: Array3<f64> = image.pixels().clone();
    ndarray::Zip::from(&mut perturbed).and(&grad).for_each(|px, &g| {
        *px = (*px + step_sign * cfg.epsilon * sign(g)).clamp(0.0, 1.0);
    });
    let adversarial = Image::new(perturbed)?;
    let adv_prediction = classifier::predict(model, &adversarial)?;
    Ok(AdversarialPair {
        clean: image.clone(),
        adversarial,
        clean_label: label,
        adv_prediction,
        warning,
    })
}

/// Elementwise FGSM over a set, order preserved.
pub fn attack_set(
    model: &TrainedModel,
    set: &LabeledImageSet,
    cfg: &AttackConfig,
) -> Result<Vec<AdversarialPair>> {
    set.images
        .par_iter()
        .zip(set.labels.par_iter())
        .enumerate()
        .map(|(i, (img, &label))| {
            fgsm(model, img, label, cfg)
                .map_err(|e| Error::Validation(format!("attack failed on item {i}: {e}")))
        })
        .collect()
}

/// Wraps the adversarial halves of pairs back into a labeled set with the
/// clean labels, for accuracy scoring.
pub fn adversarial_as_set(pairs: &[AdversarialPair], template: &LabeledImageSet) -> LabeledImageSet {
    LabeledImageSet {
        images: pairs.iter().map(|p| p.adversarial.clone()).collect(),
        labels: pairs.iter().map(|p| p.clean_label).collect(),
        class_names: template.class_names.clone(),
        split_tag: template.split_tag,
    }
}
