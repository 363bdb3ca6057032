//! RoI and RoA saliency maps, thresholded masks, and class-representative
//! maps built by pixel-wise mean superimposition.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attack::AdversarialPair;
use crate::classifier::{self, TrainedModel};
use crate::data::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyKind {
    Roi,
    Roa,
}

/// H×W per-pixel leverage in [0,1].
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub values: Array2<f64>,
    pub kind: SaliencyKind,
    /// Set when the map degenerated to all zeros.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Roi,
    Roa,
    Blob,
    Region,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub bits: Array2<bool>,
    pub kind: MaskKind,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.bits.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// Pixel-wise mean of contributor masks; each value is k/n.
#[derive(Debug, Clone)]
pub struct RepresentativeMap {
    pub values: Array2<f64>,
    pub n_contributors: usize,
}

/// Absolute threshold in [0,1], or a quantile over the strictly positive
/// map values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    Absolute(f64),
    Quantile(f64),
}

fn min_max_normalize(mut values: Array2<f64>) -> (Array2<f64>, bool) {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        values.fill(0.0);
        return (values, true);
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if range == 0.0 {
        values.fill(1.0);
        return (values, false);
    }
    values.mapv_inplace(|v| (v - min) / range);
    (values, false)
}

/// Bilinear upsample using half-pixel sample centers.
pub(crate) fn upsample_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let sy = ((y as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, h as f64 - 1.0);
        let sx = ((x as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, w as f64 - 1.0);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        src[[y0, x0]] * (1.0 - fy) * (1.0 - fx)
            + src[[y0, x1]] * (1.0 - fy) * fx
            + src[[y1, x0]] * fy * (1.0 - fx)
            + src[[y1, x1]] * fy * fx
    })
}

/// Gradient-weighted class activation map for the model's predicted class,
/// upsampled to image resolution and min-max normalized.
pub fn roi_map(model: &TrainedModel, image: &Image) -> Result<SaliencyMap> {
    let pred = classifier::predict(model, image)?;
    let acts = classifier::final_conv_activations(model, image)?;
    let grads = classifier::class_gradient_wrt_activations(model, image, pred.label.index())?;
    let (h, w, k) = acts.dim();
    let mut cam = Array2::<f64>::zeros((h, w));
    for ch in 0..k {
        // channel weight = spatial mean of the class gradient
        let mut weight = 0.0;
        for y in 0..h {
            for x in 0..w {
                weight += grads[[y, x, ch]];
            }
        }
        weight /= (h * w) as f64;
        for y in 0..h {
            for x in 0..w {
                cam[[y, x]] += weight * acts[[y, x, ch]];
            }
        }
    }
    cam.mapv_inplace(|v| v.max(0.0));
    let up = upsample_bilinear(&cam, image.height(), image.width());
    let (values, degenerate) = min_max_normalize(up);
    Ok(SaliencyMap {
        values,
        kind: SaliencyKind::Roi,
        degenerate,
    })
}

/// Per-pixel channel-wise L2 magnitude of the achieved perturbation,
/// min-max normalized.
pub fn roa_map(pair: &AdversarialPair) -> Result<SaliencyMap> {
    if pair.clean.dim() != pair.adversarial.dim() {
        return Err(Error::Validation("pair image dims differ".into()));
    }
    let (h, w, c) = pair.clean.dim();
    let values = Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for ch in 0..c {
            let d = pair.adversarial.pixels()[[y, x, ch]] - pair.clean.pixels()[[y, x, ch]];
            acc += d * d;
        }
        acc.sqrt()
    });
    let (values, degenerate) = min_max_normalize(values);
    Ok(SaliencyMap {
        values,
        kind: SaliencyKind::Roa,
        degenerate,
    })
}

/// Resolves a threshold spec against a map's values.
fn resolve_threshold(map: &SaliencyMap, delta: Threshold) -> Result<Option<f64>> {
    match delta {
        Threshold::Absolute(d) => {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Validation(format!("absolute delta {d} not in [0,1]")));
            }
            Ok(Some(d))
        }
        Threshold::Quantile(q) => {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Validation(format!("quantile {q} not in (0,1)")));
            }
            let mut positive: Vec<f64> =
                map.values.iter().cloned().filter(|&v| v > 0.0).collect();
            if positive.is_empty() {
                return Ok(None);
            }
            positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = ((q * positive.len() as f64).floor() as usize).min(positive.len() - 1);
            Ok(Some(positive[idx]))
        }
    }
}

/// bit = (value >= resolved threshold). A quantile over an all-zero map
/// yields an empty mask.
pub fn threshold_mask(map: &SaliencyMap, delta: Threshold) -> Result<BinaryMask> {
    let kind = match map.kind {
        SaliencyKind::Roi => MaskKind::Roi,
        SaliencyKind::Roa => MaskKind::Roa,
    };
    let bits = match resolve_threshold(map, delta)? {
        Some(t) => map.values.mapv(|v| v >= t),
        None => Array2::from_elem(map.values.dim(), false),
    };
    Ok(BinaryMask { bits, kind })
}

/// Pixel-wise mean occupancy of the contributor masks.
pub fn representative_map(masks: &[BinaryMask]) -> Result<RepresentativeMap> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Validation("representative_map needs >=1 mask".into()))?;
    let dim = first.dim();
    let mut values = Array2::<f64>::zeros(dim);
    for mask in masks {
        if mask.dim() != dim {
            return Err(Error::Validation(format!(
                "mask dims {:?} differ from {:?}",
                mask.dim(),
                dim
            )));
        }
        ndarray::Zip::from(&mut values).and(&mask.bits).for_each(|v, &b| {
            if b {
                *v += 1.0;
            }
        });
    }
    values /= masks.len() as f64;
    Ok(RepresentativeMap {
        values,
        n_contributors: masks.len(),
    })
}

/// Mean of continuous saliency maps; alternative superimposition exposed
/// behind the pipeline's config switch.
pub fn representative_from_maps(maps: &[SaliencyMap]) -> Result<RepresentativeMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Validation("representative_from_maps needs >=1 map".into()))?;
    let dim = first.values.dim();
    let mut values = Array2::<f64>::zeros(dim);
    for map in maps {
        if map.values.dim() != dim {
            return Err(Error::Validation("map dims differ".into()));
        }
        values += &map.values;
    }
    values /= maps.len() as f64;
    Ok(RepresentativeMap {
        values,
        n_contributors: maps.len(),
    })
}
