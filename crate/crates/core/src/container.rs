//! Versioned on-disk container for image sets and adversarial pair sets.
//!
//! JSON header with base64-encoded little-endian f64 pixel payloads, so
//! round trips are bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::attack::{AdversarialPair, AttackConfig};
use crate::classifier::{self, TrainedModel};
use crate::data::{ClassLabel, Image, LabeledImageSet, Split};
use crate::error::{Error, Result};

const CONTAINER_VERSION: u32 = 1;

fn encode_pixels(img: &Image) -> String {
    let mut bytes = Vec::with_capacity(img.pixels().len() * 8);
    for v in img.pixels() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_pixels(b64: &str, dim: (usize, usize, usize)) -> Result<Image> {
    let bytes = B64
        .decode(b64)
        .map_err(|e| Error::Validation(format!("bad pixel payload: {e}")))?;
    let expected = dim.0 * dim.1 * dim.2 * 8;
    if bytes.len() != expected {
        return Err(Error::Validation(format!(
            "pixel payload {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let pixels = Array3::from_shape_vec(dim, values)
        .map_err(|e| Error::Validation(format!("pixel payload shape: {e}")))?;
    Image::new(pixels)
}

#[derive(Serialize, Deserialize)]
struct SetContainer {
    format_version: u32,
    class_names: (String, String),
    split_tag: Split,
    height: usize,
    width: usize,
    channels: usize,
    labels: Vec<ClassLabel>,
    images: Vec<String>,
    /// Present when the images are adversarial outputs.
    attack: Option<AttackConfig>,
}

pub fn save_set(path: &Path, set: &LabeledImageSet, attack: Option<&AttackConfig>) -> Result<()> {
    let dim = set
        .images
        .first()
        .map(|i| i.dim())
        .unwrap_or((8, 8, 1));
    let container = SetContainer {
        format_version: CONTAINER_VERSION,
        class_names: set.class_names.clone(),
        split_tag: set.split_tag,
        height: dim.0,
        width: dim.1,
        channels: dim.2,
        labels: set.labels.clone(),
        images: set.images.iter().map(encode_pixels).collect(),
        attack: attack.cloned(),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &container)?;
    Ok(())
}

pub fn load_set(path: &Path) -> Result<(LabeledImageSet, Option<AttackConfig>)> {
    let file = std::fs::File::open(path)?;
    let container: SetContainer = serde_json::from_reader(std::io::BufReader::new(file))?;
    if container.format_version != CONTAINER_VERSION {
        return Err(Error::Validation(format!(
            "unsupported container version {}",
            container.format_version
        )));
    }
    let dim = (container.height, container.width, container.channels);
    let images = container
        .images
        .iter()
        .map(|b64| decode_pixels(b64, dim))
        .collect::<Result<Vec<_>>>()?;
    let set = LabeledImageSet::new(
        images,
        container.labels,
        container.class_names,
        container.split_tag,
    )?;
    Ok((set, container.attack))
}

#[derive(Serialize, Deserialize)]
struct PairContainer {
    format_version: u32,
    class_names: (String, String),
    split_tag: Split,
    height: usize,
    width: usize,
    channels: usize,
    labels: Vec<ClassLabel>,
    clean: Vec<String>,
    adversarial: Vec<String>,
    attack: AttackConfig,
}

/// Saves clean/adversarial image pairs in the dataset container layout.
pub fn save_pairs(
    path: &Path,
    pairs: &[AdversarialPair],
    class_names: (String, String),
    split_tag: Split,
    attack: &AttackConfig,
) -> Result<()> {
    let dim = pairs.first().map(|p| p.clean.dim()).unwrap_or((8, 8, 1));
    let container = PairContainer {
        format_version: CONTAINER_VERSION,
        class_names,
        split_tag,
        height: dim.0,
        width: dim.1,
        channels: dim.2,
        labels: pairs.iter().map(|p| p.clean_label).collect(),
        clean: pairs.iter().map(|p| encode_pixels(&p.clean)).collect(),
        adversarial: pairs.iter().map(|p| encode_pixels(&p.adversarial)).collect(),
        attack: attack.clone(),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &container)?;
    Ok(())
}

/// Loads pairs back; adversarial predictions are recomputed with `model`.
pub fn load_pairs(path: &Path, model: &TrainedModel) -> Result<(Vec<AdversarialPair>, AttackConfig)> {
    let file = std::fs::File::open(path)?;
    let container: PairContainer = serde_json::from_reader(std::io::BufReader::new(file))?;
    if container.format_version != CONTAINER_VERSION {
        return Err(Error::Validation(format!(
            "unsupported container version {}",
            container.format_version
        )));
    }
    let dim = (container.height, container.width, container.channels);
    let mut pairs = Vec::with_capacity(container.labels.len());
    for ((clean_b64, adv_b64), &label) in container
        .clean
        .iter()
        .zip(&container.adversarial)
        .zip(&container.labels)
    {
        let clean = decode_pixels(clean_b64, dim)?;
        let adversarial = decode_pixels(adv_b64, dim)?;
        let adv_prediction = classifier::predict(model, &adversarial)?;
        pairs.push(AdversarialPair {
            clean,
            adversarial,
            clean_label: label,
            adv_prediction,
            warning: None,
        });
    }
    Ok((pairs, container.attack))
}
