//! Dataset loading, normalization and splitting for binary image
//! classification pairs.
//!
//! Two ingestion paths are supported: the big-endian IDX byte format used by
//! the grayscale benchmarks (`mnist`, `fashion-mnist`), and a generic
//! one-subdirectory-per-class tree of PNG/JPEG files.

mod folder;
mod idx;
pub mod synth;

use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use idx::{read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};

/// An H×W×C float image with every pixel in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array3<f64>,
}

impl Image {
    /// Wraps a pixel array, validating the range and shape invariants.
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h < 8 || w < 8 {
            return Err(Error::Validation(format!(
                "image dimensions {h}x{w} below minimum 8x8"
            )));
        }
        if c != 1 && c != 3 {
            return Err(Error::Validation(format!(
                "channel count {c} not in {{1,3}}"
            )));
        }
        for &v in pixels.iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("pixel value {v} outside [0,1]")));
            }
        }
        Ok(Self { pixels })
    }

    /// Wraps without range checks. Caller guarantees the invariants.
    pub(crate) fn from_parts_unchecked(pixels: Array3<f64>) -> Self {
        Self { pixels }
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }
}

/// Which side of a source/target pair a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Source,
    Target,
}

impl ClassLabel {
    /// Class order is fixed: source = 0, target = 1.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Source => 0,
            ClassLabel::Target => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(ClassLabel::Source),
            1 => Ok(ClassLabel::Target),
            _ => Err(Error::Validation(format!("class index {i} not in {{0,1}}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// An ordered set of images with their source/target labels.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    pub images: Vec<Image>,
    pub labels: Vec<ClassLabel>,
    pub class_names: (String, String),
    pub split_tag: Split,
}

impl LabeledImageSet {
    pub fn new(
        images: Vec<Image>,
        labels: Vec<ClassLabel>,
        class_names: (String, String),
        split_tag: Split,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self {
            images,
            labels,
            class_names,
            split_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Samples of one class, order preserved.
    pub fn filter(&self, label: ClassLabel) -> LabeledImageSet {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (img, &l) in self.images.iter().zip(&self.labels) {
            if l == label {
                images.push(img.clone());
                labels.push(l);
            }
        }
        LabeledImageSet {
            images,
            labels,
            class_names: self.class_names.clone(),
            split_tag: self.split_tag,
        }
    }
}

/// A directed source/target class pair within one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub dataset_id: String,
    pub source_class: String,
    pub target_class: String,
}

impl PairSpec {
    pub fn new(dataset_id: &str, source_class: &str, target_class: &str) -> Result<Self> {
        if source_class == target_class {
            return Err(Error::Config(format!(
                "source and target class are both '{source_class}'"
            )));
        }
        Ok(Self {
            dataset_id: dataset_id.to_string(),
            source_class: source_class.to_string(),
            target_class: target_class.to_string(),
        })
    }
}

/// Knobs for generic folder ingestion and for datasets without a
/// train/test split on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Square resize applied to folder-ingested images (bilinear).
    pub resize: usize,
    /// Holdout fraction when the dataset has no split on disk.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            resize: 32,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Converts a raw byte image to a `[0,1]` float image.
pub fn normalize(raw: &Array3<u8>) -> Result<Image> {
    let pixels = raw.mapv(|v| v as f64 / 255.0);
    Image::new(pixels)
}

/// Loads the train and test sets for a class pair.
///
/// `mnist` and `fashion-mnist` read IDX files under `root/<dataset_id>/`;
/// any other id reads a class-per-subfolder image tree at
/// `root/<dataset_id>/<class>/`, split with `opts.test_fraction`.
pub fn load_pair(
    spec: &PairSpec,
    root: &Path,
    opts: &IngestOptions,
) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let (train, test) = match spec.dataset_id.as_str() {
        "mnist" | "fashion-mnist" => idx::load_idx_pair(spec, &root.join(&spec.dataset_id))?,
        _ => {
            let full = folder::load_folder_pair(spec, &root.join(&spec.dataset_id), opts)?;
            holdout_split(&full, opts.test_fraction, opts.seed)?
        }
    };
    for (set, side) in [(&train, "train"), (&test, "test")] {
        if set.split_tag == Split::Train && set.count(ClassLabel::Source) == 0 {
            return Err(Error::Config(format!(
                "no samples of source class '{}' in {side} split",
                spec.source_class
            )));
        }
        if set.split_tag == Split::Train && set.count(ClassLabel::Target) == 0 {
            return Err(Error::Config(format!(
                "no samples of target class '{}' in {side} split",
                spec.target_class
            )));
        }
    }
    Ok((train, test))
}

/// Label-stratified reproducible holdout split.
///
/// Per class, the last `round(n * test_fraction)` items of a seeded shuffle
/// become the test set; ordering within each output set follows the original
/// set order, so the result is deterministic.
pub fn holdout_split(
    set: &LabeledImageSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledImageSet, LabeledImageSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction {test_fraction} not in (0,1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_indices = vec![false; set.len()];
    for label in [ClassLabel::Source, ClassLabel::Target] {
        let idx: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == label).collect();
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        if idx.len() > 0 && (n_test == 0 || n_test == idx.len()) {
            return Err(Error::Config(format!(
                "test_fraction {test_fraction} leaves a class empty ({} samples)",
                idx.len()
            )));
        }
        let mut shuffled = idx;
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[shuffled.len() - n_test..] {
            test_indices[i] = true;
        }
    }
    let take = |want_test: bool, tag: Split| {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..set.len() {
            if test_indices[i] == want_test {
                images.push(set.images[i].clone());
                labels.push(set.labels[i]);
            }
        }
        LabeledImageSet {
            images,
            labels,
            class_names: set.class_names.clone(),
            split_tag: tag,
        }
    };
    Ok((take(false, Split::Train), take(true, Split::Test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn constant_image(v: f64) -> Image {
        Image::new(Array3::from_elem((8, 8, 1), v)).unwrap()
    }

    fn toy_set(per_class: usize) -> LabeledImageSet {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_class * 2 {
            let label = if i % 2 == 0 {
                ClassLabel::Source
            } else {
                ClassLabel::Target
            };
            images.push(constant_image(if i % 2 == 0 { 0.2 } else { 0.8 }));
            labels.push(label);
        }
        LabeledImageSet::new(images, labels, ("a".into(), "b".into()), Split::Train).unwrap()
    }

    #[test]
    fn normalize_zero_and_boundaries() {
        let raw = Array3::<u8>::zeros((8, 8, 1));
        let img = normalize(&raw).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 0.0));

        let mut raw = Array3::<u8>::zeros((8, 8, 1));
        raw[[0, 0, 0]] = 255;
        raw[[0, 1, 0]] = 128;
        let img = normalize(&raw).unwrap();
        assert_eq!(img.pixels()[[0, 0, 0]], 1.0);
        assert!((img.pixels()[[0, 1, 0]] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn image_rejects_out_of_range_and_bad_shape() {
        assert!(Image::new(Array3::from_elem((8, 8, 1), 1.5)).is_err());
        assert!(Image::new(Array3::from_elem((4, 8, 1), 0.5)).is_err());
        assert!(Image::new(Array3::from_elem((8, 8, 2), 0.5)).is_err());
    }

    #[test]
    fn pair_spec_rejects_equal_classes() {
        assert!(PairSpec::new("mnist", "0", "0").is_err());
    }

    #[test]
    fn split_counts_and_stratification() {
        let set = toy_set(10);
        let (train, test) = holdout_split(&set, 0.2, 7).unwrap();
        assert_eq!(train.count(ClassLabel::Source), 8);
        assert_eq!(train.count(ClassLabel::Target), 8);
        assert_eq!(test.count(ClassLabel::Source), 2);
        assert_eq!(test.count(ClassLabel::Target), 2);
        assert_eq!(train.len() + test.len(), set.len());
    }

    #[test]
    fn split_is_deterministic() {
        let set = toy_set(10);
        let (tr1, te1) = holdout_split(&set, 0.3, 42).unwrap();
        let (tr2, te2) = holdout_split(&set, 0.3, 42).unwrap();
        assert_eq!(tr1.labels, tr2.labels);
        assert_eq!(te1.labels, te2.labels);
        for (a, b) in tr1.images.iter().zip(&tr2.images) {
            assert_eq!(a.pixels(), b.pixels());
        }
    }

    #[test]
    fn split_disjoint_and_exhaustive_across_fractions() {
        // Distinct fractions need not nest, but each must partition the set.
        let mut set = toy_set(10);
        for (i, img) in set.images.iter_mut().enumerate() {
            // make images distinguishable
            let mut px = img.pixels().clone();
            px[[0, 0, 0]] = i as f64 / 100.0;
            *img = Image::new(px).unwrap();
        }
        for frac in [0.2, 0.5] {
            let (train, test) = holdout_split(&set, frac, 3).unwrap();
            assert_eq!(train.len() + test.len(), set.len());
            for te in &test.images {
                assert!(!train.images.iter().any(|tr| tr.pixels() == te.pixels()));
            }
        }
    }

    #[test]
    fn split_rejects_emptying_fraction() {
        let set = toy_set(2);
        assert!(holdout_split(&set, 0.01, 0).is_err());
    }
}
