//! Shared fixtures for the stage benchmarks.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use advregions_core::classifier::{train, ConvBlockConfig, ModelConfig, TrainedModel};
use advregions_core::data::{ClassLabel, Image, LabeledImageSet, Split};

pub const SIDE: usize = 28;

/// Random image with every pixel in [0,1].
pub fn random_image(seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(Array3::from_shape_fn((SIDE, SIDE, 1), |_| {
        rng.gen_range(0.0..1.0)
    }))
    .unwrap()
}

/// Random H×W map with values in [0,1].
pub fn random_map(seed: u64, side: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((side, side), |_| rng.gen_range(0.0..1.0))
}

/// Random boolean mask grid.
pub fn random_bits(seed: u64, side: usize) -> Array2<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((side, side), |_| rng.gen_bool(0.3))
}

/// Small two-class model trained on separable constant images, sized like
/// the digit benchmarks.
pub fn trained_model() -> TrainedModel {
    let cfg = ModelConfig {
        conv_blocks: vec![ConvBlockConfig {
            filters: 8,
            kernel: 3,
            stride: 1,
        }],
        dense_widths: vec![16],
        learning_rate: 2e-3,
        epochs: 3,
        batch_size: 8,
        seed: 0,
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..8 {
        images.push(Image::new(Array3::from_elem((SIDE, SIDE, 1), 0.3)).unwrap());
        labels.push(ClassLabel::Source);
        images.push(Image::new(Array3::from_elem((SIDE, SIDE, 1), 0.7)).unwrap());
        labels.push(ClassLabel::Target);
    }
    let set =
        LabeledImageSet::new(images, labels, ("a".into(), "b".into()), Split::Train).unwrap();
    train(&set, &cfg).unwrap()
}
