//! Class-level ŪV blob extraction and constant-fill neutralization, plus the
//! four-score defense evaluation protocol.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig};
use crate::classifier::{self, TrainedModel};
use crate::data::{Image, LabeledImageSet, PairSpec};
use crate::error::{Error, Result};
use crate::segregation::{BinaryMask, MaskKind, RepresentativeMap, Threshold};

/// Provenance carried alongside a blob for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobProvenance {
    pub delta1: Threshold,
    pub delta2: Threshold,
    pub theta: f64,
    pub n_contributors: usize,
}

/// Class-representative ŪV mask applied uniformly to all images of a class.
#[derive(Debug, Clone)]
pub struct Blob {
    pub mask: BinaryMask,
    pub source_pair: PairSpec,
    pub theta: f64,
    /// Constant written into blob pixels; 0.0 or 1.0.
    pub fill_value: f64,
    pub provenance: BlobProvenance,
    /// Set when the blob came out empty (defense degenerates to identity).
    pub warning: Option<String>,
}

/// Four accuracies for one source/target direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreQuad {
    pub score_clean: f64,
    pub score_adv: f64,
    pub score_mod: f64,
    pub score_mod_adv: f64,
}

/// Largest 4-connected component of a boolean grid.
fn largest_component(bits: &Array2<bool>) -> Array2<bool> {
    let (h, w) = bits.dim();
    let mut labels = Array2::<usize>::zeros((h, w));
    let mut sizes = vec![0usize]; // label 0 = background
    for y in 0..h {
        for x in 0..w {
            if !bits[[y, x]] || labels[[y, x]] != 0 {
                continue;
            }
            let label = sizes.len();
            sizes.push(0);
            let mut stack = vec![(y, x)];
            labels[[y, x]] = label;
            while let Some((cy, cx)) = stack.pop() {
                sizes[label] += 1;
                let mut visit = |ny: usize, nx: usize, labels: &mut Array2<usize>| {
                    if bits[[ny, nx]] && labels[[ny, nx]] == 0 {
                        labels[[ny, nx]] = label;
                        stack.push((ny, nx));
                    }
                };
                if cy > 0 {
                    visit(cy - 1, cx, &mut labels);
                }
                if cy + 1 < h {
                    visit(cy + 1, cx, &mut labels);
                }
                if cx > 0 {
                    visit(cy, cx - 1, &mut labels);
                }
                if cx + 1 < w {
                    visit(cy, cx + 1, &mut labels);
                }
            }
        }
    }
    let best = (1..sizes.len()).max_by_key(|&l| sizes[l]).unwrap_or(0);
    labels.mapv(|l| l != 0 && l == best)
}

/// Blob mask: rep_roa ≥ θ and rep_roi < θ, optionally restricted to the
/// largest 4-connected component.
pub fn extract_blob(
    rep_roi: &RepresentativeMap,
    rep_roa: &RepresentativeMap,
    theta: f64,
    fill_value: f64,
    keep_largest_component: bool,
    source_pair: &PairSpec,
    delta1: Threshold,
    delta2: Threshold,
) -> Result<Blob> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Validation(format!("theta {theta} not in (0,1)")));
    }
    if fill_value != 0.0 && fill_value != 1.0 {
        return Err(Error::Validation(format!(
            "fill value {fill_value} must be 0 or 1"
        )));
    }
    if rep_roi.values.dim() != rep_roa.values.dim() {
        return Err(Error::Validation("representative map dims differ".into()));
    }
    let mut bits = Array2::from_shape_fn(rep_roa.values.dim(), |idx| {
        rep_roa.values[idx] >= theta && rep_roi.values[idx] < theta
    });
    if keep_largest_component && bits.iter().any(|&b| b) {
        bits = largest_component(&bits);
    }
    let mask = BinaryMask {
        bits,
        kind: MaskKind::Blob,
    };
    let warning = mask
        .is_empty()
        .then(|| "blob is empty; neutralization is the identity".to_string());
    Ok(Blob {
        mask,
        source_pair: source_pair.clone(),
        theta,
        fill_value,
        provenance: BlobProvenance {
            delta1,
            delta2,
            theta,
            n_contributors: rep_roa.n_contributors,
        },
        warning,
    })
}

/// RoA-side half of the blob rule; exposed so monotonicity in θ can be
/// asserted on the clause that is monotone.
pub fn roa_side_mask(rep_roa: &RepresentativeMap, theta: f64) -> Array2<bool> {
    rep_roa.values.mapv(|v| v >= theta)
}

/// Overwrites blob pixels with the fill constant across all channels.
pub fn neutralize(image: &Image, blob: &Blob) -> Result<Image> {
    if blob.mask.dim() != (image.height(), image.width()) {
        return Err(Error::Validation(format!(
            "blob dims {:?} do not match image {}x{}",
            blob.mask.dim(),
            image.height(),
            image.width()
        )));
    }
    let mut pixels = image.pixels().clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if blob.mask.bits[[y, x]] {
                for c in 0..image.channels() {
                    pixels[[y, x, c]] = blob.fill_value;
                }
            }
        }
    }
    Image::new(pixels)
}

/// Applies `neutralize` to every image of a set.
pub fn neutralize_set(set: &LabeledImageSet, blob: &Blob) -> Result<LabeledImageSet> {
    let images = set
        .images
        .iter()
        .map(|img| neutralize(img, blob))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledImageSet {
        images,
        labels: set.labels.clone(),
        class_names: set.class_names.clone(),
        split_tag: set.split_tag,
    })
}

/// Runs the four-score protocol: accuracy on S_clean, on S_adv, on S_mod
/// (neutralized clean) and on S_mod-adv (re-attack of S_mod at the same ε).
pub fn defense_eval(
    model: &TrainedModel,
    test: &LabeledImageSet,
    cfg: &AttackConfig,
    blob: &Blob,
) -> Result<ScoreQuad> {
    if test.is_empty() {
        return Err(Error::Validation("defense_eval over empty test set".into()));
    }
    let score_clean = classifier::accuracy(model, test)?;
    let adv_pairs = attack::attack_set(model, test, cfg)?;
    let s_adv = attack::adversarial_as_set(&adv_pairs, test);
    let score_adv = classifier::accuracy(model, &s_adv)?;
    let s_mod = neutralize_set(test, blob)?;
    let score_mod = classifier::accuracy(model, &s_mod)?;
    let mod_adv_pairs = attack::attack_set(model, &s_mod, cfg)?;
    let s_mod_adv = attack::adversarial_as_set(&mod_adv_pairs, &s_mod);
    let score_mod_adv = classifier::accuracy(model, &s_mod_adv)?;
    Ok(ScoreQuad {
        score_clean,
        score_adv,
        score_mod,
        score_mod_adv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{train, ConvBlockConfig, ModelConfig};
    use crate::data::{ClassLabel, Split};
    use ndarray::Array3;

    fn pair_spec() -> PairSpec {
        PairSpec::new("toy", "a", "b").unwrap()
    }

    fn rep(values: Array2<f64>) -> RepresentativeMap {
        RepresentativeMap {
            n_contributors: 1,
            values,
        }
    }

    fn make_blob(bits: Array2<bool>, fill: f64) -> Blob {
        Blob {
            mask: BinaryMask {
                bits,
                kind: MaskKind::Blob,
            },
            source_pair: pair_spec(),
            theta: 0.5,
            fill_value: fill,
            provenance: BlobProvenance {
                delta1: Threshold::Quantile(0.85),
                delta2: Threshold::Quantile(0.85),
                theta: 0.5,
                n_contributors: 1,
            },
            warning: None,
        }
    }

    #[test]
    fn full_roa_empty_roi_gives_full_blob() {
        let roa = rep(Array2::from_elem((8, 8), 1.0));
        let roi = rep(Array2::zeros((8, 8)));
        let blob = extract_blob(
            &roi,
            &roa,
            0.5,
            0.0,
            false,
            &pair_spec(),
            Threshold::Quantile(0.85),
            Threshold::Quantile(0.85),
        )
        .unwrap();
        assert_eq!(blob.mask.count(), 64);
        assert!(blob.warning.is_none());
    }

    #[test]
    fn equal_maps_give_empty_blob_with_warning() {
        let m = rep(Array2::from_elem((8, 8), 0.7));
        let blob = extract_blob(
            &m,
            &m,
            0.5,
            0.0,
            false,
            &pair_spec(),
            Threshold::Quantile(0.85),
            Threshold::Quantile(0.85),
        )
        .unwrap();
        assert!(blob.mask.is_empty());
        assert!(blob.warning.is_some());
    }

    #[test]
    fn hand_set_maps_match_per_pixel_oracle() {
        let roa_vals = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f64 / 15.0);
        let roi_vals = Array2::from_shape_fn((4, 4), |(y, x)| (x * 4 + y) as f64 / 15.0);
        // 4x4 maps are below the Image minimum but masks have no such bound
        let blob = extract_blob(
            &rep(roi_vals.clone()),
            &rep(roa_vals.clone()),
            0.5,
            1.0,
            false,
            &pair_spec(),
            Threshold::Absolute(0.5),
            Threshold::Absolute(0.5),
        )
        .unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expected = roa_vals[[y, x]] >= 0.5 && roi_vals[[y, x]] < 0.5;
                assert_eq!(blob.mask.bits[[y, x]], expected);
            }
        }
    }

    #[test]
    fn roa_side_mask_is_monotone_in_theta() {
        let roa = rep(Array2::from_shape_fn((8, 8), |(y, x)| {
            ((y * 8 + x) as f64) / 63.0
        }));
        let lo = roa_side_mask(&roa, 0.3);
        let hi = roa_side_mask(&roa, 0.7);
        for (l, h) in lo.iter().zip(hi.iter()) {
            assert!(*l || !*h, "raising theta added a pixel");
        }
        // with the RoI clause held at zero, the full blob rule is monotone too
        let roi = rep(Array2::zeros((8, 8)));
        let mk = |theta| {
            extract_blob(
                &roi,
                &roa,
                theta,
                0.0,
                false,
                &pair_spec(),
                Threshold::Absolute(0.5),
                Threshold::Absolute(0.5),
            )
            .unwrap()
        };
        let b_lo = mk(0.3);
        let b_hi = mk(0.7);
        for (l, h) in b_lo.mask.bits.iter().zip(b_hi.mask.bits.iter()) {
            assert!(*l || !*h);
        }
    }

    #[test]
    fn keep_largest_component_selects_biggest_region() {
        let mut roa_vals = Array2::zeros((8, 8));
        // two components: 2 pixels and 6 pixels
        roa_vals[[0, 0]] = 1.0;
        roa_vals[[0, 1]] = 1.0;
        for x in 0..6 {
            roa_vals[[5, x]] = 1.0;
        }
        let blob = extract_blob(
            &rep(Array2::zeros((8, 8))),
            &rep(roa_vals),
            0.5,
            0.0,
            true,
            &pair_spec(),
            Threshold::Absolute(0.5),
            Threshold::Absolute(0.5),
        )
        .unwrap();
        assert_eq!(blob.mask.count(), 6);
        assert!(blob.mask.bits[[5, 0]]);
        assert!(!blob.mask.bits[[0, 0]]);
    }

    #[test]
    fn neutralize_identity_full_and_idempotent() {
        let img = Image::new(Array3::from_shape_fn((8, 8, 1), |(y, x, _)| {
            (y * 8 + x) as f64 / 63.0
        }))
        .unwrap();
        let empty = make_blob(Array2::from_elem((8, 8), false), 0.0);
        assert_eq!(neutralize(&img, &empty).unwrap().pixels(), img.pixels());

        let full = make_blob(Array2::from_elem((8, 8), true), 0.0);
        let out = neutralize(&img, &full).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));

        let partial = make_blob(Array2::from_shape_fn((8, 8), |(y, _)| y < 4), 1.0);
        let once = neutralize(&img, &partial).unwrap();
        let twice = neutralize(&once, &partial).unwrap();
        assert_eq!(once.pixels(), twice.pixels());
        assert!(once.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn neutralize_dim_mismatch_is_error() {
        let img = Image::new(Array3::from_elem((8, 8, 1), 0.5)).unwrap();
        let blob = make_blob(Array2::from_elem((9, 9), true), 0.0);
        assert!(neutralize(&img, &blob).is_err());
    }

    fn toy_model_and_set() -> (TrainedModel, LabeledImageSet) {
        let cfg = ModelConfig {
            conv_blocks: vec![ConvBlockConfig {
                filters: 4,
                kernel: 3,
                stride: 1,
            }],
            dense_widths: vec![8],
            learning_rate: 5e-3,
            epochs: 25,
            batch_size: 8,
            seed: 0,
        };
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..8 {
            images.push(Image::new(Array3::from_elem((8, 8, 1), 0.3)).unwrap());
            labels.push(ClassLabel::Source);
            images.push(Image::new(Array3::from_elem((8, 8, 1), 0.7)).unwrap());
            labels.push(ClassLabel::Target);
        }
        let set =
            LabeledImageSet::new(images, labels, ("a".into(), "b".into()), Split::Test).unwrap();
        let model = train(&set, &cfg).unwrap();
        (model, set)
    }

    #[test]
    fn zero_epsilon_collapses_scores() {
        let (model, set) = toy_model_and_set();
        let blob = make_blob(Array2::from_shape_fn((8, 8), |(y, _)| y == 0), 0.0);
        let q = defense_eval(&model, &set, &AttackConfig::untargeted(0.0), &blob).unwrap();
        assert_eq!(q.score_clean, q.score_adv);
        assert_eq!(q.score_mod, q.score_mod_adv);
        for s in [q.score_clean, q.score_adv, q.score_mod, q.score_mod_adv] {
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn empty_blob_collapses_mod_scores() {
        let (model, set) = toy_model_and_set();
        let blob = make_blob(Array2::from_elem((8, 8), false), 0.0);
        let q = defense_eval(&model, &set, &AttackConfig::untargeted(0.08), &blob).unwrap();
        assert_eq!(q.score_clean, q.score_mod);
        assert_eq!(q.score_adv, q.score_mod_adv);
    }
}
