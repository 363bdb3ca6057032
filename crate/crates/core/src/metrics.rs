//! SSIM between saliency masks/maps, per-image pairwise means, and
//! representative-level similarity.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::PairSpec;
use crate::error::{Error, Result};
use crate::segregation::{representative_map, BinaryMask};

/// 7x7 uniform window; dynamic range L = 1 since maps live in [0,1].
pub const SSIM_WINDOW: usize = 7;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimReport {
    pub pair: PairSpec,
    pub mean_individual_ssim: f64,
    pub representative_ssim: f64,
    pub n: usize,
}

/// Summed-area table with a leading zero row/column.
fn integral(map: &Array2<f64>, f: impl Fn(f64) -> f64) -> Array2<f64> {
    let (h, w) = map.dim();
    let mut sat = Array2::<f64>::zeros((h + 1, w + 1));
    for y in 0..h {
        for x in 0..w {
            sat[[y + 1, x + 1]] =
                f(map[[y, x]]) + sat[[y, x + 1]] + sat[[y + 1, x]] - sat[[y, x]];
        }
    }
    sat
}

fn window_sum(sat: &Array2<f64>, y: usize, x: usize, k: usize) -> f64 {
    sat[[y + k, x + k]] - sat[[y, x + k]] - sat[[y + k, x]] + sat[[y, x]]
}

/// Mean structural similarity over all 7x7 windows (stride 1, uniform
/// weighting, population moments).
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Validation(format!(
            "ssim dims differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w) = a.dim();
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(Error::Validation(format!(
            "map {h}x{w} smaller than the {k}x{k} ssim window"
        )));
    }
    let n = (k * k) as f64;
    let sa = integral(a, |v| v);
    let sb = integral(b, |v| v);
    let saa = integral(a, |v| v * v);
    let sbb = integral(b, |v| v * v);
    let mut sab = Array2::<f64>::zeros((h + 1, w + 1));
    for y in 0..h {
        for x in 0..w {
            sab[[y + 1, x + 1]] =
                a[[y, x]] * b[[y, x]] + sab[[y, x + 1]] + sab[[y + 1, x]] - sab[[y, x]];
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=(h - k) {
        for x in 0..=(w - k) {
            let mu_a = window_sum(&sa, y, x, k) / n;
            let mu_b = window_sum(&sb, y, x, k) / n;
            let var_a = window_sum(&saa, y, x, k) / n - mu_a * mu_a;
            let var_b = window_sum(&sbb, y, x, k) / n - mu_b * mu_b;
            let cov = window_sum(&sab, y, x, k) / n - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2);
            let den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn mask_to_map(mask: &BinaryMask) -> Array2<f64> {
    mask.bits.mapv(|b| if b { 1.0 } else { 0.0 })
}

/// Mean per-image SSIM between paired RoI/RoA masks plus the SSIM of their
/// representative maps.
pub fn roi_roa_similarity(
    pair: &PairSpec,
    roi_masks: &[BinaryMask],
    roa_masks: &[BinaryMask],
) -> Result<SsimReport> {
    if roi_masks.len() != roa_masks.len() {
        return Err(Error::Validation(format!(
            "{} RoI masks vs {} RoA masks",
            roi_masks.len(),
            roa_masks.len()
        )));
    }
    if roi_masks.is_empty() {
        return Err(Error::Validation("similarity over empty mask lists".into()));
    }
    let mut total = 0.0;
    for (roi, roa) in roi_masks.iter().zip(roa_masks) {
        total += ssim(&mask_to_map(roi), &mask_to_map(roa))?;
    }
    let rep_roi = representative_map(roi_masks)?;
    let rep_roa = representative_map(roa_masks)?;
    let representative_ssim = ssim(&rep_roi.values, &rep_roa.values)?;
    Ok(SsimReport {
        pair: pair.clone(),
        mean_individual_ssim: total / roi_masks.len() as f64,
        representative_ssim,
        n: roi_masks.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segregation::MaskKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct-formula oracle: naive per-window loops, no integral images.
    fn ssim_oracle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let (h, w) = a.dim();
        let k = SSIM_WINDOW;
        let n = (k * k) as f64;
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=(h - k) {
            for x in 0..=(w - k) {
                let mut sa = 0.0;
                let mut sb = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        sa += a[[y + dy, x + dx]];
                        sb += b[[y + dy, x + dx]];
                    }
                }
                let (mu_a, mu_b) = (sa / n, sb / n);
                let mut var_a = 0.0;
                let mut var_b = 0.0;
                let mut cov = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        let da = a[[y + dy, x + dx]] - mu_a;
                        let db = b[[y + dy, x + dx]] - mu_b;
                        var_a += da * da;
                        var_b += db * db;
                        cov += da * db;
                    }
                }
                var_a /= n;
                var_b /= n;
                cov /= n;
                total += ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2))
                    / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
                count += 1;
            }
        }
        total / count as f64
    }

    fn random_map(seed: u64, side: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((side, side), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn self_similarity_is_one() {
        let a = random_map(1, 12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetry() {
        let a = random_map(2, 10);
        let b = random_map(3, 10);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_formula_oracle() {
        for seed in 0..5u64 {
            let a = random_map(seed * 2, 8);
            let b = random_map(seed * 2 + 1, 8);
            let got = ssim(&a, &b).unwrap();
            let want = ssim_oracle(&a, &b);
            assert!((got - want).abs() < 1e-6, "got {got} want {want}");
        }
    }

    #[test]
    fn zero_vs_one_matches_oracle() {
        let zero = Array2::zeros((8, 8));
        let one = Array2::from_elem((8, 8), 1.0);
        let got = ssim(&zero, &one).unwrap();
        let want = ssim_oracle(&zero, &one);
        assert!((got - want).abs() < 1e-6);
        // constant windows: (C1 / (1 + C1)) * 1
        assert!((got - C1 / (1.0 + C1)).abs() < 1e-9);
    }

    #[test]
    fn bounded_in_unit_interval() {
        for seed in 10..20u64 {
            let a = random_map(seed, 9);
            let b = random_map(seed + 100, 9);
            let v = ssim(&a, &b).unwrap();
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn too_small_map_is_error() {
        let a = Array2::zeros((5, 5));
        assert!(ssim(&a, &a).is_err());
    }

    fn mask(bits: Array2<bool>) -> BinaryMask {
        BinaryMask {
            bits,
            kind: MaskKind::Roi,
        }
    }

    #[test]
    fn identical_mask_lists_give_unit_report() {
        let pair = PairSpec::new("toy", "a", "b").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let masks: Vec<BinaryMask> = (0..3)
            .map(|_| mask(Array2::from_shape_fn((8, 8), |_| rng.gen_bool(0.4))))
            .collect();
        let report = roi_roa_similarity(&pair, &masks, &masks).unwrap();
        assert!((report.mean_individual_ssim - 1.0).abs() < 1e-9);
        assert!((report.representative_ssim - 1.0).abs() < 1e-9);
        assert_eq!(report.n, 3);
    }

    #[test]
    fn two_image_report_matches_hand_computation() {
        let pair = PairSpec::new("toy", "a", "b").unwrap();
        let roi1 = mask(Array2::from_shape_fn((8, 8), |(y, _)| y < 3));
        let roi2 = mask(Array2::from_shape_fn((8, 8), |(_, x)| x < 3));
        let roa1 = mask(Array2::from_shape_fn((8, 8), |(y, x)| y < 3 && x < 6));
        let roa2 = mask(Array2::from_shape_fn((8, 8), |(_, x)| x >= 5));
        let report =
            roi_roa_similarity(&pair, &[roi1.clone(), roi2.clone()], &[roa1.clone(), roa2.clone()])
                .unwrap();
        let expected_mean = (ssim_oracle(&mask_to_map(&roi1), &mask_to_map(&roa1))
            + ssim_oracle(&mask_to_map(&roi2), &mask_to_map(&roa2)))
            / 2.0;
        assert!((report.mean_individual_ssim - expected_mean).abs() < 1e-6);
        let rep_roi = representative_map(&[roi1, roi2]).unwrap();
        let rep_roa = representative_map(&[roa1, roa2]).unwrap();
        let expected_rep = ssim_oracle(&rep_roi.values, &rep_roa.values);
        assert!((report.representative_ssim - expected_rep).abs() < 1e-6);
    }

    #[test]
    fn report_invariant_under_consistent_permutation() {
        let pair = PairSpec::new("toy", "a", "b").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let roi: Vec<BinaryMask> = (0..4)
            .map(|_| mask(Array2::from_shape_fn((8, 8), |_| rng.gen_bool(0.3))))
            .collect();
        let roa: Vec<BinaryMask> = (0..4)
            .map(|_| mask(Array2::from_shape_fn((8, 8), |_| rng.gen_bool(0.3))))
            .collect();
        let fwd = roi_roa_similarity(&pair, &roi, &roa).unwrap();
        let roi_rev: Vec<BinaryMask> = roi.iter().rev().cloned().collect();
        let roa_rev: Vec<BinaryMask> = roa.iter().rev().cloned().collect();
        let rev = roi_roa_similarity(&pair, &roi_rev, &roa_rev).unwrap();
        assert!((fwd.mean_individual_ssim - rev.mean_individual_ssim).abs() < 1e-12);
        assert!((fwd.representative_ssim - rev.representative_ssim).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_error() {
        let pair = PairSpec::new("toy", "a", "b").unwrap();
        let a = vec![mask(Array2::from_elem((8, 8), true))];
        assert!(roi_roa_similarity(&pair, &a, &[]).is_err());
    }
}
