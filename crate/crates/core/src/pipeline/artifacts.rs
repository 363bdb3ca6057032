//! Artifact emission: grayscale/region PNGs, JSON sidecars, packed mask
//! bundles, and the score/SSIM CSV tables.

use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::isolation::RegionPartition;
use crate::metrics::SsimReport;
use crate::neutralization::{Blob, ScoreQuad};
use crate::segregation::{BinaryMask, MaskKind, RepresentativeMap, Threshold};

/// Writes an H×W map in [0,1] as an 8-bit grayscale PNG.
pub fn write_map_png(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (h, w) = values.dim();
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(values[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    buf.save(path)
        .map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_map_png(path, &mask.bits.mapv(|b| if b { 1.0 } else { 0.0 }))
}

pub fn write_image_png(path: &Path, img: &Image) -> Result<()> {
    let (h, w, c) = img.dim();
    let result = if c == 1 {
        image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([(img.pixels()[[y as usize, x as usize, 0]] * 255.0).round() as u8])
        })
        .save(path)
    } else {
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            image::Rgb(std::array::from_fn(|ch| {
                (img.pixels()[[y as usize, x as usize, ch]] * 255.0).round() as u8
            }))
        })
        .save(path)
    };
    result.map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// One color per region: UV red, UV̄ green, ŪV blue, ŪV̄ black.
pub fn write_partition_png(path: &Path, partition: &RegionPartition) -> Result<()> {
    let (h, w) = partition.uv.dim();
    let buf = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let idx = (y as usize, x as usize);
        if partition.uv.bits[idx] {
            image::Rgb([220, 50, 50])
        } else if partition.u_vbar.bits[idx] {
            image::Rgb([60, 180, 75])
        } else if partition.ubar_v.bits[idx] {
            image::Rgb([65, 105, 225])
        } else {
            image::Rgb([0, 0, 0])
        }
    });
    buf.save(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Sidecar describing an exported map or mask.
#[derive(Debug, Serialize, Deserialize)]
pub struct MapSidecar {
    pub kind: String,
    pub delta1: Option<Threshold>,
    pub delta2: Option<Threshold>,
    pub n_contributors: Option<usize>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Blob sidecar written next to blob.png.
#[derive(Debug, Serialize, Deserialize)]
pub struct BlobSidecar {
    pub theta: f64,
    pub delta1: Threshold,
    pub delta2: Threshold,
    pub fill_value: f64,
    pub dataset_id: String,
    pub source_class: String,
    pub target_class: String,
    pub n_contributors: usize,
    pub pixel_count: usize,
    pub warning: Option<String>,
}

pub fn blob_sidecar(blob: &Blob) -> BlobSidecar {
    BlobSidecar {
        theta: blob.theta,
        delta1: blob.provenance.delta1,
        delta2: blob.provenance.delta2,
        fill_value: blob.fill_value,
        dataset_id: blob.source_pair.dataset_id.clone(),
        source_class: blob.source_pair.source_class.clone(),
        target_class: blob.source_pair.target_class.clone(),
        n_contributors: blob.provenance.n_contributors,
        pixel_count: blob.mask.count(),
        warning: blob.warning.clone(),
    }
}

/// Packed bundle of equally sized binary masks, base64 bit-packed per mask.
#[derive(Debug, Serialize, Deserialize)]
pub struct MaskBundle {
    pub height: usize,
    pub width: usize,
    pub kind: String,
    pub masks: Vec<String>,
}

pub fn pack_masks(masks: &[BinaryMask], kind: &str) -> Result<MaskBundle> {
    let (h, w) = masks.first().map(|m| m.dim()).unwrap_or((0, 0));
    let mut packed = Vec::with_capacity(masks.len());
    for mask in masks {
        if mask.dim() != (h, w) {
            return Err(Error::Validation("mask bundle dims differ".into()));
        }
        let mut bytes = vec![0u8; (h * w).div_ceil(8)];
        for (i, &bit) in mask.bits.iter().enumerate() {
            if bit {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        packed.push(B64.encode(bytes));
    }
    Ok(MaskBundle {
        height: h,
        width: w,
        kind: kind.to_string(),
        masks: packed,
    })
}

pub fn unpack_masks(bundle: &MaskBundle) -> Result<Vec<BinaryMask>> {
    let kind = match bundle.kind.as_str() {
        "roi" => MaskKind::Roi,
        "roa" => MaskKind::Roa,
        "blob" => MaskKind::Blob,
        _ => MaskKind::Region,
    };
    let (h, w) = (bundle.height, bundle.width);
    bundle
        .masks
        .iter()
        .map(|b64| {
            let bytes = B64
                .decode(b64)
                .map_err(|e| Error::Validation(format!("bad mask payload: {e}")))?;
            if bytes.len() != (h * w).div_ceil(8) {
                return Err(Error::Validation("mask payload size mismatch".into()));
            }
            let bits = Array2::from_shape_fn((h, w), |(y, x)| {
                let i = y * w + x;
                bytes[i / 8] & (1 << (i % 8)) != 0
            });
            Ok(BinaryMask { bits, kind })
        })
        .collect()
}

/// One row of the combined score table.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRow {
    pub dataset: String,
    pub direction: String,
    pub score_clean: f64,
    pub score_adv: f64,
    pub score_mod: f64,
    pub score_mod_adv: f64,
    pub status: String,
}

impl ScoreRow {
    pub fn from_quad(dataset: &str, direction: &str, quad: &ScoreQuad) -> Self {
        Self {
            dataset: dataset.to_string(),
            direction: direction.to_string(),
            score_clean: quad.score_clean,
            score_adv: quad.score_adv,
            score_mod: quad.score_mod,
            score_mod_adv: quad.score_mod_adv,
            status: "ok".to_string(),
        }
    }
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        writer.serialize(row).map_err(csv_err(path))?;
    }
    writer.flush()?;
    Ok(())
}

/// One row of the SSIM table, mirroring the similarity report.
#[derive(Debug, Serialize, Deserialize)]
pub struct SsimRow {
    pub dataset: String,
    pub direction: String,
    pub mean_individual_ssim: f64,
    pub representative_ssim: f64,
    pub n: usize,
}

impl SsimRow {
    pub fn from_report(report: &SsimReport) -> Self {
        Self {
            dataset: report.pair.dataset_id.clone(),
            direction: format!("{} to {}", report.pair.source_class, report.pair.target_class),
            mean_individual_ssim: report.mean_individual_ssim,
            representative_ssim: report.representative_ssim,
            n: report.n,
        }
    }
}

pub fn write_ssim_csv(path: &Path, rows: &[SsimRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        writer.serialize(row).map_err(csv_err(path))?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    let path: PathBuf = path.to_path_buf();
    move |e| Error::Ingestion {
        path: path.clone(),
        reason: e.to_string(),
    }
}

pub fn representative_sidecar(kind: &str, rep: &RepresentativeMap, delta: Threshold) -> MapSidecar {
    MapSidecar {
        kind: kind.to_string(),
        delta1: Some(delta),
        delta2: None,
        n_contributors: Some(rep.n_contributors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mask_bundle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let masks: Vec<BinaryMask> = (0..5)
            .map(|_| BinaryMask {
                bits: Array2::from_shape_fn((9, 11), |_| rng.gen_bool(0.5)),
                kind: MaskKind::Roi,
            })
            .collect();
        let bundle = pack_masks(&masks, "roi").unwrap();
        let back = unpack_masks(&bundle).unwrap();
        assert_eq!(masks.len(), back.len());
        for (a, b) in masks.iter().zip(&back) {
            assert_eq!(a.bits, b.bits);
        }
    }

    #[test]
    fn csv_layout_matches_tables() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let quad = ScoreQuad {
            score_clean: 1.0,
            score_adv: 0.0585,
            score_mod: 0.9688,
            score_mod_adv: 0.4611,
        };
        write_scores_csv(&path, &[ScoreRow::from_quad("mnist", "0 to 1", &quad)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "dataset,direction,score_clean,score_adv,score_mod,score_mod_adv,status"
        ));
        assert!(text.contains("mnist,0 to 1,1.0,0.0585,0.9688,0.4611,ok"));
    }
}
