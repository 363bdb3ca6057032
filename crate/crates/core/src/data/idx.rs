//! Reader and writer for the big-endian IDX byte format used by the
//! grayscale benchmark datasets.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::bufread::GzDecoder;
use ndarray::Array3;

use crate::error::{Error, Result};

use super::{ClassLabel, Image, LabeledImageSet, PairSpec, Split};

const MAGIC_IMAGES: u32 = 0x0000_0803;
const MAGIC_LABELS: u32 = 0x0000_0801;

const FASHION_CLASSES: [&str; 10] = [
    "T-shirt/top",
    "Trouser",
    "Pullover",
    "Dress",
    "Coat",
    "Sandal",
    "Shirt",
    "Sneaker",
    "Bag",
    "Ankle boot",
];

fn open(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|ext| ext == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_u32_be(r: &mut dyn Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: format!("truncated header: {e}"),
    })?;
    Ok(u32::from_be_bytes(buf))
}

/// Reads an IDX image file (optionally gzipped) into `[0,1]` images.
pub fn read_idx_images(path: &Path) -> Result<Vec<Image>> {
    let mut r = open(path)?;
    let magic = read_u32_be(&mut r, path)?;
    if magic != MAGIC_IMAGES {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            reason: format!("bad image magic 0x{magic:08x}"),
        });
    }
    let n = read_u32_be(&mut r, path)? as usize;
    let rows = read_u32_be(&mut r, path)? as usize;
    let cols = read_u32_be(&mut r, path)? as usize;
    let mut data = vec![0u8; n * rows * cols];
    r.read_exact(&mut data).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: format!("truncated pixel data: {e}"),
    })?;
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let slice = &data[i * rows * cols..(i + 1) * rows * cols];
        let pixels =
            Array3::from_shape_fn((rows, cols, 1), |(y, x, _)| slice[y * cols + x] as f64 / 255.0);
        images.push(Image::new(pixels)?);
    }
    Ok(images)
}

/// Reads an IDX label file (optionally gzipped).
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = open(path)?;
    let magic = read_u32_be(&mut r, path)?;
    if magic != MAGIC_LABELS {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            reason: format!("bad label magic 0x{magic:08x}"),
        });
    }
    let n = read_u32_be(&mut r, path)? as usize;
    let mut data = vec![0u8; n];
    r.read_exact(&mut data).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: format!("truncated label data: {e}"),
    })?;
    Ok(data)
}

/// Writes grayscale images to an uncompressed IDX file.
pub fn write_idx_images(path: &Path, images: &[Image]) -> Result<()> {
    let (h, w) = match images.first() {
        Some(img) => (img.height(), img.width()),
        None => (0, 0),
    };
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC_IMAGES.to_be_bytes())?;
    out.write_all(&(images.len() as u32).to_be_bytes())?;
    out.write_all(&(h as u32).to_be_bytes())?;
    out.write_all(&(w as u32).to_be_bytes())?;
    for img in images {
        if img.dim() != (h, w, 1) {
            return Err(Error::Validation(
                "IDX export requires uniform grayscale images".into(),
            ));
        }
        for y in 0..h {
            for x in 0..w {
                out.write_all(&[(img.pixels()[[y, x, 0]] * 255.0).round() as u8])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC_LABELS.to_be_bytes())?;
    out.write_all(&(labels.len() as u32).to_be_bytes())?;
    out.write_all(labels)?;
    out.flush()?;
    Ok(())
}

/// Resolves a class name to a digit index for the built-in datasets.
fn class_index(dataset_id: &str, name: &str) -> Result<u8> {
    if let Ok(d) = name.parse::<u8>() {
        if d < 10 {
            return Ok(d);
        }
    }
    if dataset_id == "fashion-mnist" {
        if let Some(i) = FASHION_CLASSES
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name) || (name == "Trousers" && *c == "Trouser"))
        {
            return Ok(i as u8);
        }
    }
    Err(Error::Config(format!(
        "unknown class '{name}' for dataset '{dataset_id}'"
    )))
}

fn idx_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for cand in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&cand);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Config(format!(
        "missing IDX file '{stem}' under {}",
        dir.display()
    )))
}

fn load_idx_split(
    dir: &Path,
    prefix: &str,
    spec: &PairSpec,
    tag: Split,
) -> Result<LabeledImageSet> {
    let images = read_idx_images(&idx_file(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let raw_labels = read_idx_labels(&idx_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    if images.len() != raw_labels.len() {
        return Err(Error::Ingestion {
            path: dir.to_path_buf(),
            reason: format!("{} images vs {} labels", images.len(), raw_labels.len()),
        });
    }
    let source = class_index(&spec.dataset_id, &spec.source_class)?;
    let target = class_index(&spec.dataset_id, &spec.target_class)?;
    let mut out_images = Vec::new();
    let mut out_labels = Vec::new();
    for (img, &raw) in images.into_iter().zip(&raw_labels) {
        let label = if raw == source {
            ClassLabel::Source
        } else if raw == target {
            ClassLabel::Target
        } else {
            continue;
        };
        out_images.push(img);
        out_labels.push(label);
    }
    LabeledImageSet::new(
        out_images,
        out_labels,
        (spec.source_class.clone(), spec.target_class.clone()),
        tag,
    )
}

/// Loads the train/test pair for an IDX-format dataset directory.
pub fn load_idx_pair(spec: &PairSpec, dir: &Path) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let train = load_idx_split(dir, "train", spec, Split::Train)?;
    let test = load_idx_split(dir, "t10k", spec, Split::Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images: Vec<Image> = (0..3)
            .map(|i| {
                Image::new(Array3::from_shape_fn((8, 8, 1), |(y, x, _)| {
                    ((y * 8 + x + i) % 256) as f64 / 255.0
                }))
                .unwrap()
            })
            .collect();
        let img_path = dir.path().join("imgs");
        let lbl_path = dir.path().join("lbls");
        write_idx_images(&img_path, &images).unwrap();
        write_idx_labels(&lbl_path, &[0, 1, 0]).unwrap();
        let back = read_idx_images(&img_path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in images.iter().zip(&back) {
            assert_eq!(a.pixels(), b.pixels());
        }
        assert_eq!(read_idx_labels(&lbl_path).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn bad_magic_is_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        std::fs::write(&p, [0u8; 16]).unwrap();
        match read_idx_images(&p) {
            Err(Error::Ingestion { .. }) => {}
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn fashion_class_names_resolve() {
        assert_eq!(class_index("fashion-mnist", "Trouser").unwrap(), 1);
        assert_eq!(class_index("fashion-mnist", "Trousers").unwrap(), 1);
        assert_eq!(class_index("fashion-mnist", "Pullover").unwrap(), 2);
        assert_eq!(class_index("mnist", "7").unwrap(), 7);
        assert!(class_index("mnist", "cat").is_err());
    }
}
