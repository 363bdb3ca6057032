//! Generic ingestion of a class-per-subdirectory tree of PNG/JPEG files.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ColorType, DynamicImage};
use ndarray::Array3;

use crate::error::{Error, Result};

use super::{ClassLabel, Image, IngestOptions, LabeledImageSet, PairSpec, Split};

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
    )
}

fn class_files(dir: &Path, class: &str) -> Result<Vec<PathBuf>> {
    let class_dir = dir.join(class);
    if !class_dir.is_dir() {
        return Err(Error::Config(format!(
            "missing class directory {}",
            class_dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&class_dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .map(|e| e.into_path())
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "class directory {} contains no images",
            class_dir.display()
        )));
    }
    Ok(files)
}

fn decode(path: &Path, resize: usize) -> Result<DynamicImage> {
    let img = image::open(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(img.resize_exact(resize as u32, resize as u32, FilterType::Triangle))
}

fn has_color(img: &DynamicImage) -> bool {
    !matches!(img.color(), ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16)
}

fn to_image(img: &DynamicImage, rgb: bool) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = if rgb {
        let buf = img.to_rgb8();
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            buf.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
        })
    } else {
        let buf = img.to_luma8();
        Array3::from_shape_fn((h, w, 1), |(y, x, _)| {
            buf.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
        })
    };
    Image::new(pixels)
}

/// Loads both classes from `dir`, resized to `opts.resize` squares.
///
/// The whole tree is returned as one train-tagged set; the caller applies the
/// holdout split. Grayscale is kept single-channel unless any file carries
/// color, in which case the whole set becomes RGB.
pub fn load_folder_pair(
    spec: &PairSpec,
    dir: &Path,
    opts: &IngestOptions,
) -> Result<LabeledImageSet> {
    let mut decoded = Vec::new();
    for (class, label) in [
        (&spec.source_class, ClassLabel::Source),
        (&spec.target_class, ClassLabel::Target),
    ] {
        for path in class_files(dir, class)? {
            decoded.push((decode(&path, opts.resize)?, label));
        }
    }
    let rgb = decoded.iter().any(|(img, _)| has_color(img));
    let mut images = Vec::with_capacity(decoded.len());
    let mut labels = Vec::with_capacity(decoded.len());
    for (img, label) in &decoded {
        images.push(to_image(img, rgb)?);
        labels.push(*label);
    }
    LabeledImageSet::new(
        images,
        labels,
        (spec.source_class.clone(), spec.target_class.clone()),
        Split::Train,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, value: u8) {
        let buf = image::GrayImage::from_pixel(w, h, image::Luma([value]));
        buf.save(path).unwrap();
    }

    #[test]
    fn loads_two_classes_resized() {
        let dir = tempfile::tempdir().unwrap();
        for (class, value) in [("cell", 40u8), ("empty", 200u8)] {
            let cdir = dir.path().join(class);
            std::fs::create_dir(&cdir).unwrap();
            for i in 0..3 {
                write_png(&cdir.join(format!("{i}.png")), 20, 20, value);
            }
        }
        let spec = PairSpec::new("d", "cell", "empty").unwrap();
        let opts = IngestOptions {
            resize: 16,
            ..Default::default()
        };
        let set = load_folder_pair(&spec, dir.path(), &opts).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.images[0].dim(), (16, 16, 1));
        assert!((set.images[0].pixels()[[0, 0, 0]] - 40.0 / 255.0).abs() < 1e-9);
    }

    #[test]
    fn empty_class_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cdir = dir.path().join("cell");
        std::fs::create_dir(&cdir).unwrap();
        write_png(&cdir.join("0.png"), 10, 10, 10);
        std::fs::create_dir(dir.path().join("empty")).unwrap();
        let spec = PairSpec::new("d", "cell", "empty").unwrap();
        match load_folder_pair(&spec, dir.path(), &IngestOptions::default()) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_file_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["a", "b"] {
            let cdir = dir.path().join(class);
            std::fs::create_dir(&cdir).unwrap();
            write_png(&cdir.join("ok.png"), 10, 10, 10);
        }
        std::fs::write(dir.path().join("a/broken.png"), b"not a png").unwrap();
        let spec = PairSpec::new("d", "a", "b").unwrap();
        match load_folder_pair(&spec, dir.path(), &IngestOptions::default()) {
            Err(Error::Ingestion { path, .. }) => {
                assert!(path.ends_with("broken.png"));
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }
}
