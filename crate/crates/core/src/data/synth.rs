//! Deterministic synthetic dataset generators.
//!
//! The pipeline is dataset-agnostic but the benchmarks it targets are not
//! redistributable here, so these generators produce stand-in corpora in the
//! same on-disk formats: seven-segment style digits written as IDX files, and
//! a two-class "cell" corpus written as a class-per-folder PNG tree.

use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{idx, Image};

const SIDE: usize = 28;

/// Segment bits (A,B,C,D,E,F,G) per digit, seven-segment convention.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],     // 0
    [false, true, true, false, false, false, false], // 1
    [true, true, false, true, true, false, true],    // 2
    [true, true, true, true, false, false, true],    // 3
    [false, true, true, false, false, true, true],   // 4
    [true, false, true, true, false, true, true],    // 5
    [true, false, true, true, true, true, true],     // 6
    [true, true, true, false, false, false, false],  // 7
    [true, true, true, true, true, true, true],      // 8
    [true, true, true, true, false, true, true],     // 9
];

fn draw_segment(canvas: &mut Array3<f64>, seg: usize, dx: i32, dy: i32, intensity: f64) {
    // Glyph box: x in [9,19], y in [5,23], stroke thickness 3.
    let (x0, x1, ytop, ymid, ybot) = (9i32, 19i32, 5i32, 14i32, 23i32);
    let mut stroke = |xa: i32, ya: i32, xb: i32, yb: i32| {
        for y in ya.min(yb)..=ya.max(yb) {
            for x in xa.min(xb)..=xa.max(xb) {
                for (tx, ty) in [(0, 0), (1, 0), (0, 1)] {
                    let px = x + dx + tx;
                    let py = y + dy + ty;
                    if (0..SIDE as i32).contains(&px) && (0..SIDE as i32).contains(&py) {
                        canvas[[py as usize, px as usize, 0]] = intensity;
                    }
                }
            }
        }
    };
    match seg {
        0 => stroke(x0, ytop, x1, ytop),
        1 => stroke(x1, ytop, x1, ymid),
        2 => stroke(x1, ymid, x1, ybot),
        3 => stroke(x0, ybot, x1, ybot),
        4 => stroke(x0, ymid, x0, ybot),
        5 => stroke(x0, ytop, x0, ymid),
        _ => stroke(x0, ymid, x1, ymid),
    }
}

/// Renders one jittered digit image.
pub fn render_digit(digit: u8, rng: &mut impl Rng) -> Image {
    let mut canvas = Array3::<f64>::zeros((SIDE, SIDE, 1));
    let dx = rng.gen_range(-2..=2);
    let dy = rng.gen_range(-2..=2);
    let intensity = rng.gen_range(0.75..1.0);
    for (seg, &on) in SEGMENTS[digit as usize % 10].iter().enumerate() {
        if on {
            draw_segment(&mut canvas, seg, dx, dy, intensity);
        }
    }
    for v in canvas.iter_mut() {
        let noisy = *v + rng.gen_range(-0.04..0.04f64);
        *v = noisy.clamp(0.0, 1.0);
    }
    Image::from_parts_unchecked(canvas)
}

/// Writes an IDX-format digit dataset (train + t10k files) under `dir`.
pub fn generate_digit_idx(
    dir: &Path,
    classes: &[u8],
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (prefix, per_class) in [("train", train_per_class), ("t10k", test_per_class)] {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        // interleave classes so file order is not sorted by label
        for i in 0..per_class {
            for &digit in classes {
                images.push(render_digit(digit, &mut rng));
                labels.push(digit);
                let _ = i;
            }
        }
        idx::write_idx_images(&dir.join(format!("{prefix}-images-idx3-ubyte")), &images)?;
        idx::write_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")), &labels)?;
    }
    Ok(())
}

/// Renders one 32x32 cell image: noisy dark background, bright disk, and for
/// the positive class a bright dot inside the disk.
pub fn render_cell(infected: bool, rng: &mut impl Rng) -> Image {
    let side = 32usize;
    let mut canvas = Array3::<f64>::zeros((side, side, 1));
    let cx = 16.0 + rng.gen_range(-1.5..1.5);
    let cy = 16.0 + rng.gen_range(-1.5..1.5);
    let radius = rng.gen_range(9.0..11.0);
    let body = rng.gen_range(0.5..0.62);
    for y in 0..side {
        for x in 0..side {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let base: f64 = if d <= radius {
                body + rng.gen_range(-0.05..0.05)
            } else {
                rng.gen_range(0.02..0.25)
            };
            canvas[[y, x, 0]] = base.clamp(0.0, 1.0);
        }
    }
    if infected {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist = rng.gen_range(0.0..radius - 4.0);
        let px = cx + dist * angle.cos();
        let py = cy + dist * angle.sin();
        let dot_r = rng.gen_range(2.0..3.0);
        for y in 0..side {
            for x in 0..side {
                let d = ((x as f64 - px).powi(2) + (y as f64 - py).powi(2)).sqrt();
                if d <= dot_r {
                    canvas[[y, x, 0]] = rng.gen_range(0.88..0.98);
                }
            }
        }
    }
    Image::from_parts_unchecked(canvas)
}

/// Writes a class-per-folder PNG cell corpus under `dir`
/// (`parasitized/` and `uninfected/`).
pub fn generate_cell_folders(dir: &Path, per_class: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (class, infected) in [("parasitized", true), ("uninfected", false)] {
        let cdir = dir.join(class);
        std::fs::create_dir_all(&cdir)?;
        for i in 0..per_class {
            let img = render_cell(infected, &mut rng);
            let side = img.height() as u32;
            let buf = image::GrayImage::from_fn(side, side, |x, y| {
                image::Luma([(img.pixels()[[y as usize, x as usize, 0]] * 255.0).round() as u8])
            });
            buf.save(cdir.join(format!("{i:05}.png"))).map_err(|e| {
                crate::error::Error::Ingestion {
                    path: cdir.join(format!("{i:05}.png")),
                    reason: e.to_string(),
                }
            })?;
        }
    }
    Ok(())
}
