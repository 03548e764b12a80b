//! Procedural grayscale textures: a smooth ramp, oriented gratings and a few
//! flat-shaded shapes with hard edges.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::NamedImage;
use super::image::{Colorspace, ImageBuffer};
use super::pnm::write_image;
use crate::error::{Error, Result};

pub fn texture(size: usize, seed: u64, index: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let n = size as f64;
    let (base, gx, gy) = (rng.gen_range(0.3..0.7), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let gratings: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(1..=2))
        .map(|_| {
            let angle = rng.gen_range(0.0..PI);
            let cycles = rng.gen_range(1.5..5.0);
            (angle, 2.0 * PI * cycles / n, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.05..0.18))
        })
        .collect();
    let shapes: Vec<(bool, f64, f64, f64, f64, f64)> = (0..rng.gen_range(2..=4))
        .map(|_| {
            (
                rng.gen_bool(0.5),
                rng.gen_range(0.0..n),
                rng.gen_range(0.0..n),
                rng.gen_range(n / 8.0..n / 2.5),
                rng.gen_range(n / 8.0..n / 2.5),
                rng.gen_range(-0.3..0.3),
            )
        })
        .collect();
    let data = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64, (i / size) as f64);
            let mut v = base + gx * (x / n - 0.5) + gy * (y / n - 0.5);
            for &(a, k, ph, amp) in &gratings {
                v += amp * (k * (x * a.cos() + y * a.sin()) + ph).sin();
            }
            for &(disc, cx, cy, rx, ry, off) in &shapes {
                let inside = if disc {
                    ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
                } else {
                    (x - cx).abs() <= rx && (y - cy).abs() <= ry
                };
                if inside {
                    v += off;
                }
            }
            (v.clamp(0.02, 0.98) * 255.0).round() as u8
        })
        .collect();
    ImageBuffer::from_u8(size, size, Colorspace::Gray, data).expect("size matches")
}

/// `count` textures named `tex0000.pgm`, `tex0001.pgm`, …
pub fn corpus(count: usize, size: usize, seed: u64) -> Vec<NamedImage> {
    (0..count)
        .map(|i| NamedImage {
            name: format!("tex{i:04}.pgm"),
            image: texture(size, seed, i),
        })
        .collect()
}

pub fn write_corpus(dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for img in corpus(count, size, seed) {
        write_image(&img.image, dir.join(&img.name))?;
    }
    Ok(())
}
