use std::path::{Path, PathBuf};

use super::image::{Colorspace, ImageBuffer};
use super::pnm::read_image;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedImage {
    pub name: String,
    pub image: ImageBuffer,
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// PGM/PPM files in `dir` sorted by file name, converted to `colorspace`.
/// Unreadable files are returned separately.
pub fn load_dir(dir: impl AsRef<Path>, colorspace: Colorspace) -> Result<(Vec<NamedImage>, Vec<(PathBuf, Error)>)> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_pnm(p))
        .collect();
    paths.sort();
    let mut images = Vec::new();
    let mut failed = Vec::new();
    for path in paths {
        match read_image(&path) {
            Ok(img) => images.push(NamedImage {
                name: path.file_name().unwrap().to_string_lossy().into_owned(),
                image: img.convert(colorspace),
            }),
            Err(e) => failed.push((path, e)),
        }
    }
    Ok((images, failed))
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

pub const VALIDATION_FRACTION: f64 = 0.05;

/// Training and held-out images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<NamedImage>,
    pub val: Vec<NamedImage>,
}

/// Holds out the 5% (at least one) of images whose names hash lowest. Both
/// halves keep name order. A single image is used for both.
pub fn split_validation(mut images: Vec<NamedImage>) -> Split {
    images.sort_by(|a, b| a.name.cmp(&b.name));
    if images.len() < 2 {
        return Split {
            val: images.clone(),
            train: images,
        };
    }
    let k = ((images.len() as f64 * VALIDATION_FRACTION).round() as usize).max(1);
    let mut ranked: Vec<(u64, usize)> = images.iter().enumerate().map(|(i, im)| (fnv1a(im.name.as_bytes()), i)).collect();
    ranked.sort_unstable();
    let mut held = vec![false; images.len()];
    for &(_, i) in &ranked[..k] {
        held[i] = true;
    }
    let mut split = Split::default();
    for (img, h) in images.into_iter().zip(held) {
        if h {
            split.val.push(img);
        } else {
            split.train.push(img);
        }
    }
    split
}
