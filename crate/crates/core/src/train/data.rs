//! Per-sample randomness, noise and augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{usage_err, Result};
use crate::eval::image::ImageBuffer;

/// Generator for one training sample.
///
/// The key comes from `seed`; the ChaCha stream number packs
/// `epoch << 40 | image << 20 | patch`, so every (epoch, image, patch) triple
/// draws from its own sequence regardless of the order samples are visited.
pub fn sample_rng(seed: u64, epoch: usize, image: usize, patch: usize) -> ChaCha8Rng {
    debug_assert!(image < 1 << 20 && patch < 1 << 20 && epoch < 1 << 24);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 40) | ((image as u64) << 20) | patch as u64);
    rng
}

/// Adds N(0, sigma²) per sample; `sigma` is on the 0–255 scale. Returns unit-scale reals, unclipped.
pub fn add_awgn<R: Rng>(clean: &ImageBuffer, sigma: f64, rng: &mut R) -> Result<ImageBuffer> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(usage_err!("noise level must be finite and non-negative, got {sigma}"));
    }
    let s = sigma / 255.0;
    let data = clean
        .to_unit()
        .into_iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + s * z
        })
        .collect();
    ImageBuffer::from_real(clean.width(), clean.height(), clean.colorspace(), data)
}

/// The eight symmetries of the square: `index % 4` quarter turns counter-clockwise,
/// then a left-right mirror when `index >= 4`. Odd indices swap the axes and
/// therefore need a square input.
pub fn augment(patch: &ImageBuffer, index: usize) -> Result<ImageBuffer> {
    if index >= 8 {
        return Err(usage_err!("augmentation index {index} outside 0..8"));
    }
    let (w, h) = (patch.width(), patch.height());
    if index % 2 == 1 && w != h {
        return Err(usage_err!("rotation needs a square patch, got {w}x{h}"));
    }
    let mut out = patch.clone();
    for _ in 0..index % 4 {
        let (w, h) = (out.width(), out.height());
        out = out.remap(h, w, |x, y| (w - 1 - y, x));
    }
    if index >= 4 {
        let (w, h) = (out.width(), out.height());
        out = out.remap(w, h, |x, y| (w - 1 - x, y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::image::Colorspace;

    fn ramp(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_u8(w, h, Colorspace::Gray, (0..w * h).map(|i| (i * 7 % 251) as u8).collect()).unwrap()
    }

    #[test]
    fn zero_sigma_leaves_image_unchanged() {
        let img = ramp(5, 4);
        let mut rng = sample_rng(1, 1, 0, 0);
        assert_eq!(add_awgn(&img, 0.0, &mut rng).unwrap(), img.to_real());
    }

    #[test]
    fn noise_std_matches_sigma() {
        let img = ImageBuffer::from_u8(1000, 1000, Colorspace::Gray, vec![128; 1_000_000]).unwrap();
        let mut rng = sample_rng(42, 0, 0, 0);
        let noisy = add_awgn(&img, 25.0, &mut rng).unwrap();
        let d: Vec<f64> = noisy.to_255().iter().zip(img.to_255()).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std - 25.0).abs() < 0.25, "{std}");
    }

    #[test]
    fn same_seed_same_noise() {
        let img = ramp(8, 8);
        let a = add_awgn(&img, 15.0, &mut sample_rng(3, 2, 1, 0)).unwrap();
        let b = add_awgn(&img, 15.0, &mut sample_rng(3, 2, 1, 0)).unwrap();
        let c = add_awgn(&img, 15.0, &mut sample_rng(3, 2, 1, 1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn dihedral_group_properties() {
        let img = ramp(5, 5);
        assert_eq!(augment(&img, 0).unwrap(), img);
        let mut r = img.clone();
        for _ in 0..4 {
            r = augment(&r, 1).unwrap();
        }
        assert_eq!(r, img);
        let all: Vec<_> = (0..8).map(|k| augment(&img, k).unwrap()).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(all[i], all[j], "{i} vs {j}");
            }
        }
        let m = augment(&img, 4).unwrap();
        assert_eq!(augment(&m, 4).unwrap(), img);
    }

    #[test]
    fn rotation_of_rectangle_is_rejected() {
        let img = ramp(4, 3);
        assert!(augment(&img, 1).is_err());
        assert_eq!(augment(&img, 2).unwrap().width(), 4);
        assert!(augment(&img, 8).is_err());
    }
}
