//! Fidelity metrics on the 0–255 scale. Real-valued images are clipped to [0, 1] first.

use super::image::ImageBuffer;
use crate::error::{usage_err, Result};

fn check_pair(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if (a.width(), a.height(), a.colorspace()) != (b.width(), b.height(), b.colorspace()) {
        return Err(usage_err!(
            "cannot compare {}x{} {:?} with {}x{} {:?}",
            a.width(),
            a.height(),
            a.colorspace(),
            b.width(),
            b.height(),
            b.colorspace()
        ));
    }
    Ok(())
}

/// `10·log10(255² / MSE)` over every sample; identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_pair(a, b)?;
    let (x, y) = (a.clamped().to_255(), b.clamped().to_255());
    let mse = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 255.0;

/// Normalized 11×11 Gaussian, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Single-scale SSIM on luma, averaged over window positions fully inside the image.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(usage_err!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"));
    }
    let (x, y) = (a.clamped().luma_255(), b.clamped().luma_255());
    let win = gaussian_window();
    let c1 = (K1 * L).powi(2);
    let c2 = (K2 * L).powi(2);
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..SSIM_WINDOW {
                for i in 0..SSIM_WINDOW {
                    let g = win[j * SSIM_WINDOW + i];
                    let p = (oy + j) * w + ox + i;
                    let (u, v) = (x[p], y[p]);
                    mx += g * u;
                    my += g * v;
                    sxx += g * u * u;
                    syy += g * v * v;
                    sxy += g * u * v;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (ow * oh) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::image::Colorspace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(w: usize, h: usize, f: impl FnMut(usize) -> u8) -> ImageBuffer {
        ImageBuffer::from_u8(w, h, Colorspace::Gray, (0..w * h).map(f).collect()).unwrap()
    }

    #[test]
    fn psnr_of_uniform_offset() {
        let a = gray(16, 16, |i| (i % 200) as u8);
        let b = gray(16, 16, |i| (i % 200) as u8 + 16);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 10.0 * (255.0f64 * 255.0 / 256.0).log10()).abs() < 1e-12, "{p}");
        assert_eq!(p, psnr(&b, &a).unwrap());
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gray(32, 32, |_| rng.gen());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = gray(32, 32, |_| rng.gen());
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ssim_of_negative_is_low() {
        let a = gray(32, 32, |i| (64 + (i * 37 % 128)) as u8);
        let b = gray(32, 32, |i| 255 - (64 + (i * 37 % 128)) as u8);
        assert!(ssim(&a, &b).unwrap() < 0.2);
    }

    #[test]
    fn small_or_mismatched_inputs_are_rejected() {
        let a = gray(10, 20, |_| 0);
        assert!(ssim(&a, &a).is_err());
        assert!(psnr(&a, &gray(20, 10, |_| 0)).is_err());
    }

    #[test]
    fn window_is_normalized() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[0], w[120]);
    }

    #[test]
    fn psnr_falls_as_noise_grows() {
        use crate::train::data::add_awgn;
        let clean = gray(64, 64, |i| (i * 31 % 256) as u8);
        for seed in 0..5 {
            let scores: Vec<f64> = [5.0, 10.0, 15.0, 25.0, 50.0]
                .iter()
                .map(|&s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    psnr(&add_awgn(&clean, s, &mut rng).unwrap(), &clean).unwrap()
                })
                .collect();
            assert!(scores.windows(2).all(|w| w[1] < w[0]), "{scores:?}");
        }
    }
}
