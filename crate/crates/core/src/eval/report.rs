use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{fnv1a, NamedImage};
use super::metrics::{psnr, ssim};
use super::tile::{denoise, tile_denoise};
use crate::error::Result;
use crate::model::Model;
use crate::tensor::Scalar;
use crate::train::data::add_awgn;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub sigma: f64,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub ssim_denoised: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Free-form identifier of the weights (checkpoint path or description).
    pub model: String,
    pub rows: Vec<EvalRow>,
    /// Files that could not be read.
    pub skipped: usize,
}

pub const CSV_HEADER: &str = "name,sigma,psnr_noisy,psnr_denoised,ssim_denoised";

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    pub fn mean_psnr_noisy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_noisy))
    }

    pub fn mean_psnr_denoised(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_denoised))
    }

    pub fn mean_ssim_denoised(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim_denoised))
    }

    /// Deterministic CSV (no timings), closing with a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{:.6}",
                r.name,
                r.sigma,
                fmt_db(r.psnr_noisy),
                fmt_db(r.psnr_denoised),
                r.ssim_denoised
            )
            .unwrap();
        }
        if let Some(first) = self.rows.first() {
            writeln!(
                s,
                "mean,{},{},{},{:.6}",
                first.sigma,
                fmt_db(self.mean_psnr_noisy()),
                fmt_db(self.mean_psnr_denoised()),
                self.mean_ssim_denoised()
            )
            .unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let mut s = format!("model: {}\n", self.model);
        writeln!(s, "{:<width$}  {:>6}  {:>10}  {:>10}  {:>8}  {:>8}", "name", "sigma", "noisy dB", "output dB", "ssim", "seconds").unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{:<width$}  {:>6}  {:>10}  {:>10}  {:>8.4}  {:>8.3}",
                r.name,
                r.sigma,
                fmt_db(r.psnr_noisy),
                fmt_db(r.psnr_denoised),
                r.ssim_denoised,
                r.seconds
            )
            .unwrap();
        }
        writeln!(
            s,
            "{:<width$}  {:>6}  {:>10}  {:>10}  {:>8.4}",
            "mean",
            "",
            fmt_db(self.mean_psnr_noisy()),
            fmt_db(self.mean_psnr_denoised()),
            self.mean_ssim_denoised()
        )
        .unwrap();
        if self.skipped > 0 {
            writeln!(s, "skipped {} unreadable file(s)", self.skipped).unwrap();
        }
        s
    }
}

/// Noise generator for evaluating `name` at `sigma`, independent of image order.
pub fn eval_rng(seed: u64, name: &str, sigma: f64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()) ^ sigma.to_bits());
    rng
}

/// Corrupts each image, denoises it (tiled when `tiling` is given as `(tile, overlap)`) and scores
/// the 8-bit export of the result. Rows come back in input order.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    images: &[NamedImage],
    sigma: f64,
    seed: u64,
    tiling: Option<(usize, usize)>,
) -> Result<Vec<EvalRow>> {
    images
        .iter()
        .map(|img| {
            let clean = &img.image;
            let noisy = add_awgn(clean, sigma, &mut eval_rng(seed, &img.name, sigma))?;
            let started = Instant::now();
            let out = match tiling {
                Some((t, o)) => tile_denoise(model, &noisy, t, o)?,
                None => denoise(model, &noisy)?,
            }
            .to_u8();
            let seconds = started.elapsed().as_secs_f64();
            Ok(EvalRow {
                name: img.name.clone(),
                sigma,
                psnr_noisy: psnr(&noisy, clean)?,
                psnr_denoised: psnr(&out, clean)?,
                ssim_denoised: ssim(&out, clean)?,
                seconds,
            })
        })
        .collect()
}
