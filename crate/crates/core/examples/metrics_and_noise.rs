//! PSNR and SSIM of a synthetic texture under increasing Gaussian noise, with a PGM round trip.
//!
//! cargo run --release --example metrics_and_noise -- [out_dir]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hwformer::eval::metrics::{psnr, ssim};
use hwformer::eval::pnm::{read_image, write_image};
use hwformer::eval::synth::texture;
use hwformer::train::data::add_awgn;

fn main() -> hwformer::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let clean = texture(96, 0, 0);
    println!("{:>6} {:>9} {:>7}", "sigma", "PSNR dB", "SSIM");
    for sigma in [5.0, 15.0, 25.0, 50.0] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy = add_awgn(&clean, sigma, &mut rng)?.to_u8();
        println!("{sigma:>6} {:>9.2} {:>7.4}", psnr(&noisy, &clean)?, ssim(&noisy, &clean)?);
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).ok();
            let path = dir.join(format!("texture_sigma{sigma}.pgm"));
            write_image(&noisy, &path)?;
            assert_eq!(read_image(&path)?, noisy);
            println!("       wrote {}", path.display());
        }
    }
    Ok(())
}
