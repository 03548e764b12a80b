//! Denoises one generated texture whole and with several tilings, using a checkpoint.
//!
//! cargo run --release --example tiled_inference -- <checkpoint> [size]

use hwformer::eval::metrics::psnr;
use hwformer::eval::synth::texture;
use hwformer::eval::tile::{denoise, tile_denoise};
use hwformer::model::Model;
use hwformer::train::data::add_awgn;
use hwformer::train::Checkpoint;
use rand::SeedableRng;

fn main() -> hwformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: tiled_inference <checkpoint> [size]");
    let size: usize = args.next().map_or(64, |s| s.parse().expect("size must be an integer"));
    let model: Model<f32> = Checkpoint::load(&path)?.to_model()?;
    let sigma = 25.0;

    let clean = texture(size, 9, 3);
    let noisy = add_awgn(&clean, sigma, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    println!("noisy           {:.3} dB", psnr(&noisy, &clean)?);
    println!("whole image     {:.3} dB", psnr(&denoise(&model, &noisy)?, &clean)?);
    for (tile, overlap) in [(16, 0), (16, 8), (32, 8), (32, 16), (48, 16), (24, 12)] {
        let out = tile_denoise(&model, &noisy, tile, overlap)?;
        println!("tile {tile:>3} / {overlap:>2}  {:.3} dB", psnr(&out, &clean)?);
    }
    Ok(())
}
