//! Trains the toy network on generated textures and reports the validation gain.
//!
//! cargo run --release --example train_synthetic -- [steps] [checkpoint]

use std::path::PathBuf;
use std::time::Instant;

use hwformer::eval::dataset::split_validation;
use hwformer::eval::synth::corpus;
use hwformer::model::{Model, ModelConfig};
use hwformer::nn::Init;
use hwformer::train::{train, OptimState, TrainConfig};

fn main() -> hwformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(2000, |s| s.parse().expect("steps must be an integer"));
    let out = args.next().map(PathBuf::from);

    let split = split_validation(corpus(64, 32, 0));
    let cfg = TrainConfig {
        max_steps: steps,
        ..TrainConfig::toy()
    };
    let mut model = Model::<f32>::new(ModelConfig::toy(), Init::Standard, cfg.seed)?;
    let mut state = OptimState::new(&model.params);
    println!(
        "{} train / {} val images, {} parameters",
        split.train.len(),
        split.val.len(),
        model.count_params()
    );

    let started = Instant::now();
    let outcome = train(&mut model, &mut state, &cfg, &split, out.as_deref(), |e| {
        println!("{e}  ({:.0} s)", started.elapsed().as_secs_f64())
    })?;

    let noisy = outcome.noisy_val_psnr;
    println!("steps           {}", outcome.steps);
    println!("probe loss      {:.3e} -> {:.3e}", outcome.initial_loss, outcome.final_loss);
    println!("val PSNR noisy  {noisy:.2} dB");
    println!("val PSNR best   {:.2} dB (epoch {})", outcome.best_val_psnr, outcome.best_epoch);
    println!("gain            {:+.2} dB", outcome.best_val_psnr - noisy);
    Ok(())
}
