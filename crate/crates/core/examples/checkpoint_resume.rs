//! Interrupting training and resuming from a checkpoint reproduces the uninterrupted run.
//!
//! cargo run --release --example checkpoint_resume

use hwformer::eval::dataset::split_validation;
use hwformer::eval::synth::corpus;
use hwformer::model::{Model, ModelConfig};
use hwformer::nn::Init;
use hwformer::train::{train, Checkpoint, OptimState, TrainConfig};

fn run(cfg: &TrainConfig, from: Option<&Checkpoint>) -> hwformer::Result<Checkpoint> {
    let split = split_validation(corpus(12, 32, 4));
    let (mut model, mut state) = match from {
        Some(c) => {
            let m: Model<f32> = c.to_model()?;
            let s = c.optim_state(&m)?.unwrap_or_else(|| OptimState::new(&m.params));
            (m, s)
        }
        None => {
            let m = Model::<f32>::new(ModelConfig::toy(), Init::Standard, cfg.seed)?;
            let s = OptimState::new(&m.params);
            (m, s)
        }
    };
    let out = train(&mut model, &mut state, cfg, &split, None, |e| println!("  {e}"))?;
    println!("  stopped at step {}", out.steps);
    Ok(Checkpoint::from_model(&model, Some(&state), Some(cfg)))
}

fn main() -> hwformer::Result<()> {
    let cfg = |steps| TrainConfig {
        max_steps: steps,
        patches_per_image: 2,
        ..TrainConfig::toy()
    };
    println!("uninterrupted, 10 steps");
    let straight = run(&cfg(10), None)?;
    println!("4 steps, saved, reloaded, then up to 10");
    let bytes = run(&cfg(4), None)?.encode();
    let resumed = run(&cfg(10), Some(&Checkpoint::decode(&bytes)?))?;
    println!(
        "checkpoint is {} bytes; resumed == uninterrupted: {}",
        bytes.len(),
        resumed.encode() == straight.encode()
    );
    Ok(())
}
