//! Parameter and FLOP accounting: projection ratio, presets and the window sweep.
//!
//! cargo run --release --example model_accounting

use hwformer::attention::{conv_projection_params, fcl_projection_params};
use hwformer::model::{count_flops, expected_params, window_sweep, ModelConfig};

fn main() -> hwformer::Result<()> {
    println!("one projection, patch 6, weights only");
    for c in [8, 64, 180] {
        let (conv, fcl) = (conv_projection_params(c, false), fcl_projection_params(c, 6, false));
        println!("  C={c:<4} conv {conv:>9}  dense {fcl:>11}  ratio 1/{}", fcl / conv);
    }

    for name in ["toy", "paper"] {
        let cfg = ModelConfig::preset(name)?;
        let f = count_flops(&cfg, 96, 96);
        println!(
            "{name:>5}: {:>11} parameters, {:>15} FLOPs on 96x96 ({:.1}% in attention products)",
            expected_params(&cfg),
            f.total(),
            100.0 * f.attention as f64 / f.total() as f64
        );
    }

    println!("global-block window sweep on a 96x96 image");
    println!("{:>6} {:>5} {:>7} {:>6} {:>16} {:>16}", "window", "patch", "windows", "tokens", "attention FLOPs", "block FLOPs");
    for r in window_sweep(&ModelConfig::paper(), 96, &[4, 6, 8, 12, 24, 48, 96]) {
        println!(
            "{:>6} {:>5} {:>7} {:>6} {:>16} {:>16}",
            r.window, r.patch, r.windows, r.tokens, r.attention_flops, r.block_flops
        );
    }
    Ok(())
}
