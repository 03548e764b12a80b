//! Quick invariant suite run by `hwformer selftest`.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{conv_projection_params, fcl_projection_params};
use crate::error::Result;
use crate::model::{count_flops, Model, ModelConfig};
use crate::nn::{Bound, Init};
use crate::tensor::{finite_diff_report, Coords, Tensor};
use crate::train::{lr_at, Checkpoint};
use crate::window::{merge_windows, partition_windows, patchify, roll, roll_reverse, unpatchify, Axis};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {:<22} {:>7.3}s  {}", self.name, self.seconds, self.detail)
    }
}

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn projection_ratio() -> Result<(bool, String)> {
    let ok = [8usize, 64, 180].iter().all(|&c| {
        let conv = conv_projection_params(c, false);
        let fcl = fcl_projection_params(c, 6, false);
        fcl == 144 * conv
    });
    let mut sizes = Vec::new();
    for patch in [4, 6, 8] {
        let cfg = ModelConfig {
            gte_window: 48,
            patch,
            ..ModelConfig::toy()
        };
        let m = Model::<f32>::zeros(cfg)?;
        sizes.push(m.params.iter().filter(|(n, _)| n.starts_with("gte1.attn.")).map(|(_, t)| t.len()).sum::<usize>());
    }
    let same = sizes.windows(2).all(|w| w[0] == w[1]) && sizes[0] == 4 * conv_projection_params(8, true);
    Ok((ok && same, "conv/fcl = 1/144 for C in {8,64,180}; same count for p in {4,6,8}".into()))
}

fn identity_model() -> Result<(bool, String)> {
    let m = Model::<f64>::zeros(ModelConfig::toy())?;
    let mut ok = true;
    for (i, (h, w)) in [(16, 16), (41, 53)].into_iter().enumerate() {
        let x = uniform(&[1, 1, h, w], i as u64);
        ok &= m.forward(&x)? == x;
    }
    Ok((ok, "zero-weight toy model on 16x16 and 41x53".into()))
}

fn window_round_trips() -> Result<(bool, String)> {
    let x = uniform(&[2, 4, 19, 27], 3);
    let (wins, layout) = partition_windows(&x, 8)?;
    let mut ok = merge_windows(&wins, &layout)? == x;
    ok &= unpatchify(&patchify(&wins, 2)?, 4, 8, 2)? == wins;
    for axis in [Axis::Horizontal, Axis::Vertical] {
        ok &= roll_reverse(&roll(&x, axis, 5)?, axis, 5)? == x;
    }
    Ok((ok, "partition/merge, patchify/unpatchify, roll/roll_reverse".into()))
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let m = Model::<f32>::new(ModelConfig::toy(), Init::Standard, 5)?;
    let bytes = Checkpoint::from_model(&m, None, None).encode();
    let back: Model<f32> = Checkpoint::decode(&bytes)?.to_model()?;
    let again = Checkpoint::from_model(&back, None, None).encode();
    let x = uniform(&[1, 1, 16, 16], 4).cast::<f32>();
    let ok = bytes == again && m.forward(&x)? == back.forward(&x)?;
    Ok((ok, format!("{} bytes, identical after reload", bytes.len())))
}

/// Toy model with every parameter, biases and norms included, moved off its
/// initial value, so no ReLU input sits exactly on its kink.
pub fn generic_toy_model(seed: u64) -> Result<Model<f64>> {
    let mut m = Model::<f64>::new(ModelConfig::toy(), Init::Standard, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b1d);
    for t in m.params.values_mut() {
        for v in t.data_mut() {
            *v += 0.05 * rng.gen_range(-1.0..1.0);
        }
    }
    Ok(m)
}

fn gradients() -> Result<(bool, String)> {
    let m = generic_toy_model(6)?;
    let mut inputs: Vec<Tensor<f64>> = m.params.iter().map(|(_, t)| t.clone()).collect();
    let n = inputs.len();
    inputs.push(uniform(&[1, 1, 8, 8], 7));
    let probe = uniform(&[1, 1, 8, 8], 8);
    let r = finite_diff_report(
        |tape, v| {
            let p = Bound::from_vars(v[..n].to_vec());
            let out = m.forward_on(tape, &p, &v[n])?;
            Ok(tape.sum(&tape.mul(&out, &tape.constant(&probe))?))
        },
        &inputs,
        1e-6,
        &Coords::Sample { per_input: 2, seed: 9 },
        1e-4,
    )?;
    let ok = r.max_error <= 1e-4 && r.kinks * 10 <= r.probes;
    Ok((
        ok,
        format!("toy model, {} probes ({} at kinks), max error {:.2e}", r.probes, r.kinks, r.max_error),
    ))
}

fn schedule_and_flops() -> Result<(bool, String)> {
    let table = [(1, 1e-4), (15, 5e-5), (22, 2.5e-5), (28, 7.8125e-7)];
    let lr_ok = table.iter().all(|&(e, v)| lr_at(e, 1e-4) == v);
    let cfg = ModelConfig::toy();
    let head = count_flops(&cfg, 16, 16).head;
    let flops_ok = head == 2 * 16 * 16 * 8 * 9 + 4 * (2 * 16 * 16 * 64 * 9);
    Ok((lr_ok && flops_ok, "lr halvings and conv FLOP closed form".into()))
}

/// Runs every check; errors inside a check count as failures.
pub fn run() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Result<(bool, String)>); 6] = [
        ("projection-ratio", projection_ratio),
        ("identity-model", identity_model),
        ("window-round-trips", window_round_trips),
        ("checkpoint-round-trip", checkpoint_round_trip),
        ("gradient-check", gradients),
        ("schedule-and-flops", schedule_and_flops),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let started = Instant::now();
            let (passed, detail) = f().unwrap_or_else(|e| (false, e.to_string()));
            Check {
                name,
                passed,
                detail,
                seconds: started.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_check_passes() {
        for c in super::run() {
            assert!(c.passed, "{c}");
        }
    }
}
