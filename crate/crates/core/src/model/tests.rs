use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{finite_diff_check_many, Coords};
use crate::window::{partition_windows, patchify, roll, roll_reverse};
use crate::Error;

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen::<f64>())
}

fn toy(init: Init) -> Model<f64> {
    Model::new(ModelConfig::toy(), init, 7).unwrap()
}

/// Random values everywhere, including norms and bias tables.
fn scrambled(cfg: ModelConfig, seed: u64, scale: f64) -> Model<f64> {
    let mut m = Model::new(cfg, Init::Standard, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for t in m.params.values_mut() {
        let base = t.clone();
        *t = Tensor::from_fn(t.shape().to_vec(), |i| base.data()[i] + scale * rng.gen_range(-1.0..1.0));
    }
    m
}

fn run<F>(model: &Model<f64>, x: &Tensor<f64>, f: F) -> Tensor<f64>
where
    F: Fn(&Tape<f64>, &Bound<f64>, &Var<f64>) -> Result<Var<f64>>,
{
    let tape = Tape::no_grad();
    let p = model.params.bind_constant(&tape);
    f(&tape, &p, &tape.constant(x)).unwrap().into_value()
}

#[test]
fn zero_model_is_exact_identity() {
    let m = toy(Init::Zeros);
    for (h, w) in [(16, 16), (41, 53), (8, 8)] {
        let x = uniform(&[1, 1, h, w], (h * w) as u64);
        assert_eq!(m.forward(&x).unwrap(), x);
    }
}

#[test]
fn zero_blocks_are_identities() {
    let m = toy(Init::Zeros);
    let cfg = &m.config;
    let x = uniform(&[2, 8, 19, 23], 1);
    assert_eq!(run(&m, &x, |t, p, v| gteblock_forward(t, p, v, &m.layout.gte[0], cfg)), x);
    for kind in [Direction::Ho, Direction::Ve, Direction::Co] {
        assert_eq!(
            run(&m, &x, |t, p, v| directional_transformer_forward(t, p, v, kind, &m.layout.tde[0], cfg)),
            x
        );
    }
    assert_eq!(run(&m, &x, |t, p, v| tdeblock_forward(t, p, v, &m.layout.tde, cfg)), x);
}

#[test]
fn head_residual_survives_zero_inner_convs() {
    let mut m = toy(Init::Standard);
    for conv in &m.layout.head[1..] {
        for id in [conv.weight, conv.bias] {
            let shape = m.params.get(id).shape().to_vec();
            *m.params.get_mut(id) = Tensor::zeros(shape);
        }
    }
    let x = uniform(&[1, 1, 9, 12], 3);
    let head = m.layout.head;
    let got = run(&m, &x, |t, p, v| head_forward(t, p, v, &head));
    let want = run(&m, &x, |t, p, v| head[0].forward(t, p, v));
    assert_eq!(got, want);
    assert_eq!(got.shape(), &[1, 8, 9, 12]);
}

#[test]
fn head_gradients_match_finite_differences() {
    let m = scrambled(ModelConfig::toy(), 4, 0.1);
    let head = m.layout.head;
    let ids: Vec<_> = head.iter().flat_map(|c| [c.weight, c.bias]).collect();
    let mut inputs: Vec<Tensor<f64>> = ids.iter().map(|&id| m.params.get(id).clone()).collect();
    inputs.push(uniform(&[1, 1, 8, 8], 5));
    let probe = uniform(&[1, 8, 8, 8], 6);
    let err = finite_diff_check_many(
        |tape, v| {
            let p = Bound::from_vars(
                m.params
                    .ids()
                    .map(|id| match ids.iter().position(|&k| k == id) {
                        Some(k) => v[k].clone(),
                        None => tape.constant(m.params.get(id)),
                    })
                    .collect(),
            );
            let out = head_forward(tape, &p, &v[ids.len()], &head)?;
            Ok(tape.sum(&tape.mul(&out, &tape.constant(&probe))?))
        },
        &inputs,
        1e-5,
        &Coords::Sample { per_input: 6, seed: 1 },
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn paper_window_holds_256_tokens_of_dim_36c() {
    let cfg = ModelConfig::paper();
    let x = Tensor::<f32>::zeros(vec![1, cfg.channels, 96, 96]);
    let (wins, layout) = partition_windows(&x, cfg.gte_window).unwrap();
    assert_eq!(layout.windows_per_image(), 1);
    let tokens = patchify(&wins, cfg.patch).unwrap();
    assert_eq!(tokens.shape(), &[1, 256, 36 * cfg.channels]);
}

#[test]
fn blocks_preserve_odd_shapes() {
    let m = scrambled(ModelConfig::toy(), 2, 0.05);
    let cfg = &m.config;
    let x = uniform(&[1, 8, 50, 70], 8);
    let y = run(&m, &x, |t, p, v| gteblock_forward(t, p, v, &m.layout.gte[1], cfg));
    assert_eq!(y.shape(), x.shape());
    let x = uniform(&[1, 8, 41, 53], 9);
    let y = run(&m, &x, |t, p, v| tdeblock_forward(t, p, v, &m.layout.tde, cfg));
    assert_eq!(y.shape(), x.shape());
    let img = uniform(&[2, 1, 41, 53], 10);
    let out = m.forward(&img).unwrap();
    assert_eq!(out.shape(), img.shape());
    assert!(out.all_finite());
}

#[test]
fn zero_shift_makes_directions_coincide() {
    let mut cfg = ModelConfig::toy();
    cfg.shift = 0;
    let m = scrambled(cfg, 11, 0.1);
    let x = uniform(&[1, 8, 16, 16], 12);
    let w = &m.layout.tde[3];
    let outs: Vec<_> = [Direction::Ho, Direction::Ve, Direction::Co]
        .into_iter()
        .map(|k| run(&m, &x, |t, p, v| directional_transformer_forward(t, p, v, k, w, &m.config)))
        .collect();
    assert_eq!(outs[0], outs[2]);
    assert_eq!(outs[1], outs[2]);
}

#[test]
fn shifted_layers_are_conjugated_unshifted_layers() {
    let m = scrambled(ModelConfig::toy(), 13, 0.1);
    let s = m.config.shift;
    let w = &m.layout.tde[0];
    for (kind, axis) in [(Direction::Ho, Axis::Horizontal), (Direction::Ve, Axis::Vertical)] {
        let x = uniform(&[1, 8, 16, 24], 14);
        let direct = run(&m, &x, |t, p, v| directional_transformer_forward(t, p, v, kind, w, &m.config));
        let rolled = roll(&x, axis, s).unwrap();
        let inner = run(&m, &rolled, |t, p, v| directional_transformer_forward(t, p, v, Direction::Co, w, &m.config));
        assert_eq!(direct, roll_reverse(&inner, axis, s).unwrap());
    }
}

#[test]
fn directional_order_follows_config() {
    use Direction::*;
    let m = toy(Init::Zeros);
    assert_eq!(m.layer_kinds(), [Ho, Ve, Co, Ho, Ve, Co, Ho, Ve]);
    let mut cfg = ModelConfig::toy();
    cfg.tde_order = TdeOrder::VerticalFirst;
    let m = Model::<f64>::zeros(cfg).unwrap();
    assert_eq!(m.layer_kinds(), [Ve, Ho, Co, Ve, Ho, Co, Ve, Ho]);
}

#[test]
fn forward_is_deterministic() {
    let m = Model::<f32>::new(ModelConfig::toy(), Init::Standard, 3).unwrap();
    let x = uniform(&[1, 1, 24, 20], 15).cast::<f32>();
    assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
}

#[test]
fn registry_matches_closed_form() {
    for (gb, tb) in [(false, true), (true, true), (false, false)] {
        let mut cfg = ModelConfig::toy();
        cfg.gte_rel_bias = gb;
        cfg.tde_rel_bias = tb;
        let m = Model::<f32>::zeros(cfg.clone()).unwrap();
        let brute: usize = m.params.iter().map(|(_, t)| t.shape().iter().product::<usize>()).sum();
        assert_eq!(brute, expected_params(&cfg));
        assert_eq!(m.count_params(), brute);
    }
    let mut cfg = ModelConfig::toy();
    cfg.in_channels = 3;
    assert_eq!(Model::<f32>::zeros(cfg.clone()).unwrap().count_params(), expected_params(&cfg));
}

#[test]
fn registry_names_are_stable() {
    let a = Model::<f32>::zeros(ModelConfig::toy()).unwrap();
    let b = Model::<f32>::new(ModelConfig::toy(), Init::Standard, 99).unwrap();
    let names = |m: &Model<f32>| m.params.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>();
    assert_eq!(names(&a), names(&b));
    assert_eq!(names(&a)[0], "head.conv1.weight");
    assert!(names(&a).iter().any(|n| n == "tde8.ffn.w1.weight"));
}

#[test]
fn wrong_channel_count_is_a_config_error() {
    let m = toy(Init::Zeros);
    let x = uniform(&[1, 3, 16, 16], 0);
    assert!(matches!(m.forward(&x), Err(Error::Config(_))));
}

#[test]
fn non_finite_input_is_a_numeric_error() {
    let m = toy(Init::Zeros);
    let mut x = uniform(&[1, 1, 16, 16], 0);
    x.data_mut()[5] = f64::NAN;
    assert!(matches!(m.forward(&x), Err(Error::Numeric(_))));
}
