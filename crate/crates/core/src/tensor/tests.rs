use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Direct seven-loop convolution used as the reference.
fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let [n, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; n * cout * h * wd];
    for ni in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((co * cin + ci) * k + ky) * k + kx]
                                    * x.data()[((ni * cin + ci) * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                    out[((ni * cout + co) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_center_delta_is_identity() {
    let tape = Tape::<f64>::no_grad();
    let x = tape.constant(&Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f64));
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = tape.constant(&t(&[1, 1, 3, 3], &k));
    let b = tape.constant(&Tensor::zeros(vec![1]));
    let y = tape.conv2d(&x, &w, &b, 1).unwrap();
    assert_eq!(y.value(), x.value());
}

#[test]
fn conv_one_by_one_scale_and_bias() {
    let tape = Tape::<f64>::no_grad();
    let x = tape.constant(&t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
    let w = tape.constant(&t(&[1, 1, 1, 1], &[2.]));
    let b = tape.constant(&t(&[1], &[1.]));
    let y = tape.conv2d(&x, &w, &b, 0).unwrap();
    assert_eq!(y.value().data(), &[3., 5., 7., 9.]);
}

#[test]
fn conv_matches_direct_reference() {
    let x = rand_tensor(&[2, 3, 5, 6], 1);
    let w = rand_tensor(&[4, 3, 3, 3], 2);
    let b = rand_tensor(&[4], 3);
    let tape = Tape::no_grad();
    let y = tape
        .conv2d(&tape.constant(&x), &tape.constant(&w), &tape.constant(&b), 1)
        .unwrap();
    let want = conv_reference(&x, &w, &b);
    for (a, e) in y.value().data().iter().zip(&want) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn conv_rejects_bad_configuration() {
    let tape = Tape::<f64>::no_grad();
    let x = tape.constant(&Tensor::zeros(vec![1, 2, 4, 4]));
    let w = tape.constant(&Tensor::zeros(vec![1, 3, 3, 3]));
    let b = tape.constant(&Tensor::zeros(vec![1]));
    assert!(matches!(tape.conv2d(&x, &w, &b, 1), Err(Error::Config(_))));
    let w = tape.constant(&Tensor::zeros(vec![1, 2, 3, 3]));
    assert!(matches!(tape.conv2d(&x, &w, &b, 0), Err(Error::Config(_))));
    let w2 = tape.constant(&Tensor::zeros(vec![1, 2, 2, 2]));
    assert!(matches!(tape.conv2d(&x, &w2, &b, 0), Err(Error::Config(_))));
    let bad = tape.constant(&Tensor::full(vec![1, 2, 4, 4], f64::NAN));
    assert!(matches!(tape.conv2d(&bad, &w, &b, 1), Err(Error::Numeric(_))));
}

#[test]
fn matmul_examples() {
    let tape = Tape::<f64>::no_grad();
    let eye = tape.constant(&t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let m = tape.constant(&rand_tensor(&[3, 3], 9));
    assert_eq!(tape.matmul(&eye, &m).unwrap().value(), m.value());
    let a = tape.constant(&t(&[1, 2], &[1., 2.]));
    let b = tape.constant(&t(&[2, 1], &[3., 4.]));
    assert_eq!(tape.matmul(&a, &b).unwrap().value().data(), &[11.]);
    let c = tape.constant(&t(&[2, 3], &[0.; 6]));
    assert!(matches!(tape.matmul(&a, &c.clone()).map(|_| ()), Ok(())));
    assert!(matches!(tape.matmul(&c, &a), Err(Error::Config(_))));
}

#[test]
fn matmul_nt_equals_matmul_with_transposed_rhs() {
    let a = rand_tensor(&[2, 4, 3], 5);
    let b = rand_tensor(&[2, 5, 3], 6);
    let tape = Tape::no_grad();
    let direct = tape.matmul_nt(&tape.constant(&a), &tape.constant(&b)).unwrap();
    let bt = b.permute(&[0, 2, 1]).unwrap();
    let viaperm = tape.matmul(&tape.constant(&a), &tape.constant(&bt)).unwrap();
    assert!(direct.value().max_abs_diff(viaperm.value()) < 1e-14);
}

#[test]
fn grad_of_sum_of_product_is_ones_times_b_transposed() {
    let a = rand_tensor(&[3, 4], 11);
    let b = rand_tensor(&[4, 2], 12);
    let tape = Tape::new();
    let (av, bv) = (tape.leaf(&a), tape.constant(&b));
    let loss = tape.sum(&tape.matmul(&av, &bv).unwrap());
    let g = tape.backward(&loss).unwrap().wrt(&av).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            let want: f64 = (0..2).map(|k| b.data()[j * 2 + k]).sum();
            assert!((g.data()[i * 4 + j] - want).abs() < 1e-14);
        }
    }
    let err = finite_diff_check(
        |tp, x| {
            let bb = tp.constant(&b);
            Ok(tp.sum(&tp.matmul(x, &bb)?))
        },
        &a,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::<f64>::no_grad();
    let ones = |d| tape.constant(&Tensor::ones(vec![d]));
    let zeros = |d| tape.constant(&Tensor::zeros(vec![d]));
    let c = tape.constant(&t(&[4], &[5., 5., 5., 5.]));
    let y = tape.layer_norm(&c, &ones(4), &zeros(4), 1e-5).unwrap();
    assert_eq!(y.value().data(), &[0.; 4]);

    let x = tape.constant(&t(&[2], &[1., 3.]));
    let y = tape.layer_norm(&x, &ones(2), &zeros(2), 1e-12).unwrap();
    assert!((y.value().data()[0] + 1.0).abs() < 1e-9 && (y.value().data()[1] - 1.0).abs() < 1e-9);

    let g0 = tape.constant(&Tensor::zeros(vec![3]));
    let b7 = tape.constant(&Tensor::full(vec![3], 7.0));
    let x = tape.constant(&rand_tensor(&[2, 3], 4));
    let y = tape.layer_norm(&x, &g0, &b7, 1e-5).unwrap();
    assert!(y.value().data().iter().all(|&v| v == 7.0));
}

#[test]
fn softmax_examples() {
    let tape = Tape::<f64>::no_grad();
    let u = tape.softmax(&tape.constant(&t(&[3], &[2.5, 2.5, 2.5])), 0).unwrap();
    for v in u.value().data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let s = tape.softmax(&tape.constant(&t(&[2], &[0., 3f64.ln()])), 0).unwrap();
    assert!((s.value().data()[0] - 0.25).abs() < 1e-15);
    assert!((s.value().data()[1] - 0.75).abs() < 1e-15);
    let big = tape.softmax(&tape.constant(&t(&[2], &[1e4, 0.])), 0).unwrap();
    assert!(big.value().all_finite());
    assert!((big.value().sum() - 1.0).abs() < 1e-12);
}

#[test]
fn softmax_along_middle_axis() {
    let x = rand_tensor(&[2, 3, 4], 8);
    let tape = Tape::no_grad();
    let y = tape.softmax(&tape.constant(&x), 1).unwrap();
    for a in 0..2 {
        for c in 0..4 {
            let s: f64 = (0..3).map(|b| y.value().data()[(a * 3 + b) * 4 + c]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_examples() {
    let x = rand_tensor(&[2, 3], 21);
    let tape = Tape::new();
    let xv = tape.leaf(&x);
    let loss = tape.sum(&xv);
    let g = tape.backward(&loss).unwrap().wrt(&xv).unwrap();
    assert!(g.data().iter().all(|&v| v == 1.0));

    let tape = Tape::new();
    let xv = tape.leaf(&x);
    let loss = tape.scale(&tape.sum(&tape.mul(&xv, &xv).unwrap()), 0.5);
    let g = tape.backward(&loss).unwrap().wrt(&xv).unwrap();
    assert_eq!(g, x);
}

#[test]
fn backward_usage_errors() {
    let x = rand_tensor(&[2, 2], 3);
    let tape = Tape::new();
    let xv = tape.leaf(&x);
    assert!(matches!(tape.backward(&xv), Err(Error::Usage(_))));
    let c = tape.constant(&x);
    let detached = tape.sum(&c);
    assert!(matches!(tape.backward(&detached), Err(Error::Usage(_))));
    let loss = tape.sum(&xv);
    tape.backward(&loss).unwrap();
    assert!(matches!(tape.backward(&loss), Err(Error::Usage(_))));
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let tape = Tape::new();
    let a = tape.leaf(&rand_tensor(&[3], 1));
    let b = tape.leaf(&rand_tensor(&[2], 2));
    let loss = tape.sum(&a);
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&b).unwrap().data(), &[0., 0.]);
}

#[test]
fn no_grad_tape_records_nothing() {
    let tape = Tape::no_grad();
    let a = tape.leaf(&rand_tensor(&[3], 1));
    let y = tape.relu(&tape.scale(&a, 2.0));
    assert!(!y.requires_grad());
    assert!(tape.is_empty());
}

#[test]
fn finite_diff_check_examples() {
    let x = rand_tensor(&[3, 4], 31);
    let err = finite_diff_check(|t, v| Ok(t.sum(v)), &x, 1e-6).unwrap();
    assert!(err < 1e-9, "{err}");

    let away = x.map(|v| if v.abs() < 0.05 { 0.3 } else { v });
    let err = finite_diff_check(|t, v| Ok(t.sum(&t.relu(v))), &away, 1e-6).unwrap();
    assert!(err <= 1e-6, "{err}");

    let w = rand_tensor(&[4, 5], 32);
    let err = finite_diff_check(
        |t, v| {
            let s = t.softmax(v, 1)?;
            let y = t.matmul(&s, &t.constant(&w))?;
            Ok(t.sum(&t.mul(&y, &y)?))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-5, "{err}");

    let nan = |t: &Tape<f64>, v: &Var<f64>| Ok(t.scale(&t.sum(v), f64::NAN));
    assert!(matches!(finite_diff_check(nan, &x, 1e-6), Err(Error::Numeric(_))));
    assert!(finite_diff_check(|t, v| Ok(t.sum(v)), &x, 1e-1).is_err());
}

/// Weighted sum with fixed random weights so every output coordinate matters.
fn probe_loss(t: &Tape<f64>, y: &Var<f64>, seed: u64) -> crate::Result<Var<f64>> {
    let w = t.constant(&rand_tensor(y.shape(), seed));
    Ok(t.sum(&t.mul(y, &w)?))
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let h = 1e-6;
    let tol = 1e-4;
    let all = Coords::All;

    let conv = finite_diff_check_many(
        |t, v| probe_loss(t, &t.conv2d(&v[0], &v[1], &v[2], 1)?, 100),
        &[rand_tensor(&[2, 2, 4, 5], 1), rand_tensor(&[3, 2, 3, 3], 2), rand_tensor(&[3], 3)],
        h,
        &all,
    )
    .unwrap();
    assert!(conv <= tol, "conv2d {conv}");

    let mm = finite_diff_check_many(
        |t, v| probe_loss(t, &t.matmul(&v[0], &v[1])?, 101),
        &[rand_tensor(&[2, 3, 4], 4), rand_tensor(&[2, 4, 5], 5)],
        h,
        &all,
    )
    .unwrap();
    assert!(mm <= tol, "batched matmul {mm}");

    let shared = finite_diff_check_many(
        |t, v| probe_loss(t, &t.matmul(&v[0], &v[1])?, 102),
        &[rand_tensor(&[2, 3, 4], 6), rand_tensor(&[4, 5], 7)],
        h,
        &all,
    )
    .unwrap();
    assert!(shared <= tol, "shared matmul {shared}");

    let nt = finite_diff_check_many(
        |t, v| probe_loss(t, &t.matmul_nt(&v[0], &v[1])?, 103),
        &[rand_tensor(&[2, 3, 4], 8), rand_tensor(&[2, 5, 4], 9)],
        h,
        &all,
    )
    .unwrap();
    assert!(nt <= tol, "matmul_nt {nt}");

    let nt_shared = finite_diff_check_many(
        |t, v| probe_loss(t, &t.matmul_nt(&v[0], &v[1])?, 104),
        &[rand_tensor(&[3, 4], 10), rand_tensor(&[5, 4], 11)],
        h,
        &all,
    )
    .unwrap();
    assert!(nt_shared <= tol, "shared matmul_nt {nt_shared}");

    let ln = finite_diff_check_many(
        |t, v| probe_loss(t, &t.layer_norm(&v[0], &v[1], &v[2], 1e-5)?, 105),
        &[rand_tensor(&[3, 6], 12), rand_tensor(&[6], 13), rand_tensor(&[6], 14)],
        h,
        &all,
    )
    .unwrap();
    assert!(ln <= tol, "layer_norm {ln}");

    let sm = finite_diff_check_many(
        |t, v| probe_loss(t, &t.softmax(&v[0], 1)?, 106),
        &[rand_tensor(&[2, 4, 3], 15)],
        h,
        &all,
    )
    .unwrap();
    assert!(sm <= tol, "softmax {sm}");

    let map = Arc::new(IndexMap::new(vec![2, 3], vec![4], vec![5, 0, 5, 2]).unwrap());
    let gather = finite_diff_check_many(
        |t, v| probe_loss(t, &t.gather(&v[0], &map)?, 107),
        &[rand_tensor(&[2, 3], 16)],
        h,
        &all,
    )
    .unwrap();
    assert!(gather <= tol, "gather {gather}");

    let elementwise = finite_diff_check_many(
        |t, v| {
            let s = t.sub(&t.mul(&v[0], &v[1])?, &v[1])?;
            let b = t.add_broadcast(&s, &v[2])?;
            let r = t.reshape(&t.add(&b, &v[0])?, &[6, 2])?;
            probe_loss(t, &t.permute(&r, &[1, 0])?, 108)
        },
        &[rand_tensor(&[3, 2, 2], 17), rand_tensor(&[3, 2, 2], 18), rand_tensor(&[2, 2], 19)],
        h,
        &all,
    )
    .unwrap();
    assert!(elementwise <= tol, "elementwise {elementwise}");
}

#[test]
fn gradients_are_independent_of_thread_count() {
    let x = rand_tensor(&[4, 3, 6, 6], 40);
    let w = rand_tensor(&[5, 3, 3, 3], 41);
    let b = rand_tensor(&[5], 42);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let tape = Tape::new();
            let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
            let y = tape.conv2d(&xv, &wv, &bv, 1).unwrap();
            let loss = probe_loss(&tape, &y, 7).unwrap();
            let g = tape.backward(&loss).unwrap();
            (g.wrt(&xv).unwrap(), g.wrt(&wv).unwrap(), g.wrt(&bv).unwrap())
        })
    };
    assert_eq!(run(1), run(4));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-1e6f64..1e6, 1..12), scale in prop_oneof![Just(1.0), Just(1e-8), Just(1e3)]) {
        let x = Tensor::new(vec![vals.len()], vals.iter().map(|v| v * scale).collect()).unwrap();
        let tape = Tape::no_grad();
        let y = tape.softmax(&tape.constant(&x), 0).unwrap();
        prop_assert!(y.value().data().iter().all(|v| *v >= 0.0 && v.is_finite()));
        prop_assert!((y.value().sum() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn layer_norm_standardizes_nonconstant_rows(vals in proptest::collection::vec(-100f64..100.0, 2..16)) {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        prop_assume!(var > 1e-2);
        let d = vals.len();
        let tape = Tape::no_grad();
        let y = tape.layer_norm(
            &tape.constant(&Tensor::new(vec![d], vals).unwrap()),
            &tape.constant(&Tensor::ones(vec![d])),
            &tape.constant(&Tensor::zeros(vec![d])),
            1e-5,
        ).unwrap();
        let m = y.value().sum() / d as f64;
        let v = y.value().data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / d as f64;
        prop_assert!(m.abs() <= 1e-6);
        prop_assert!((v - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn conv_delta_kernel_is_identity(c in 1usize..4, h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
        let x = rand_tensor(&[1, c, h, w], seed);
        let mut k = vec![0.0; c * c * 9];
        for i in 0..c {
            k[(i * c + i) * 9 + 4] = 1.0;
        }
        let tape = Tape::no_grad();
        let y = tape.conv2d(
            &tape.constant(&x),
            &tape.constant(&Tensor::new(vec![c, c, 3, 3], k).unwrap()),
            &tape.constant(&Tensor::zeros(vec![c])),
            1,
        ).unwrap();
        prop_assert_eq!(y.value(), &x);
    }
}

#[test]
fn kinks_are_counted_not_compared() {
    let x = Tensor::new(vec![3], vec![0.7, -2e-6, 1.3]).unwrap();
    let f = |t: &Tape<f64>, v: &[Var<f64>]| Ok(t.sum(&t.relu(&v[0])));
    let plain = finite_diff_check_many(f, std::slice::from_ref(&x), 1e-5, &Coords::All).unwrap();
    assert!(plain > 0.1, "{plain}");
    let r = finite_diff_report(f, std::slice::from_ref(&x), 1e-5, &Coords::All, 1e-4).unwrap();
    assert_eq!((r.probes, r.kinks), (3, 1));
    assert!(r.max_error < 1e-9, "{r:?}");
}
