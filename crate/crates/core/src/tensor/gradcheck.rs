//! Central finite-difference verification of tape gradients (64-bit only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{config_err, Error, Result};

/// Which coordinates to probe.
#[derive(Clone, Debug, PartialEq)]
pub enum Coords {
    All,
    /// Up to `per_input` distinct coordinates from each input, chosen by `seed`.
    Sample { per_input: usize, seed: u64 },
    /// Explicit `(input, flat index)` pairs.
    Explicit(Vec<(usize, usize)>),
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::no_grad();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t)).collect();
    let out = f(&tape, &vars)?;
    if out.value().len() != 1 {
        return Err(Error::Usage("checked function must return a scalar".into()));
    }
    let v = out.value().item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("checked function returned {v}")));
    }
    Ok(v)
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// Max of `|analytic - central| / max(1, |analytic|)` over smooth probes.
    pub max_error: f64,
    /// `(input, flat index)` attaining `max_error`.
    pub worst: Option<(usize, usize)>,
    pub probes: usize,
    /// Probes left out because the one-sided slopes disagree (a ReLU kink lies within `h`).
    pub kinks: usize,
}

/// Max over probed coordinates of `|analytic - central| / max(1, |analytic|)`.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor<f64>], h: f64, coords: &Coords) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    Ok(compare(&f, inputs, h, coords, None)?.max_error)
}

/// Like [`finite_diff_check_many`] for piecewise-smooth functions: a probe whose
/// forward and backward slopes differ by more than `kink_tol · max(1, |central|)`
/// straddles a kink and is counted instead of compared.
pub fn finite_diff_report<F>(f: F, inputs: &[Tensor<f64>], h: f64, coords: &Coords, kink_tol: f64) -> Result<GradReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    compare(&f, inputs, h, coords, Some(kink_tol))
}

fn compare<F>(f: &F, inputs: &[Tensor<f64>], h: f64, coords: &Coords, kink_tol: Option<f64>) -> Result<GradReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    if !(1e-8..=1e-3).contains(&h) {
        return Err(config_err!("finite-difference step {h} outside [1e-8, 1e-3]"));
    }
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&tape, &vars)?;
    if !loss.value().all_finite() {
        return Err(Error::Numeric("checked function is not finite at x".into()));
    }
    let f0 = loss.value().item();
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.wrt(v)).collect::<Result<_>>()?;

    let probes: Vec<(usize, usize)> = match coords {
        Coords::All => inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
            .collect(),
        Coords::Sample { per_input, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut out = Vec::new();
            for (i, t) in inputs.iter().enumerate() {
                let k = (*per_input).min(t.len());
                let mut picked: Vec<usize> = sample(&mut rng, t.len(), k).into_vec();
                picked.sort_unstable();
                out.extend(picked.into_iter().map(|j| (i, j)));
            }
            out
        }
        Coords::Explicit(list) => list.clone(),
    };

    let mut report = GradReport {
        max_error: 0.0,
        worst: None,
        probes: probes.len(),
        kinks: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, j) in probes {
        if i >= inputs.len() || j >= inputs[i].len() {
            return Err(config_err!("probe ({i}, {j}) out of range"));
        }
        let x0 = inputs[i].data()[j];
        work[i].data_mut()[j] = x0 + h;
        let fp = eval_scalar(f, &work)?;
        work[i].data_mut()[j] = x0 - h;
        let fm = eval_scalar(f, &work)?;
        work[i].data_mut()[j] = x0;
        let numeric = (fp - fm) / (2.0 * h);
        if let Some(tol) = kink_tol {
            let (forward, backward) = ((fp - f0) / h, (f0 - fm) / h);
            if (forward - backward).abs() > tol * numeric.abs().max(1.0) {
                report.kinks += 1;
                continue;
            }
        }
        let a = analytic[i].data()[j];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if report.worst.is_none() || err > report.max_error {
            report.max_error = err;
            report.worst = Some((i, j));
        }
    }
    Ok(report)
}

/// Single-input form of [`finite_diff_check_many`] probing every coordinate.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, &Var<f64>) -> Result<Var<f64>>,
{
    finite_diff_check_many(|t, v| f(t, &v[0]), std::slice::from_ref(x), h, &Coords::All)
}
