use crate::error::{usage_err, Result};
use crate::tensor::{Scalar, Tape, Var};

/// How the squared error of one sample is reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// `Σ‖pred − target‖² / (2·N·P)` with `P` values per sample.
    PerPixelMean,
    /// `Σ‖pred − target‖² / (2·N)`.
    RawSum,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::PerPixelMean => "per-pixel-mean",
            LossMode::RawSum => "raw-sum",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per-pixel-mean" | "mean" => Some(LossMode::PerPixelMean),
            "raw-sum" | "sum" => Some(LossMode::RawSum),
            _ => None,
        }
    }
}

/// Half the mean (over the batch axis) squared error; the leading axis is `N`.
pub fn mse_loss<T: Scalar>(tape: &Tape<T>, pred: &Var<T>, target: &Var<T>, mode: LossMode) -> Result<Var<T>> {
    if pred.shape() != target.shape() {
        return Err(usage_err!(
            "loss needs equal shapes, got {:?} and {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    let n = pred.shape().first().copied().unwrap_or(1);
    let per_sample = pred.value().len() / n;
    let diff = tape.sub(pred, target)?;
    let sq = tape.sum(&tape.mul(&diff, &diff)?);
    let denom = match mode {
        LossMode::PerPixelMean => 2 * n * per_sample,
        LossMode::RawSum => 2 * n,
    };
    Ok(tape.scale(&sq, T::of(1.0 / denom as f64)))
}
