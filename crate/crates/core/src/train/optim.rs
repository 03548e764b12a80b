use crate::error::{usage_err, Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const HALVING_EPOCHS: [usize; 7] = [15, 22, 24, 25, 26, 27, 28];

/// Base rate halved once for every listed epoch reached (epochs count from 1).
pub fn lr_at(epoch: usize, base: f64) -> f64 {
    let halvings = HALVING_EPOCHS.iter().filter(|&&e| e <= epoch).count();
    base / f64::from(1u32 << halvings)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, in [`ParamStore`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        OptimState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

impl Adam {
    /// One bias-corrected update. Nothing changes if any gradient is non-finite.
    pub fn step<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        state: &mut OptimState<T>,
        lr: f64,
    ) -> Result<()> {
        if grads.len() != params.len() || state.m.len() != params.len() {
            return Err(usage_err!(
                "{} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ));
        }
        for ((id, g), m) in params.ids().zip(grads).zip(&state.m) {
            if g.shape() != params.get(id).shape() || m.shape() != g.shape() {
                return Err(usage_err!("gradient shape mismatch for {}", params.name(id)));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {}", params.name(id))));
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i].data();
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            let w = params.get_mut(id).data_mut();
            for j in 0..w.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                w[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
