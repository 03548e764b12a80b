//! Named parameter registry and the small layer descriptors built on it.

use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{config_err, usage_err, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Handle to one tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// How freshly registered parameters are filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Every tensor zero, including norm gains; networks built this way are the identity.
    Zeros,
    /// Kaiming-uniform convolutions, N(0, 0.02) matrices, unit norm gains, zero biases.
    Standard,
    /// Like `Standard` with every random draw multiplied by the factor.
    Scaled(f64),
}

/// Ordered, uniquely named parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name}"));
        }
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| usage_err!("unknown parameter {name}"))?;
        let slot = &mut self.values[id.0];
        if slot.shape() != value.shape() {
            return Err(usage_err!(
                "parameter {name} has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            ));
        }
        *slot = value;
        Ok(())
    }

    /// Places every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &Tape<T>) -> Bound<T> {
        Bound {
            vars: self.values.iter().map(|t| tape.leaf(t)).collect(),
        }
    }

    /// Places every parameter on `tape` as a constant.
    pub fn bind_constant(&self, tape: &Tape<T>) -> Bound<T> {
        Bound {
            vars: self.values.iter().map(|t| tape.constant(t)).collect(),
        }
    }
}

/// Parameters as tape variables, indexed by [`ParamId`].
pub struct Bound<T> {
    vars: Vec<Var<T>>,
}

impl<T> Bound<T> {
    /// Wraps variables already on a tape, in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var<T>>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

impl<T> Index<ParamId> for Bound<T> {
    type Output = Var<T>;

    fn index(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }
}

/// Registers parameters under a name prefix, drawing initial values from `rng`.
pub struct Builder<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub init: Init,
    pub rng: &'a mut R,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    fn scale(&self) -> Option<f64> {
        match self.init {
            Init::Zeros => None,
            Init::Standard => Some(1.0),
            Init::Scaled(s) => Some(s),
        }
    }

    fn uniform(&mut self, shape: Vec<usize>, bound: f64) -> Tensor<T> {
        match self.scale() {
            None => Tensor::zeros(shape),
            Some(s) => {
                let d = Uniform::new_inclusive(-bound, bound);
                Tensor::from_fn(shape, |_| T::of(s * d.sample(self.rng)))
            }
        }
    }

    fn normal(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        match self.scale() {
            None => Tensor::zeros(shape),
            Some(s) => {
                let d = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(shape, |_| T::of(s * d.sample(self.rng)))
            }
        }
    }

    /// `k×k` convolution; uniform in `±1/sqrt(fan_in)` (Kaiming-uniform with a = √5).
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<ConvParams> {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let w = self.uniform(vec![cout, cin, k, k], bound);
        Ok(ConvParams {
            weight: self.store.register(format!("{name}.weight"), w)?,
            bias: self.store.register(format!("{name}.bias"), Tensor::zeros(vec![cout]))?,
            cin,
            cout,
            kernel: k,
        })
    }

    /// Dense map stored as `[din, dout]`, drawn from N(0, 0.02).
    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<LinearParams> {
        let w = self.normal(vec![din, dout], 0.02);
        Ok(LinearParams {
            weight: self.store.register(format!("{name}.weight"), w)?,
            bias: self.store.register(format!("{name}.bias"), Tensor::zeros(vec![dout]))?,
            din,
            dout,
        })
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Result<NormParams> {
        let gamma = match self.init {
            Init::Zeros => Tensor::zeros(vec![dim]),
            _ => Tensor::ones(vec![dim]),
        };
        Ok(NormParams {
            gamma: self.store.register(format!("{name}.gamma"), gamma)?,
            beta: self.store.register(format!("{name}.beta"), Tensor::zeros(vec![dim]))?,
            dim,
        })
    }

    /// Zero-initialized tensor (relative-position tables).
    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        self.store.register(name, Tensor::zeros(shape))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl ConvParams {
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        tape.conv2d(x, &p[self.weight], &p[self.bias], (self.kernel - 1) / 2)
    }

    pub fn count(&self, with_bias: bool) -> usize {
        conv_param_count(self.cin, self.cout, self.kernel, with_bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl LinearParams {
    /// `x · W + b` over the last axis.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = tape.matmul(x, &p[self.weight])?;
        tape.add_broadcast(&y, &p[self.bias])
    }

    pub fn count(&self, with_bias: bool) -> usize {
        linear_param_count(self.din, self.dout, with_bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl NormParams {
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        tape.layer_norm(x, &p[self.gamma], &p[self.beta], T::of(LAYER_NORM_EPS))
    }
}

pub fn conv_param_count(cin: usize, cout: usize, k: usize, with_bias: bool) -> usize {
    cout * cin * k * k + if with_bias { cout } else { 0 }
}

pub fn linear_param_count(din: usize, dout: usize, with_bias: bool) -> usize {
    din * dout + if with_bias { dout } else { 0 }
}
