use std::fmt;
use std::sync::Arc;

use super::Scalar;
use crate::error::{config_err, Result};

/// Dense row-major array. Data is shared copy-on-write, so clones are cheap.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(config_err!("tensor extents must be positive, got {shape:?}"));
        }
        if numel(&shape) != data.len() {
            return Err(config_err!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Builds a tensor whose shape/data agreement was established by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::from_parts(shape, vec![value; n])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Self::from_parts(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; copies the buffer only if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.len() || shape.contains(&0) {
            return Err(config_err!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    pub fn gather(&self, map: &IndexMap) -> Result<Self> {
        map.check_source(&self.shape)?;
        Ok(Self::from_parts(
            map.out_shape.clone(),
            map.src.iter().map(|&i| self.data[i]).collect(),
        ))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        self.gather(&IndexMap::permute(&self.shape, axes)?)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }
}

/// A pure re-indexing: `out[i] = src[map[i]]`.
///
/// Every layout operation of the window algebra (padding, crop, roll,
/// window partition, patch tokenization, dilated gather, permutes) is one of
/// these, so one gather primitive with a scatter-add adjoint differentiates
/// all of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    pub(crate) src_shape: Vec<usize>,
    pub(crate) out_shape: Vec<usize>,
    pub(crate) src: Vec<usize>,
}

impl IndexMap {
    pub fn new(src_shape: Vec<usize>, out_shape: Vec<usize>, src: Vec<usize>) -> Result<Self> {
        let n = numel(&src_shape);
        if src.len() != numel(&out_shape) {
            return Err(config_err!(
                "index map length {} does not match output shape {out_shape:?}",
                src.len()
            ));
        }
        if let Some(bad) = src.iter().find(|&&i| i >= n) {
            return Err(config_err!("index {bad} out of range for source of {n} values"));
        }
        Ok(IndexMap {
            src_shape,
            out_shape,
            src,
        })
    }

    pub fn src_shape(&self) -> &[usize] {
        &self.src_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.src
    }

    pub(crate) fn check_source(&self, shape: &[usize]) -> Result<()> {
        if shape != self.src_shape.as_slice() {
            return Err(config_err!(
                "index map expects source {:?}, got {shape:?}",
                self.src_shape
            ));
        }
        Ok(())
    }

    /// `self` applied after `first`: `out[i] = x[first.src[self.src[i]]]`.
    pub fn compose(first: &IndexMap, then: &IndexMap) -> Result<Self> {
        if first.out_shape != then.src_shape {
            return Err(config_err!(
                "cannot compose maps: {:?} feeds {:?}",
                first.out_shape,
                then.src_shape
            ));
        }
        Ok(IndexMap {
            src_shape: first.src_shape.clone(),
            out_shape: then.out_shape.clone(),
            src: then.src.iter().map(|&i| first.src[i]).collect(),
        })
    }

    pub fn permute(shape: &[usize], axes: &[usize]) -> Result<Self> {
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(config_err!("invalid permutation {axes:?} for rank {rank}"));
        }
        let strides = strides(shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
        let n = numel(shape);
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        for _ in 0..n {
            src.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(IndexMap {
            src_shape: shape.to_vec(),
            out_shape,
            src,
        })
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn permute_then_inverse_is_bitwise_identity() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 4, 5], |i| (i as f64).sin());
        let y = x.permute(&[2, 0, 3, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 5, 3]);
        // inverse of [2,0,3,1] is [1,3,0,2]
        let back = y.permute(&[1, 3, 0, 2]).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn transpose_matches_hand_indexing() {
        let x = Tensor::<f64>::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let t = x.permute(&[1, 0]).unwrap();
        assert_eq!(t.data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn compose_equals_sequential_gather() {
        let x = Tensor::<f64>::from_fn(vec![3, 4], |i| i as f64);
        let a = IndexMap::permute(&[3, 4], &[1, 0]).unwrap();
        let b = IndexMap::new(vec![4, 3], vec![6], vec![0, 2, 4, 6, 8, 10]).unwrap();
        let direct = x.gather(&a).unwrap().gather(&b).unwrap();
        let fused = x.gather(&IndexMap::compose(&a, &b).unwrap()).unwrap();
        assert_eq!(direct, fused);
    }
}
