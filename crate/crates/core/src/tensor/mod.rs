//! Dense row-major tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable n-dimensional value. Differentiable
//! operations are methods on [`Tape`]; a tape records the primitive
//! applications of one forward pass (define-by-run) and
//! [`Tape::backward`] replays them in reverse. Tensors are cheap to
//! clone (the payload is shared) and safe to hand to other threads;
//! a tape is single-threaded and is rebuilt per forward pass.

mod fd;
mod kernels;
mod tape;

pub use fd::fd_check;
pub use tape::{GradMap, NodeId, Tape};

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::{contract_err, dim_err};

/// Dense n-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    node_id: Option<NodeId>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(dim_err!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            ));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            requires_grad: false,
            node_id: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(vec![1], vec![v]).unwrap()
    }

    pub fn vector(values: &[f64]) -> Self {
        Self::from_vec(vec![values.len()], values.to_vec()).unwrap()
    }

    /// Build a rank-2 tensor from rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(dim_err!("ragged rows, expected {} columns each", c));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Self::from_vec(vec![r, c], data)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self::from_vec(shape, vec![0.0; numel]).unwrap()
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self::from_vec(shape, vec![value; numel]).unwrap()
    }

    /// Identity matrix of extent `n`.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_vec(vec![n, n], data).unwrap()
    }

    /// Standard-normal tensor drawn from `rng`.
    pub fn randn(shape: impl Into<Vec<usize>>, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.sample(StandardNormal)).collect();
        Self::from_vec(shape, data).unwrap()
    }

    /// Uniform tensor on `[lo, hi)` drawn from `rng`.
    pub fn rand_uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
        Self::from_vec(shape, data).unwrap()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node_id
    }

    /// Extract the value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(contract_err!(
                "expected a scalar tensor, got shape {:?}",
                self.shape
            ));
        }
        Ok(self.data[0])
    }

    /// Value at a multi-index (row-major).
    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(self.shape.iter()).enumerate() {
            debug_assert!(ix < ext, "index {ix} out of range {ext} at axis {i}");
            flat = flat * ext + ix;
        }
        self.data[flat]
    }

    /// New tensor with the same data and a different shape.
    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(dim_err!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.numel(),
                shape,
                numel
            ));
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
            node_id: self.node_id,
        })
    }

    /// Elementwise map into a fresh untracked tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::from_vec(self.shape.clone(), data).unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shape mismatch is an error.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(dim_err!(
                "shape {:?} vs {:?} in comparison",
                self.shape,
                other.shape
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn with_node(mut self, id: NodeId, requires_grad: bool) -> Self {
        self.node_id = Some(id);
        self.requires_grad = requires_grad;
        self
    }

    pub(crate) fn detached(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad: false,
            node_id: None,
        }
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && *self.data == *other.data
    }
}

pub(crate) fn check_same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!(
            "{}: shape {:?} vs {:?}",
            what,
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}
