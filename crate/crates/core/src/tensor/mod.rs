//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! The engine is a tape: every primitive records its inputs and enough
//! auxiliary state (argmax rows, gather indices, interpolation weights) to
//! replay gradients in reverse. It covers exactly the primitives the network
//! needs; there is no broadcasting beyond what those primitives require.
//!
//! Reference precision is `f64`; `f32` is available as a speed mode with no
//! accuracy guarantees.

mod gradcheck;
mod mlp;
mod params;
mod tape;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use mlp::{init_mlp_params, mlp_apply, Activation, MlpSpec};
pub use params::{
    load_checkpoint, save_checkpoint, sgd_step, sgd_update, BoundParams, ModelParams, SgdState,
};
pub use tape::{Gradients, Groups, Tape, ValueId, WeightedGroups};

use crate::error::{Error, Result};

/// Scalar type the engine is generic over. `f64` is the reference precision.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssignOps
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Dense row-major tensor. Rank 1 is used for biases and scalars (shape
/// `[1]`), rank 2 for everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R: Real = f64> {
    shape: Vec<usize>,
    data: Vec<R>,
    requires_grad: bool,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor_new",
                detail: format!("shape {:?} holds {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![R::zero(); numel],
            requires_grad: false,
        }
    }

    pub fn scalar(v: R) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
        }
    }

    /// Rank-2 constructor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<R>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<R>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            requires_grad: false,
        }
    }

    pub fn from_f64_slice(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| R::from_f64(v)).collect())
    }

    /// Marks the tensor as a differentiation leaf when registered on a tape.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count for rank-2 tensors; a rank-1 tensor is one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Column count for rank-2 tensors; rank-1 length otherwise.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => self.data.len(),
        }
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[R] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> R {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v.as_f64()).collect()
    }
}
