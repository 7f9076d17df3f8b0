//! Recurrent Q-network trained from scratch.
//!
//! The recurrent model is a single LSTM layer followed by an affine head with
//! one output per action. A feedforward variant (tanh hidden layer, no
//! recurrence) shares the same interface for ablation runs. Gradients are
//! derived by hand; there is no autodiff.

mod checkpoint;
mod lstm;
mod mlp;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use lstm::LstmQNetwork;
pub use mlp::MlpQNetwork;
pub use optim::{Optimizer, OptimizerKind};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Scalar;

/// Output order: buy, hold, sell.
pub const ACTION_COUNT: usize = 3;

pub type QValues<T> = [T; ACTION_COUNT];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("forward pass was run without caching activations")]
    MissingCache,
    #[error("empty sequence")]
    EmptySequence,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Dense row-major parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: &'static str, rows: usize, cols: usize) -> Self {
        Self { name, rows, cols, data: vec![T::zero(); rows * cols] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

/// Ordered list of parameter tensors. Gradients and optimizer moments use
/// the same layout as the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|t| Tensor::zeros(t.name, t.rows, t.cols)).collect() }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    pub fn check_shape(&self, other: &Self) -> Result<(), NetError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(NetError::DimensionMismatch { expected: self.len(), found: other.len() })
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    /// `self += other * k`
    pub fn add_scaled(&mut self, other: &Self, k: T) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += *b * k;
        }
    }

    pub fn scale(&mut self, k: T) {
        self.iter_mut().for_each(|v| *v *= k);
    }

    pub fn l2_norm(&self) -> T {
        self.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Recurrent carry. Zero at the start of every sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> HiddenState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![T::zero(); hidden], c: vec![T::zero(); hidden] }
    }
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Gate activations `[i, f, g, o]`, each of length H. Only `i` is used by
    /// the feedforward model, where it holds the tanh layer output.
    pub gates: Vec<T>,
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
    pub h: Vec<T>,
}

/// Result of a forward pass over one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass<T> {
    pub q: Vec<QValues<T>>,
    pub hidden: HiddenState<T>,
    pub cache: Option<Vec<StepCache<T>>>,
}

/// Uniform initialization bound shared by both models.
pub(crate) fn init_bound<T: Scalar>(hidden: usize) -> T {
    T::one() / T::of_usize(hidden).sqrt()
}

pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn check_dim<T, S: AsRef<[T]>>(sequence: &[S], dim: usize) -> Result<(), NetError> {
    if sequence.is_empty() {
        return Err(NetError::EmptySequence);
    }
    match sequence.iter().find(|x| x.as_ref().len() != dim) {
        Some(x) => Err(NetError::DimensionMismatch { expected: dim, found: x.as_ref().len() }),
        None => Ok(()),
    }
}

/// Either Q-network architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum QNet<T> {
    Recurrent(LstmQNetwork<T>),
    Feedforward(MlpQNetwork<T>),
}

impl<T: Scalar> QNet<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            QNet::Recurrent(_) => "lstm",
            QNet::Feedforward(_) => "mlp",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            QNet::Recurrent(n) => n.input_dim,
            QNet::Feedforward(n) => n.input_dim,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            QNet::Recurrent(n) => n.hidden,
            QNet::Feedforward(n) => n.hidden,
        }
    }

    pub fn params(&self) -> &Params<T> {
        match self {
            QNet::Recurrent(n) => &n.params,
            QNet::Feedforward(n) => &n.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        match self {
            QNet::Recurrent(n) => &mut n.params,
            QNet::Feedforward(n) => &mut n.params,
        }
    }

    pub fn zero_hidden(&self) -> HiddenState<T> {
        HiddenState::zeros(self.hidden())
    }

    pub fn forward<S: AsRef<[T]>>(
        &self,
        sequence: &[S],
        h0: &HiddenState<T>,
        keep_cache: bool,
    ) -> Result<ForwardPass<T>, NetError> {
        match self {
            QNet::Recurrent(n) => n.forward(sequence, h0, keep_cache),
            QNet::Feedforward(n) => n.forward(sequence, h0, keep_cache),
        }
    }

    pub fn backward(&self, pass: &ForwardPass<T>, dq: &[QValues<T>]) -> Result<Params<T>, NetError> {
        match self {
            QNet::Recurrent(n) => n.backward(pass, dq),
            QNet::Feedforward(n) => n.backward(pass, dq),
        }
    }

    /// One step of inference, returning Q-values and the advanced carry.
    pub fn step(&self, x: &[T], hidden: &HiddenState<T>) -> Result<(QValues<T>, HiddenState<T>), NetError> {
        let pass = self.forward(&[x], hidden, false)?;
        Ok((pass.q[0], pass.hidden))
    }
}
