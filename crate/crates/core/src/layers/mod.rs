//! Differentiable layers.
//!
//! Every layer runs a forward pass that returns its output together with a
//! [`Tape`], the context its backward pass needs. Backward consumes the tape
//! of the same layer and returns gradients for the input and for each
//! parameter, in the order reported by [`Layer::params`].
//!
//! Image tensors are `[batch, channels, height, width]`.

mod agg;
mod conv;
mod gc;
pub mod gradcheck;
mod loss;
mod morph;
mod support;

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use conv::Conv2d;
pub use gc::{GcKind, GenConv};
pub use loss::Loss;
pub use morph::{Aggregation, DualFlags, MorphKind, MorphLayer};
pub use support::{BatchNorm, Dense, Dropout, Flatten, MaxPool2x2, Relu};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub rng: &'a mut Rng,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(mode: Mode, rng: &'a mut Rng) -> Self {
        ForwardCtx { mode, rng }
    }
}

/// Forward context saved for the backward pass of one layer call.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    pub(crate) layer: u64,
    pub(crate) input: Option<Tensor<T>>,
    pub(crate) input_shape: Vec<usize>,
    /// Winner indices of min/max reductions.
    pub(crate) index: Vec<u32>,
    /// Extra saved tensors (softmax statistics, normalized activations...).
    pub(crate) saved: Vec<Tensor<T>>,
    /// Active cells per (term, output channel) after masking.
    pub(crate) active: Vec<Vec<u32>>,
    pub(crate) mask: Vec<bool>,
}

impl<T: Scalar> Tape<T> {
    pub(crate) fn new(layer: u64, input_shape: &[usize]) -> Self {
        Tape { layer, input: None, input_shape: input_shape.to_vec(), index: vec![], saved: vec![], active: vec![], mask: vec![] }
    }

    pub fn layer(&self) -> u64 {
        self.layer
    }

    pub(crate) fn check(&self, layer: u64) -> Result<()> {
        if self.layer != layer {
            return Err(Error::TapeMismatch { expected: layer, found: self.layer });
        }
        Ok(())
    }

    pub(crate) fn input(&self) -> Result<&Tensor<T>> {
        self.input.as_ref().ok_or_else(|| Error::Invalid("tape has no saved input".into()))
    }
}

/// Gradients produced by a backward pass.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub input: Tensor<T>,
    pub params: Vec<Tensor<T>>,
}

pub trait Layer<T: Scalar>: Send + Sync {
    fn id(&self) -> u64;

    /// Short kind tag, e.g. `"conv"` or `"hm-dual"`.
    fn kind(&self) -> &'static str;

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)>;

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>>;

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }

    /// Non-trained state such as batch-norm running statistics.
    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }

    /// Don't-care cells shared by every parameter, laid out like the
    /// parameter tensors. `None` when the layer has no such notion.
    fn dnc_cells(&self) -> Option<Vec<bool>> {
        None
    }
}

impl<T: Scalar, L: Layer<T> + ?Sized> Layer<T> for Box<L> {
    fn id(&self) -> u64 {
        (**self).id()
    }

    fn kind(&self) -> &'static str {
        (**self).kind()
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        (**self).forward(x, ctx)
    }

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>> {
        (**self).backward(tape, grad)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        (**self).params()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        (**self).params_mut()
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        (**self).buffers()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        (**self).buffers_mut()
    }

    fn dnc_cells(&self) -> Option<Vec<bool>> {
        (**self).dnc_cells()
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// `[n, c, h, w]` of an image batch.
pub(crate) fn nchw(x: &Tensor<impl Scalar>, channels: usize) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] if c == channels => Ok((n, c, h, w)),
        _ => Err(shape_err!("expected [batch, {channels}, h, w], got {:?}", x.shape())),
    }
}

/// Runs `f` per sample, possibly in parallel, returning results in sample order.
pub(crate) fn per_sample<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).into_par_iter().map(f).collect()
}

/// Sums per-sample parameter gradients in sample order.
pub(crate) fn sum_in_order<T: Scalar>(parts: impl IntoIterator<Item = Vec<Vec<T>>>, shapes: &[Vec<usize>]) -> Result<Vec<Tensor<T>>> {
    let mut acc: Vec<Vec<T>> = shapes.iter().map(|s| vec![T::zero(); s.iter().product()]).collect();
    for part in parts {
        for (a, p) in acc.iter_mut().zip(part) {
            for (x, y) in a.iter_mut().zip(p) {
                *x += y;
            }
        }
    }
    acc.into_iter().zip(shapes).map(|(d, s)| Tensor::new(s.clone(), d)).collect()
}
