use serde::{Deserialize, Serialize};

use super::agg::{backward_batch, forward_batch, Combine, Engine, Reduce, Term};
use super::{nchw, next_id, ForwardCtx, Grads, Layer, Tape};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::window::{Padding, Window2d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcKind {
    /// `n_h·s_{−α}(f·w | w > 0) + n_m·s_{+α}(f·w | w < 0)`; zero weights are
    /// don't-care and `n_h`, `n_m` count the cells of each part.
    Gc1,
    /// `n·(s_{−α}(f·w) + s_{+α}(f·w))` over the whole window.
    Gc2,
}

/// Generalized convolution: the window sum of a convolution replaced by
/// smooth minimum and maximum terms. `alpha = ∞` uses hard min/max.
#[derive(Clone, Debug)]
pub struct GenConv<T> {
    id: u64,
    kind: GcKind,
    alpha: f64,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    padding: Padding,
    weight: Tensor<T>,
}

impl<T: Scalar> GenConv<T> {
    pub fn new(kind: GcKind, alpha: f64, in_ch: usize, out_ch: usize, k: usize, padding: Padding) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || k == 0 {
            return Err(shape_err!("generalized convolution needs positive channels and size"));
        }
        if !(alpha >= 0.0) {
            return Err(invalid!("alpha must be >= 0, got {alpha}"));
        }
        Ok(GenConv { id: next_id(), kind, alpha, in_ch, out_ch, k, padding, weight: Tensor::zeros(&[out_ch, in_ch, k, k]) })
    }

    pub fn gc_kind(&self) -> GcKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn active_cells(&self) -> Vec<Vec<u32>> {
        let ck = self.in_ch * self.k * self.k;
        let w = self.weight.data();
        match self.kind {
            GcKind::Gc2 => (0..2 * self.out_ch).map(|_| (0..ck as u32).collect()).collect(),
            GcKind::Gc1 => {
                let part = |pos: bool| {
                    (0..self.out_ch).map(move |o| {
                        (0..ck as u32)
                            .filter(|&c| {
                                let v = w[o * ck + c as usize];
                                if pos {
                                    v > T::zero()
                                } else {
                                    v < T::zero()
                                }
                            })
                            .collect::<Vec<u32>>()
                    })
                };
                part(true).chain(part(false)).collect()
            }
        }
    }

    fn terms(&self, mut active: Vec<Vec<u32>>) -> Vec<Term<T>> {
        let (lo, hi) = if self.alpha.is_infinite() {
            (Reduce::Min, Reduce::Max)
        } else {
            (Reduce::Soft(T::of(-self.alpha)), Reduce::Soft(T::of(self.alpha)))
        };
        let upper = active.split_off(self.out_ch);
        let count = |a: &[Vec<u32>]| a.iter().map(|c| T::of(c.len() as f64)).collect::<Vec<T>>();
        vec![
            Term { param: 0, combine: Combine::Mul, reduce: lo, coef: count(&active), active },
            Term { param: 0, combine: Combine::Mul, reduce: hi, coef: count(&upper), active: upper },
        ]
    }

    fn engine<'a>(&'a self, h: usize, w: usize, terms: &'a [Term<T>]) -> Result<Engine<'a, T>> {
        let geom = Window2d::new(self.in_ch, h, w, (self.k, self.k), (1, 1), self.padding)?;
        Ok(Engine { geom, out_ch: self.out_ch, weights: vec![self.weight.data()], terms })
    }
}

impl<T: Scalar> Layer<T> for GenConv<T> {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> &'static str {
        match self.kind {
            GcKind::Gc1 => "gc1",
            GcKind::Gc2 => "gc2",
        }
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let (_, _, h, w) = nchw(x, self.in_ch)?;
        let active = self.active_cells();
        let terms = self.terms(active.clone());
        let (out, index, soft) = forward_batch(&self.engine(h, w, &terms)?, x)?;
        let mut tape = Tape::new(self.id, x.shape());
        tape.input = Some(x.clone());
        tape.index = index;
        tape.saved = vec![Tensor::new(vec![soft.len()], soft)?];
        tape.active = active;
        Ok((out, tape))
    }

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>> {
        tape.check(self.id)?;
        let x = tape.input()?;
        let (_, _, h, w) = nchw(x, self.in_ch)?;
        let terms = self.terms(tape.active.clone());
        let (input, mut dw) = backward_batch(&self.engine(h, w, &terms)?, x, grad, &tape.index, tape.saved[0].data())?;
        let dw = Tensor::new(self.weight.shape().to_vec(), dw.remove(0))?;
        Ok(Grads { input, params: vec![dw] })
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weight", &self.weight)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("weight", &mut self.weight)]
    }
}
