//! Shared engine for window aggregations.
//!
//! A layer is a sum of terms. Each term combines every active window cell
//! with a weight (`f + s·w` or `f·w`), reduces over the cells with min, max
//! or a smooth maximum, and multiplies by a per-channel coefficient.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::window::Window2d;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Combine<T> {
    /// `f + s·w`
    Add(T),
    /// `f·w`
    Mul,
}

impl<T: Scalar> Combine<T> {
    #[inline(always)]
    fn value(self, f: T, w: T) -> T {
        match self {
            Combine::Add(s) => f + s * w,
            Combine::Mul => f * w,
        }
    }

    /// (∂v/∂f, ∂v/∂w)
    #[inline(always)]
    fn partials(self, f: T, w: T) -> (T, T) {
        match self {
            Combine::Add(s) => (T::one(), s),
            Combine::Mul => (w, f),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Reduce<T> {
    Min,
    Max,
    /// Smooth maximum with signed exponent (negative leans to the minimum).
    Soft(T),
}

#[derive(Clone, Debug)]
pub(crate) struct Term<T> {
    pub param: usize,
    pub combine: Combine<T>,
    pub reduce: Reduce<T>,
    /// Per output channel.
    pub coef: Vec<T>,
    /// Active cell indices per output channel, ascending.
    pub active: Vec<Vec<u32>>,
}

pub(crate) struct Engine<'a, T> {
    pub geom: Window2d,
    pub out_ch: usize,
    pub weights: Vec<&'a [T]>,
    pub terms: &'a [Term<T>],
}

/// Per-sample forward result.
pub(crate) struct SampleOut<T> {
    pub out: Vec<T>,
    /// `terms * out_ch * P` winner cells of hard terms.
    pub index: Vec<u32>,
    /// `terms * 3 * out_ch * P`: value, pivot and normalizer of soft terms.
    pub soft: Vec<T>,
}

impl<T: Scalar> Engine<'_, T> {
    fn positions(&self) -> usize {
        self.geom.positions()
    }

    pub fn cols(&self, sample: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.geom.cells() * self.positions()];
        self.geom.im2col(sample, &mut cols);
        cols
    }

    pub fn forward_sample(&self, sample: &[T]) -> SampleOut<T> {
        let cols = self.cols(sample);
        let (p, ck, oc, nt) = (self.positions(), self.geom.cells(), self.out_ch, self.terms.len());
        let mut out = vec![T::zero(); oc * p];
        let mut index = vec![0u32; nt * oc * p];
        let mut soft = vec![T::zero(); nt * 3 * oc * p];
        let mut best = vec![T::zero(); p];
        let mut acc = vec![T::zero(); p];
        let mut z = vec![T::zero(); p];
        for (t, term) in self.terms.iter().enumerate() {
            let is_max = match term.reduce {
                Reduce::Min => false,
                Reduce::Max => true,
                Reduce::Soft(_) => continue,
            };
            for o in 0..oc {
                let active = &term.active[o];
                if active.is_empty() {
                    continue;
                }
                let w = &self.weights[term.param][o * ck..(o + 1) * ck];
                let idx = &mut index[(t * oc + o) * p..(t * oc + o + 1) * p];
                hard(&cols, p, w, active, term.combine, is_max, &mut best, idx);
                let coef = term.coef[o];
                for (y, &v) in out[o * p..(o + 1) * p].iter_mut().zip(&best) {
                    *y += coef * v;
                }
            }
        }
        for (t, term) in self.terms.iter().enumerate() {
            let Reduce::Soft(a) = term.reduce else { continue };
            for o in 0..oc {
                let active = &term.active[o];
                if active.is_empty() {
                    continue;
                }
                let w = &self.weights[term.param][o * ck..(o + 1) * ck];
                let out_o = &mut out[o * p..(o + 1) * p];
                let coef = term.coef[o];
                pivot(&cols, p, w, active, term.combine, a >= T::zero(), &mut best);
                acc.fill(T::zero());
                z.fill(T::zero());
                for &c in active {
                    let (col, wc) = (&cols[c as usize * p..(c as usize + 1) * p], w[c as usize]);
                    for (((&f, &m), zz), s) in col.iter().zip(&best).zip(z.iter_mut()).zip(acc.iter_mut()) {
                        let v = term.combine.value(f, wc);
                        let e = (a * (v - m)).exp();
                        *zz += e;
                        *s += e * v;
                    }
                }
                let base = (t * 3) * oc * p;
                for q in 0..p {
                    let s = acc[q] / z[q];
                    out_o[q] += coef * s;
                    soft[base + o * p + q] = s;
                    soft[base + (oc + o) * p + q] = best[q];
                    soft[base + (2 * oc + o) * p + q] = z[q];
                }
            }
        }
        SampleOut { out, index, soft }
    }

    /// Returns the sample gradient and one gradient buffer per weight tensor.
    pub fn backward_sample(&self, sample: &[T], grad: &[T], index: &[u32], soft: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
        let cols = self.cols(sample);
        let (p, ck, oc) = (self.positions(), self.geom.cells(), self.out_ch);
        let mut dcols = vec![T::zero(); ck * p];
        let mut dw: Vec<Vec<T>> = self.weights.iter().map(|w| vec![T::zero(); w.len()]).collect();
        for (t, term) in self.terms.iter().enumerate() {
            for o in 0..oc {
                let active = &term.active[o];
                if active.is_empty() {
                    continue;
                }
                let w = &self.weights[term.param][o * ck..(o + 1) * ck];
                let dw_o = &mut dw[term.param][o * ck..(o + 1) * ck];
                let g = &grad[o * p..(o + 1) * p];
                let coef = term.coef[o];
                match term.reduce {
                    Reduce::Min | Reduce::Max => {
                        let idx = &index[(t * oc + o) * p..(t * oc + o + 1) * p];
                        for (q, (&c, &gq)) in idx.iter().zip(g).enumerate() {
                            let c = c as usize;
                            let d = coef * gq;
                            let (df, dwc) = term.combine.partials(cols[c * p + q], w[c]);
                            dcols[c * p + q] += d * df;
                            dw_o[c] += d * dwc;
                        }
                    }
                    Reduce::Soft(a) => {
                        let base = (t * 3) * oc * p;
                        let s = &soft[base + o * p..base + (o + 1) * p];
                        let m = &soft[base + (oc + o) * p..base + (oc + o + 1) * p];
                        let z = &soft[base + (2 * oc + o) * p..base + (2 * oc + o + 1) * p];
                        for &c in active {
                            let c = c as usize;
                            let wc = w[c];
                            let col = &cols[c * p..(c + 1) * p];
                            let dcol = &mut dcols[c * p..(c + 1) * p];
                            let mut dwc = T::zero();
                            for q in 0..p {
                                let v = term.combine.value(col[q], wc);
                                let pr = (a * (v - m[q])).exp() / z[q];
                                let d = coef * g[q] * pr * (T::one() + a * (v - s[q]));
                                let (df, dwv) = term.combine.partials(col[q], wc);
                                dcol[q] += d * df;
                                dwc += d * dwv;
                            }
                            dw_o[c] += dwc;
                        }
                    }
                }
            }
        }
        let mut dsample = vec![T::zero(); self.geom.sample_len()];
        self.geom.col2im_add(&dcols, &mut dsample);
        (dsample, dw)
    }
}

/// Min or max over active cells with lowest-index tie breaking.
#[allow(clippy::too_many_arguments)]
fn hard<T: Scalar>(
    cols: &[T],
    p: usize,
    w: &[T],
    active: &[u32],
    combine: Combine<T>,
    is_max: bool,
    best: &mut [T],
    idx: &mut [u32],
) {
    // the select only vectorizes with blend instructions, absent from the
    // x86-64 baseline
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime
        unsafe { hard_avx2(cols, p, w, active, combine, is_max, best, idx) };
        return;
    }
    hard_body(cols, p, w, active, combine, is_max, best, idx);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn hard_avx2<T: Scalar>(
    cols: &[T],
    p: usize,
    w: &[T],
    active: &[u32],
    combine: Combine<T>,
    is_max: bool,
    best: &mut [T],
    idx: &mut [u32],
) {
    hard_body(cols, p, w, active, combine, is_max, best, idx);
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn hard_body<T: Scalar>(
    cols: &[T],
    p: usize,
    w: &[T],
    active: &[u32],
    combine: Combine<T>,
    is_max: bool,
    best: &mut [T],
    idx: &mut [u32],
) {
    best.fill(if is_max { T::neg_infinity() } else { T::infinity() });
    idx.fill(active[0]);
    for &c in active {
        let (col, wc) = (&cols[c as usize * p..(c as usize + 1) * p], w[c as usize]);
        macro_rules! sweep {
            ($v:expr, $better:expr) => {
                for ((&f, b), i) in col.iter().zip(best.iter_mut()).zip(idx.iter_mut()) {
                    let v = $v(f);
                    let win = $better(v, *b);
                    *b = if win { v } else { *b };
                    *i = if win { c } else { *i };
                }
            };
        }
        match (combine, is_max) {
            (Combine::Add(s), false) => {
                let k = s * wc;
                sweep!(|f| f + k, |v, b| v < b)
            }
            (Combine::Add(s), true) => {
                let k = s * wc;
                sweep!(|f| f + k, |v, b| v > b)
            }
            (Combine::Mul, false) => sweep!(|f| f * wc, |v, b| v < b),
            (Combine::Mul, true) => sweep!(|f| f * wc, |v, b| v > b),
        }
    }
}

/// Max (for `upper`) or min of the combined values per position.
fn pivot<T: Scalar>(cols: &[T], p: usize, w: &[T], active: &[u32], combine: Combine<T>, upper: bool, out: &mut [T]) {
    out.fill(if upper { T::neg_infinity() } else { T::infinity() });
    for &c in active {
        let (col, wc) = (&cols[c as usize * p..(c as usize + 1) * p], w[c as usize]);
        for (&f, m) in col.iter().zip(out.iter_mut()) {
            let v = combine.value(f, wc);
            *m = if upper { m.max(v) } else { m.min(v) };
        }
    }
}

/// Batch forward: output `[n, out_ch, oh, ow]`, concatenated winner indices
/// and soft statistics.
pub(crate) fn forward_batch<T: Scalar>(engine: &Engine<'_, T>, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>, Vec<T>)> {
    let n = x.shape()[0];
    let len = engine.geom.sample_len();
    let parts = super::per_sample(n, |i| engine.forward_sample(&x.data()[i * len..(i + 1) * len]));
    let mut out = Vec::with_capacity(n * engine.out_ch * engine.positions());
    let mut index = Vec::new();
    let mut soft = Vec::new();
    for s in parts {
        out.extend(s.out);
        index.extend(s.index);
        soft.extend(s.soft);
    }
    let shape = vec![n, engine.out_ch, engine.geom.out_h(), engine.geom.out_w()];
    Ok((Tensor::new(shape, out)?, index, soft))
}

/// Batch backward matching [`forward_batch`].
pub(crate) fn backward_batch<T: Scalar>(
    engine: &Engine<'_, T>,
    x: &Tensor<T>,
    grad: &Tensor<T>,
    index: &[u32],
    soft: &[T],
) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
    let n = x.shape()[0];
    let len = engine.geom.sample_len();
    let p = engine.positions();
    let (gl, il, sl) = (engine.out_ch * p, engine.terms.len() * engine.out_ch * p, engine.terms.len() * 3 * engine.out_ch * p);
    if grad.len() != n * gl {
        return Err(shape_err!("gradient has {} values, expected {}", grad.len(), n * gl));
    }
    let parts = super::per_sample(n, |i| {
        engine.backward_sample(
            &x.data()[i * len..(i + 1) * len],
            &grad.data()[i * gl..(i + 1) * gl],
            &index[i * il..(i + 1) * il],
            &soft[i * sl..(i + 1) * sl],
        )
    });
    let mut dx = Vec::with_capacity(n * len);
    let mut dw: Vec<Vec<T>> = engine.weights.iter().map(|w| vec![T::zero(); w.len()]).collect();
    for (ds, dws) in parts {
        dx.extend(ds);
        for (acc, part) in dw.iter_mut().zip(dws) {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), dx)?, dw))
}
