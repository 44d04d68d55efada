use serde::{Deserialize, Serialize};

use super::agg::{backward_batch, forward_batch, Combine, Engine, Reduce, Term};
use super::{nchw, next_id, ForwardCtx, Grads, Layer, Tape};
use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::window::{Padding, Window2d};

/// Constraints of the two-element hit-or-miss layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DualFlags {
    /// Where `h < m` the hit cell is dropped, where `m < h` the miss cell.
    pub nonintersect: bool,
    /// Cells with `max(h, m) <= th` are don't-care in both elements.
    pub dnc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MorphKind {
    /// `min(f − h)`
    Erosion,
    /// `max(f + m)`, negated when `negate` is set.
    Dilation { negate: bool },
    /// `min(f − h) − max(f + m)`
    Dual(DualFlags),
    /// One weight grid: `min(f + w | w < 0) − max(f + w | w ≥ 0)`.
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Aggregation {
    Hard,
    /// Smooth min/max with exponent `alpha`, output multiplied by `scale`.
    Soft { alpha: f64, scale: f64 },
}

/// Trainable morphological layer: erosion, dilation, hit-or-miss and its
/// soft variant. Structuring elements are `[out_ch, in_ch, k, k]` and are
/// applied by correlation (no flipping).
#[derive(Clone, Debug)]
pub struct MorphLayer<T> {
    id: u64,
    kind: MorphKind,
    agg: Aggregation,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    padding: Padding,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> MorphLayer<T> {
    pub fn new(kind: MorphKind, agg: Aggregation, in_ch: usize, out_ch: usize, k: usize, padding: Padding) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || k == 0 {
            return Err(shape_err!("morphological layer needs positive channels and size"));
        }
        if let Aggregation::Soft { alpha, scale } = agg {
            if !(alpha >= 0.0) || !alpha.is_finite() {
                return Err(invalid!("soft hit-or-miss needs a finite alpha >= 0, got {alpha}"));
            }
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(invalid!("output scale must be positive, got {scale}"));
            }
        }
        let count = if matches!(kind, MorphKind::Dual(_)) { 2 } else { 1 };
        let params = (0..count).map(|_| Tensor::zeros(&[out_ch, in_ch, k, k])).collect();
        Ok(MorphLayer { id: next_id(), kind, agg, in_ch, out_ch, k, padding, params })
    }

    pub fn morph_kind(&self) -> MorphKind {
        self.kind
    }

    pub fn aggregation(&self) -> Aggregation {
        self.agg
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self.kind {
            MorphKind::Erosion => &["hit"],
            MorphKind::Dilation { .. } => &["miss"],
            MorphKind::Dual(_) => &["hit", "miss"],
            MorphKind::Single => &["weight"],
        }
    }

    fn cells(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    /// Active cells per term and output channel, term-major.
    pub fn active_cells(&self) -> Result<Vec<Vec<u32>>> {
        let ck = self.cells();
        let all = || (0..ck as u32).collect::<Vec<u32>>();
        let per_o = |o: usize| o * ck..(o + 1) * ck;
        Ok(match self.kind {
            MorphKind::Erosion | MorphKind::Dilation { .. } => (0..self.out_ch).map(|_| all()).collect(),
            MorphKind::Single => {
                let w = self.params[0].data();
                let hit = (0..self.out_ch).map(|o| (0..ck as u32).filter(|&c| w[per_o(o)][c as usize] < T::zero()).collect());
                let miss = (0..self.out_ch).map(|o| (0..ck as u32).filter(|&c| w[per_o(o)][c as usize] >= T::zero()).collect());
                hit.chain(miss).collect()
            }
            MorphKind::Dual(flags) => {
                let (h, m) = (self.params[0].data(), self.params[1].data());
                let th = flags.dnc.map(T::of);
                let mut hit = Vec::with_capacity(self.out_ch);
                let mut miss = Vec::with_capacity(self.out_ch);
                for o in 0..self.out_ch {
                    let (ho, mo) = (&h[per_o(o)], &m[per_o(o)]);
                    let dnc = |c: usize| th.is_some_and(|th| ho[c].max(mo[c]) <= th);
                    let a: Vec<u32> = (0..ck).filter(|&c| !dnc(c) && !(flags.nonintersect && ho[c] < mo[c])).map(|c| c as u32).collect();
                    let b: Vec<u32> = (0..ck).filter(|&c| !dnc(c) && !(flags.nonintersect && mo[c] < ho[c])).map(|c| c as u32).collect();
                    if a.is_empty() || b.is_empty() {
                        return Err(Error::AllDnc(format!(
                            "output channel {o}: every {} cell is masked",
                            if a.is_empty() { "hit" } else { "miss" }
                        )));
                    }
                    hit.push(a);
                    miss.push(b);
                }
                hit.into_iter().chain(miss).collect()
            }
        })
    }

    fn terms(&self, mut active: Vec<Vec<u32>>) -> Vec<Term<T>> {
        let (lo, hi, scale) = match self.agg {
            Aggregation::Hard => (Reduce::Min, Reduce::Max, T::one()),
            Aggregation::Soft { alpha, scale } => (Reduce::Soft(T::of(-alpha)), Reduce::Soft(T::of(alpha)), T::of(scale)),
        };
        let coef = |c: T| vec![c; self.out_ch];
        let miss_active = if active.len() > self.out_ch { active.split_off(self.out_ch) } else { Vec::new() };
        let one = T::one();
        match self.kind {
            MorphKind::Erosion => vec![Term { param: 0, combine: Combine::Add(-one), reduce: lo, coef: coef(scale), active }],
            MorphKind::Dilation { negate } => {
                let sign = if negate { -scale } else { scale };
                vec![Term { param: 0, combine: Combine::Add(one), reduce: hi, coef: coef(sign), active }]
            }
            MorphKind::Dual(_) => vec![
                Term { param: 0, combine: Combine::Add(-one), reduce: lo, coef: coef(scale), active },
                Term { param: 1, combine: Combine::Add(one), reduce: hi, coef: coef(-scale), active: miss_active },
            ],
            MorphKind::Single => vec![
                Term { param: 0, combine: Combine::Add(one), reduce: lo, coef: coef(scale), active },
                Term { param: 0, combine: Combine::Add(one), reduce: hi, coef: coef(-scale), active: miss_active },
            ],
        }
    }

    fn engine<'a>(&'a self, h: usize, w: usize, terms: &'a [Term<T>]) -> Result<Engine<'a, T>> {
        let geom = Window2d::new(self.in_ch, h, w, (self.k, self.k), (1, 1), self.padding)?;
        Ok(Engine { geom, out_ch: self.out_ch, weights: self.params.iter().map(|p| p.data()).collect(), terms })
    }
}

impl<T: Scalar> Layer<T> for MorphLayer<T> {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> &'static str {
        match (self.kind, self.agg) {
            (MorphKind::Erosion, _) => "erosion",
            (MorphKind::Dilation { .. }, _) => "dilation",
            (MorphKind::Dual(_), Aggregation::Hard) => "hm-dual",
            (MorphKind::Dual(_), Aggregation::Soft { .. }) => "shm",
            (MorphKind::Single, Aggregation::Hard) => "hm-single",
            (MorphKind::Single, Aggregation::Soft { .. }) => "shm-single",
        }
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let (_, _, h, w) = nchw(x, self.in_ch)?;
        let active = self.active_cells()?;
        let terms = self.terms(active.clone());
        let engine = self.engine(h, w, &terms)?;
        let (out, index, soft) = forward_batch(&engine, x)?;
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
        let engine = self.engine(h, w, &terms)?;
        let (input, dw) = backward_batch(&engine, x, grad, &tape.index, tape.saved[0].data())?;
        let params = dw.into_iter().map(|d| Tensor::new(vec![self.out_ch, self.in_ch, self.k, self.k], d)).collect::<Result<_>>()?;
        Ok(Grads { input, params })
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        self.param_names().iter().copied().zip(self.params.iter()).collect()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.param_names().iter().copied().zip(self.params.iter_mut()).collect()
    }

    fn dnc_cells(&self) -> Option<Vec<bool>> {
        let MorphKind::Dual(DualFlags { dnc: Some(th), .. }) = self.kind else {
            return None;
        };
        let th = T::of(th);
        Some(self.params[0].data().iter().zip(self.params[1].data()).map(|(&h, &m)| h.max(m) <= th).collect())
    }
}
