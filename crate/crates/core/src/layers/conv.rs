use super::{nchw, next_id, per_sample, sum_in_order, ForwardCtx, Grads, Layer, Tape};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::window::{Padding, Window2d};

/// 2-D cross-correlation with optional bias, via im2col and GEMM.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    id: u64,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    padding: Padding,
    weight: Tensor<T>,
    bias: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, padding: Padding, bias: bool) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || k == 0 {
            return Err(shape_err!("convolution needs positive channels and size"));
        }
        Ok(Conv2d {
            id: next_id(),
            in_ch,
            out_ch,
            k,
            padding,
            weight: Tensor::zeros(&[out_ch, in_ch, k, k]),
            bias: bias.then(|| Tensor::zeros(&[out_ch])),
        })
    }

    fn geom(&self, x: &Tensor<T>) -> Result<Window2d> {
        let (_, _, h, w) = nchw(x, self.in_ch)?;
        Window2d::new(self.in_ch, h, w, (self.k, self.k), (1, 1), self.padding)
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> &'static str {
        "conv"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let g = self.geom(x)?;
        let (n, len, p, ck, oc) = (x.shape()[0], g.sample_len(), g.positions(), g.cells(), self.out_ch);
        let parts = per_sample(n, |i| {
            let mut cols = vec![T::zero(); ck * p];
            g.im2col(&x.data()[i * len..(i + 1) * len], &mut cols);
            let mut out = vec![T::zero(); oc * p];
            if let Some(b) = &self.bias {
                for (row, &bv) in out.chunks_mut(p).zip(b.data()) {
                    row.fill(bv);
                }
            }
            let beta = if self.bias.is_some() { T::one() } else { T::zero() };
            T::gemm(oc, ck, p, T::one(), self.weight.data(), ck as isize, 1, &cols, p as isize, 1, beta, &mut out, p as isize, 1);
            out
        });
        let out = Tensor::new(vec![n, oc, g.out_h(), g.out_w()], parts.concat())?;
        let mut tape = Tape::new(self.id, x.shape());
        tape.input = Some(x.clone());
        Ok((out, tape))
    }

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>> {
        tape.check(self.id)?;
        let x = tape.input()?;
        let g = self.geom(x)?;
        let (n, len, p, ck, oc) = (x.shape()[0], g.sample_len(), g.positions(), g.cells(), self.out_ch);
        if grad.len() != n * oc * p {
            return Err(shape_err!("conv gradient shape {:?}", grad.shape()));
        }
        let parts = per_sample(n, |i| {
            let gi = &grad.data()[i * oc * p..(i + 1) * oc * p];
            let mut cols = vec![T::zero(); ck * p];
            g.im2col(&x.data()[i * len..(i + 1) * len], &mut cols);
            let mut dw = vec![T::zero(); oc * ck];
            // dW = G · colsᵀ
            T::gemm(oc, p, ck, T::one(), gi, p as isize, 1, &cols, 1, p as isize, T::zero(), &mut dw, ck as isize, 1);
            // dcols = Wᵀ · G
            let mut dcols = vec![T::zero(); ck * p];
            T::gemm(ck, oc, p, T::one(), self.weight.data(), 1, ck as isize, gi, p as isize, 1, T::zero(), &mut dcols, p as isize, 1);
            let mut dx = vec![T::zero(); len];
            g.col2im_add(&dcols, &mut dx);
            let mut grads = vec![dw];
            if self.bias.is_some() {
                grads.push(gi.chunks(p).map(|r| r.iter().copied().sum()).collect());
            }
            (dx, grads)
        });
        let mut shapes = vec![self.weight.shape().to_vec()];
        if self.bias.is_some() {
            shapes.push(vec![oc]);
        }
        let mut dx = Vec::with_capacity(n * len);
        let mut pgs = Vec::with_capacity(n);
        for (d, pg) in parts {
            dx.extend(d);
            pgs.push(pg);
        }
        Ok(Grads { input: Tensor::new(x.shape().to_vec(), dx)?, params: sum_in_order(pgs, &shapes)? })
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut v = vec![("weight", &self.weight)];
        if let Some(b) = &self.bias {
            v.push(("bias", b));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut v = vec![("weight", &mut self.weight)];
        if let Some(b) = &mut self.bias {
            v.push(("bias", b));
        }
        v
    }
}
