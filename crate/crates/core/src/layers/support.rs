use super::{next_id, ForwardCtx, Grads, Layer, Mode, Tape};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Relu {
    id: u64,
}

impl Relu {
    pub fn new() -> Self {
        Relu { id: next_id() }
    }
}

impl Default for Relu {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for Relu {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut tape = Tape::new(self.id, x.shape());
        tape.mask = x.data().iter().map(|&v| v > T::zero()).collect();
        Ok((x.map(|v| v.max(T::zero())), tape))
    }

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>> {
        tape.check(self.id)?;
        if grad.len() != tape.mask.len() {
            return Err(shape_err!("relu gradient shape {:?}", grad.shape()));
        }
        let data = grad.data().iter().zip(&tape.mask).map(|(&g, &m)| if m { g } else { T::zero() }).collect();
        Ok(Grads { input: Tensor::new(grad.shape().to_vec(), data)?, params: vec![] })
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Clone, Debug)]
pub struct MaxPool2x2 {
    id: u64,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        MaxPool2x2 { id: next_id() }
    }
}

impl Default for MaxPool2x2 {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for MaxPool2x2 {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> &'static str {
        "maxpool2x2"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let [n, c, h, w] = *x.shape() else {
            return Err(shape_err!("maxpool expects [n, c, h, w], got {:?}", x.shape()));
        };
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(shape_err!("maxpool input {h}x{w} is smaller than 2x2"));
        }
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut index = Vec::with_capacity(out.capacity());
        let d = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let k = base + (2 * i + di) * w + 2 * j + dj;
                        if d[k] > d[best] {
                            best = k;
                        }
                    }
                    out.push(d[best]);
                    index.push(best as u32);
                }
            }
        }
        let mut tape = Tape::new(self.id, x.shape());
        tape.index = index;
        Ok((Tensor::new(vec![n, c, oh, ow], out)?, tape))
    }

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>> {
        tape.check(self.id)?;
        if grad.len() != tape.index.len() {
            return Err(shape_err!("maxpool gradient shape {:?}", grad.shape()));
        }
        let mut dx = Tensor::zeros(&tape.input_shape);
        let dd = dx.data_mut();
        for (&i, &g) in tape.index.iter().zip(grad.data()) {
            dd[i as usize] += g;
        }
        Ok(Grads { input: dx, params: vec![] })
    }
}

#[derive(Clone, Debug)]
pub struct Flatten {
    id: u64,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten { id: next_id() }
    }
}

impl Default for Flatten {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let n = *x.shape().first().ok_or_else(|| shape_err!("cannot flatten a scalar"))?;
        let rest = x.shape()[1..].iter().product::<usize>();
        Ok((x.clone().reshape(&[n, rest])?, Tape::new(self.id, x.shape())))
    }

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>> {
        tape.check(self.id)?;
        Ok(Grads { input: grad.clone().reshape(&tape.input_shape)?, params: vec![] })
    }
}

/// Fully connected layer `y = x·Wᵀ + b` on `[n, in]` inputs.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    id: u64,
    weight: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(shape_err!("dense layer needs positive sizes"));
        }
        Ok(Dense { id: next_id(), weight: Tensor::zeros(&[outputs, inputs]), bias: Tensor::zeros(&[outputs]) })
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.shape()[1], self.weight.shape()[0])
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> &'static str {
        "dense"
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let (fi, fo) = self.dims();
        let [n, k] = *x.shape() else {
            return Err(shape_err!("dense expects [n, {fi}], got {:?}", x.shape()));
        };
        if k != fi {
            return Err(shape_err!("dense expects [n, {fi}], got {:?}", x.shape()));
        }
        let mut out: Vec<T> = (0..n).flat_map(|_| self.bias.data().iter().copied()).collect();
        T::gemm(n, fi, fo, T::one(), x.data(), fi as isize, 1, self.weight.data(), 1, fi as isize, T::one(), &mut out, fo as isize, 1);
        let mut tape = Tape::new(self.id, x.shape());
        tape.input = Some(x.clone());
        Ok((Tensor::new(vec![n, fo], out)?, tape))
    }

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>> {
        tape.check(self.id)?;
        let x = tape.input()?;
        let (fi, fo) = self.dims();
        let n = x.shape()[0];
        if grad.shape() != [n, fo] {
            return Err(shape_err!("dense gradient shape {:?}", grad.shape()));
        }
        let mut dx = vec![T::zero(); n * fi];
        T::gemm(n, fo, fi, T::one(), grad.data(), fo as isize, 1, self.weight.data(), fi as isize, 1, T::zero(), &mut dx, fi as isize, 1);
        let mut dw = vec![T::zero(); fo * fi];
        T::gemm(fo, n, fi, T::one(), grad.data(), 1, fo as isize, x.data(), fi as isize, 1, T::zero(), &mut dw, fi as isize, 1);
        let mut db = vec![T::zero(); fo];
        for row in grad.data().chunks(fo) {
            for (b, &g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        Ok(Grads {
            input: Tensor::new(vec![n, fi], dx)?,
            params: vec![Tensor::new(vec![fo, fi], dw)?, Tensor::new(vec![fo], db)?],
        })
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

/// Inverted dropout: active only in training mode.
#[derive(Clone, Debug)]
pub struct Dropout {
    id: u64,
    p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid!("dropout probability must be in [0, 1), got {p}"));
        }
        Ok(Dropout { id: next_id(), p })
    }
}

impl<T: Scalar> Layer<T> for Dropout {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut tape = Tape::new(self.id, x.shape());
        if ctx.mode == Mode::Eval || self.p == 0.0 {
            tape.mask = vec![true; x.len()];
            return Ok((x.clone(), tape));
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        tape.mask = (0..x.len()).map(|_| !ctx.rng.bernoulli(self.p)).collect();
        tape.saved = vec![Tensor::scalar(keep)];
        let data = x.data().iter().zip(&tape.mask).map(|(&v, &m)| if m { v * keep } else { T::zero() }).collect();
        Ok((Tensor::new(x.shape().to_vec(), data)?, tape))
    }

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>> {
        tape.check(self.id)?;
        let keep = tape.saved.first().map_or(T::one(), |t| t.data()[0]);
        let data = grad.data().iter().zip(&tape.mask).map(|(&g, &m)| if m { g * keep } else { T::zero() }).collect();
        Ok(Grads { input: Tensor::new(grad.shape().to_vec(), data)?, params: vec![] })
    }
}

/// Batch normalization over axis 1 of `[n, c]` or `[n, c, h, w]` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    id: u64,
    gamma: Tensor<T>,
    beta: Tensor<T>,
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
    momentum: f64,
    eps: f64,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            id: next_id(),
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn layout(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        let c = self.gamma.len();
        match *shape {
            [n, ch] if ch == c => Ok((n, c, 1)),
            [n, ch, h, w] if ch == c => Ok((n, c, h * w)),
            _ => Err(shape_err!("batchnorm over {c} channels got {:?}", shape)),
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn id(&self) -> u64 {
        self.id
    }

    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<T>, Tape<T>)> {
        let (n, c, s) = self.layout(x.shape())?;
        let train = ctx.mode == Mode::Train;
        let m = n * s;
        if train && m == 0 {
            return Err(shape_err!("batchnorm needs a non-empty batch in training mode"));
        }
        let d = x.data();
        let at = |i: usize, ch: usize, j: usize| (i * c + ch) * s + j;
        let mut xhat = vec![T::zero(); d.len()];
        let mut out = vec![T::zero(); d.len()];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = 0.0;
                for i in 0..n {
                    for j in 0..s {
                        sum += d[at(i, ch, j)].as_f64();
                    }
                }
                let mean = sum / m as f64;
                let mut sq = 0.0;
                for i in 0..n {
                    for j in 0..s {
                        sq += (d[at(i, ch, j)].as_f64() - mean).powi(2);
                    }
                }
                let var = sq / m as f64;
                let unbiased = if m > 1 { sq / (m - 1) as f64 } else { var };
                let mo = self.momentum;
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = T::of((1.0 - mo) * rm.as_f64() + mo * mean);
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = T::of((1.0 - mo) * rv.as_f64() + mo * unbiased);
                (mean, var)
            } else {
                (self.running_mean.data()[ch].as_f64(), self.running_var.data()[ch].as_f64())
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = T::of(is);
            let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
            let (mean, is) = (T::of(mean), T::of(is));
            for i in 0..n {
                for j in 0..s {
                    let k = at(i, ch, j);
                    xhat[k] = (d[k] - mean) * is;
                    out[k] = g * xhat[k] + b;
                }
            }
        }
        let mut tape = Tape::new(self.id, x.shape());
        tape.saved = vec![Tensor::new(x.shape().to_vec(), xhat)?, Tensor::new(vec![c], inv_std)?];
        tape.mask = vec![train];
        Ok((Tensor::new(x.shape().to_vec(), out)?, tape))
    }

    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>) -> Result<Grads<T>> {
        tape.check(self.id)?;
        let (n, c, s) = self.layout(&tape.input_shape)?;
        if grad.shape() != tape.input_shape.as_slice() {
            return Err(shape_err!("batchnorm gradient shape {:?}", grad.shape()));
        }
        let train = tape.mask[0];
        let (xhat, inv_std) = (tape.saved[0].data(), tape.saved[1].data());
        let g = grad.data();
        let at = |i: usize, ch: usize, j: usize| (i * c + ch) * s + j;
        let m = T::of((n * s) as f64);
        let mut dx = vec![T::zero(); g.len()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let (mut sg, mut sgx) = (T::zero(), T::zero());
            for i in 0..n {
                for j in 0..s {
                    let k = at(i, ch, j);
                    sg += g[k];
                    sgx += g[k] * xhat[k];
                }
            }
            dgamma[ch] = sgx;
            dbeta[ch] = sg;
            let scale = self.gamma.data()[ch] * inv_std[ch];
            for i in 0..n {
                for j in 0..s {
                    let k = at(i, ch, j);
                    dx[k] = if train { scale * (g[k] - sg / m - xhat[k] * sgx / m) } else { scale * g[k] };
                }
            }
        }
        Ok(Grads {
            input: Tensor::new(tape.input_shape.clone(), dx)?,
            params: vec![Tensor::new(vec![c], dgamma)?, Tensor::new(vec![c], dbeta)?],
        })
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("running_mean", &self.running_mean), ("running_var", &self.running_var)]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("running_mean", &mut self.running_mean), ("running_var", &mut self.running_var)]
    }
}
