use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{initialize, InitContext, InitSpec, VarianceModel};
use crate::layers::{
    Aggregation, BatchNorm, Conv2d, Dense, Dropout, DualFlags, Flatten, ForwardCtx, GcKind, GenConv, Layer, Loss, MaxPool2x2,
    Mode, MorphKind, MorphLayer, Relu, Tape,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::window::Padding;

/// The feature-extracting operation of a network, one per `--layer` value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Conv,
    Gc1,
    Gc2,
    HmDual,
    HmSingle,
    Shm,
    Erosion,
    Dilation,
}

impl OpKind {
    pub const ALL: [OpKind; 8] =
        [OpKind::Conv, OpKind::Gc1, OpKind::Gc2, OpKind::HmDual, OpKind::HmSingle, OpKind::Shm, OpKind::Erosion, OpKind::Dilation];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Conv => "conv",
            OpKind::Gc1 => "gc1",
            OpKind::Gc2 => "gc2",
            OpKind::HmDual => "hm-dual",
            OpKind::HmSingle => "hm-single",
            OpKind::Shm => "shm",
            OpKind::Erosion => "erosion",
            OpKind::Dilation => "dilation",
        }
    }

    pub fn needs_alpha(self) -> bool {
        matches!(self, OpKind::Gc1 | OpKind::Gc2 | OpKind::Shm)
    }

    /// Initializer used when a layer spec names none.
    pub fn default_init(self, alpha: Option<f64>) -> InitSpec {
        match self {
            OpKind::Conv => InitSpec::Kaiming,
            OpKind::Gc1 | OpKind::Gc2 => InitSpec::GcVariance { alpha: alpha.unwrap_or(f64::INFINITY) },
            OpKind::HmSingle => InitSpec::Uniform { lo: -0.01, hi: 0.01 },
            OpKind::HmDual | OpKind::Shm | OpKind::Erosion | OpKind::Dilation => InitSpec::ShmVariance,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer kind `{s}`")))
    }
}

/// Mask flags applied to every dual-element hit-or-miss layer of a model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    #[serde(default)]
    pub nonintersect: bool,
    #[serde(default)]
    pub dnc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Op {
        op: OpKind,
        out: usize,
        k: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default, with = "crate::serde_f64::option")]
        alpha: Option<f64>,
        #[serde(default)]
        init: Option<InitSpec>,
    },
    BatchNorm,
    Relu,
    MaxPool,
    Flatten,
    Dropout {
        p: f64,
    },
    Dense {
        out: usize,
        #[serde(default)]
        init: Option<InitSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `[channels, height, width]` of one sample.
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub loss: Loss,
    #[serde(default)]
    pub constraints: Constraints,
    /// Variance table in `alpha a b` text form; the built-in defaults when absent.
    #[serde(default)]
    pub variance: Option<String>,
}

impl ModelSpec {
    pub fn variance_model(&self) -> Result<VarianceModel> {
        match &self.variance {
            Some(text) => VarianceModel::from_text(text),
            None => Ok(VarianceModel::default()),
        }
    }

    /// Shape after every layer, input first. Fails on the first layer that
    /// does not compose with its predecessor.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.len() != 3 || self.input.contains(&0) {
            return Err(Error::Config(format!("model input must be [c, h, w] with positive extents, got {:?}", self.input)));
        }
        let mut shapes = vec![self.input.clone()];
        for (i, l) in self.layers.iter().enumerate() {
            let s = shapes.last().unwrap();
            let bad = |why: String| Error::Config(format!("layer{i}: {why}"));
            let next = match *l {
                LayerSpec::Op { op, out, k, padding, alpha, .. } => {
                    let [_, h, w] = s[..] else { return Err(bad(format!("{op} needs [c, h, w] input, got {s:?}"))) };
                    if out == 0 || k == 0 {
                        return Err(bad(format!("{op} needs positive channels and size")));
                    }
                    match alpha {
                        Some(a) if !(a >= 0.0) => return Err(bad(format!("alpha must be >= 0, got {a}"))),
                        Some(a) if op == OpKind::Shm && !a.is_finite() => {
                            return Err(bad("soft hit-or-miss needs a finite alpha".into()))
                        }
                        None if op.needs_alpha() => return Err(bad(format!("{op} needs an alpha"))),
                        Some(_) if !op.needs_alpha() => return Err(bad(format!("{op} takes no alpha"))),
                        _ => {}
                    }
                    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                    if ph < k || pw < k {
                        return Err(bad(format!("{k}x{k} window does not fit a {h}x{w} input with padding {padding}")));
                    }
                    vec![out, ph - k + 1, pw - k + 1]
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => s.clone(),
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(bad(format!("dropout rate must be in [0, 1), got {p}")));
                    }
                    s.clone()
                }
                LayerSpec::MaxPool => {
                    let [c, h, w] = s[..] else { return Err(bad(format!("maxpool needs [c, h, w], got {s:?}"))) };
                    if h < 2 || w < 2 {
                        return Err(bad(format!("maxpool input {h}x{w} is smaller than 2x2")));
                    }
                    vec![c, h / 2, w / 2]
                }
                LayerSpec::Flatten => vec![s.iter().product()],
                LayerSpec::Dense { out, .. } => {
                    if s.len() != 1 {
                        return Err(bad(format!("dense needs flat input, got {s:?}")));
                    }
                    if out == 0 {
                        return Err(bad("dense needs a positive width".into()));
                    }
                    vec![out]
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Number of network outputs per sample.
    pub fn outputs(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap().iter().product())
    }
}

/// Single hit-or-miss (or other operation) layer whose two full-image
/// filters produce the two class scores directly.
pub fn synthetic_net(op: OpKind, alpha: Option<f64>, grid: usize, init: Option<InitSpec>, constraints: Constraints) -> ModelSpec {
    let init = init.or(Some(match op {
        OpKind::HmDual | OpKind::Shm | OpKind::Erosion | OpKind::Dilation => InitSpec::Constant { value: 0.01 },
        _ => InitSpec::Uniform { lo: -0.01, hi: 0.01 },
    }));
    ModelSpec {
        input: vec![1, grid, grid],
        layers: vec![LayerSpec::Op { op, out: 2, k: grid, padding: 0, alpha, init }, LayerSpec::Flatten],
        loss: Loss::Mse,
        constraints,
        variance: None,
    }
}

/// Four feature layers in two pooled blocks, then a dense head.
/// `widths = (block1, block2, dense)`; the full-size network is `(32, 64, 512)`.
pub fn mini_vgg(
    op: OpKind,
    alpha: Option<f64>,
    input: [usize; 3],
    classes: usize,
    widths: (usize, usize, usize),
    init: Option<InitSpec>,
    constraints: Constraints,
) -> ModelSpec {
    let feat = |out| LayerSpec::Op { op, out, k: 3, padding: 1, alpha, init: init.clone() };
    let mut layers = Vec::new();
    for w in [widths.0, widths.1] {
        for _ in 0..2 {
            layers.extend([feat(w), LayerSpec::BatchNorm, LayerSpec::Relu]);
        }
        layers.extend([LayerSpec::MaxPool, LayerSpec::Dropout { p: 0.25 }]);
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { out: widths.2, init: None },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::Dropout { p: 0.5 },
        LayerSpec::Dense { out: classes, init: None },
    ]);
    ModelSpec { input: input.to_vec(), layers, loss: Loss::SoftmaxCrossEntropy, constraints, variance: None }
}

pub fn mini_vgg_lite(op: OpKind, alpha: Option<f64>, input: [usize; 3], classes: usize, init: Option<InitSpec>, c: Constraints) -> ModelSpec {
    mini_vgg(op, alpha, input, classes, (16, 32, 256), init, c)
}

/// Result of a checked forward pass.
pub struct Forward<T> {
    pub output: Tensor<T>,
    pub tapes: Vec<Tape<T>>,
    /// Index of the first layer whose output holds a NaN or infinity.
    pub non_finite: Option<usize>,
}

/// A feed-forward stack built from a [`ModelSpec`].
pub struct Sequential<T: Scalar> {
    spec: ModelSpec,
    layers: Vec<Box<dyn Layer<T>>>,
    inits: Vec<Option<InitSpec>>,
    fan_in: Vec<usize>,
}

impl<T: Scalar> Sequential<T> {
    /// Builds the layers with zero parameters; see [`Sequential::init`].
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let vm = spec.variance_model()?;
        let mut layers: Vec<Box<dyn Layer<T>>> = Vec::with_capacity(spec.layers.len());
        let mut inits = Vec::new();
        let mut fan_in = Vec::new();
        for (l, s) in spec.layers.iter().zip(&shapes) {
            let (layer, init, n): (Box<dyn Layer<T>>, _, _) = match l {
                &LayerSpec::Op { op, out, k, padding, alpha, ref init } => {
                    let c = s[0];
                    let pad = if padding == 0 { Padding::None } else { Padding::Zero(padding) };
                    let n = c * k * k;
                    let flags = DualFlags { nonintersect: spec.constraints.nonintersect, dnc: spec.constraints.dnc };
                    let layer: Box<dyn Layer<T>> = match op {
                        OpKind::Conv => Box::new(Conv2d::new(c, out, k, pad, true)?),
                        OpKind::Gc1 => Box::new(GenConv::new(GcKind::Gc1, alpha.unwrap(), c, out, k, pad)?),
                        OpKind::Gc2 => Box::new(GenConv::new(GcKind::Gc2, alpha.unwrap(), c, out, k, pad)?),
                        OpKind::HmDual => Box::new(MorphLayer::new(MorphKind::Dual(flags), Aggregation::Hard, c, out, k, pad)?),
                        OpKind::HmSingle => Box::new(MorphLayer::new(MorphKind::Single, Aggregation::Hard, c, out, k, pad)?),
                        OpKind::Shm => {
                            let alpha = alpha.unwrap();
                            let scale = vm.alpha_scale(alpha, n)?;
                            Box::new(MorphLayer::new(MorphKind::Dual(flags), Aggregation::Soft { alpha, scale }, c, out, k, pad)?)
                        }
                        OpKind::Erosion => Box::new(MorphLayer::new(MorphKind::Erosion, Aggregation::Hard, c, out, k, pad)?),
                        OpKind::Dilation => {
                            Box::new(MorphLayer::new(MorphKind::Dilation { negate: false }, Aggregation::Hard, c, out, k, pad)?)
                        }
                    };
                    (layer, Some(init.clone().unwrap_or_else(|| op.default_init(alpha))), n)
                }
                LayerSpec::BatchNorm => (Box::new(BatchNorm::new(s[0])), None, 0),
                LayerSpec::Relu => (Box::new(Relu::new()), None, 0),
                LayerSpec::MaxPool => (Box::new(MaxPool2x2::new()), None, 0),
                LayerSpec::Flatten => (Box::new(Flatten::new()), None, 0),
                &LayerSpec::Dropout { p } => (Box::new(Dropout::new(p)?), None, 0),
                LayerSpec::Dense { out, init } => {
                    (Box::new(Dense::new(s[0], *out)?), Some(init.clone().unwrap_or(InitSpec::Kaiming)), s[0])
                }
            };
            layers.push(layer);
            inits.push(init);
            fan_in.push(n);
        }
        Ok(Sequential { spec: spec.clone(), layers, inits, fan_in })
    }

    /// Draws every weight tensor. Biases and batch-norm parameters keep their
    /// construction values. With a probe batch, each layer's input variance is
    /// measured by pushing the probe through the already initialized prefix;
    /// otherwise unit variance is assumed.
    pub fn init(&mut self, rng: &mut Rng, probe: Option<&Tensor<T>>) -> Result<()> {
        let vm = self.spec.variance_model()?;
        let saved: Vec<Vec<Tensor<T>>> =
            self.layers.iter().map(|l| l.buffers().into_iter().map(|(_, t)| t.clone()).collect()).collect();
        let mut act = probe.cloned();
        let mut probe_rng = Rng::new(0);
        for i in 0..self.layers.len() {
            if let Some(init) = &self.inits[i] {
                let sigma_f2 = act.as_ref().map_or(1.0, |a| a.variance().as_f64());
                let ctx = InitContext { fan_in: self.fan_in[i], sigma_f2: if sigma_f2 > 0.0 { sigma_f2 } else { 1.0 }, model: &vm };
                for (name, p) in self.layers[i].params_mut() {
                    if name != "bias" {
                        *p = initialize(init, p.shape(), &ctx, rng)?;
                    }
                }
            }
            if let Some(a) = act.take() {
                let mut ctx = ForwardCtx::new(Mode::Train, &mut probe_rng);
                act = Some(self.layers[i].forward(&a, &mut ctx)?.0);
            }
        }
        for (l, bufs) in self.layers.iter_mut().zip(saved) {
            for ((_, b), s) in l.buffers_mut().into_iter().zip(bufs) {
                *b = s;
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, i: usize) -> &dyn Layer<T> {
        self.layers[i].as_ref()
    }

    /// `layer{i}` for the i-th layer.
    pub fn layer_name(&self, i: usize) -> String {
        format!("layer{i}")
    }

    pub fn find_layer(&self, name: &str) -> Result<usize> {
        (0..self.len())
            .find(|&i| self.layer_name(i) == name)
            .ok_or_else(|| Error::Config(format!("no layer named `{name}` (model has layer0..layer{})", self.len().saturating_sub(1))))
    }

    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_>) -> Result<Forward<T>> {
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut non_finite = None;
        let mut cur = None::<Tensor<T>>;
        for (i, l) in self.layers.iter_mut().enumerate() {
            let (y, tape) = l.forward(cur.as_ref().unwrap_or(x), ctx)?;
            if non_finite.is_none() && !y.all_finite() {
                non_finite = Some(i);
            }
            tapes.push(tape);
            cur = Some(y);
        }
        Ok(Forward { output: cur.unwrap_or_else(|| x.clone()), tapes, non_finite })
    }

    /// Parameter gradients per layer, in [`Layer::params`] order.
    pub fn backward(&self, tapes: &[Tape<T>], grad: Tensor<T>) -> Result<Vec<Vec<Tensor<T>>>> {
        if tapes.len() != self.layers.len() {
            return Err(Error::Invalid(format!("{} tapes for {} layers", tapes.len(), self.layers.len())));
        }
        let mut g = grad;
        let mut out = vec![Vec::new(); self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let grads = self.layers[i].backward(&tapes[i], &g)?;
            out[i] = grads.params;
            g = grads.input;
        }
        Ok(out)
    }

    /// Eval-mode outputs, computed in chunks of `batch` samples.
    pub fn predict(&mut self, x: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        let n = *x.shape().first().unwrap_or(&0);
        let mut rng = Rng::new(0);
        let mut parts = Vec::new();
        for start in (0..n).step_by(batch.max(1)) {
            let rows: Vec<usize> = (start..(start + batch.max(1)).min(n)).collect();
            let mut ctx = ForwardCtx::new(Mode::Eval, &mut rng);
            parts.push(self.forward(&x.select(&rows), &mut ctx)?.output);
        }
        Tensor::concat(&parts)
    }

    /// Trainable tensors as `layer{i}.{name}`.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in l.params() {
                v.push((format!("layer{i}.{name}"), t));
            }
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, t) in l.params_mut() {
                v.push((format!("layer{i}.{name}"), t));
            }
        }
        v
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in l.buffers() {
                v.push((format!("layer{i}.{name}"), t));
            }
        }
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, t) in l.buffers_mut() {
                v.push((format!("layer{i}.{name}"), t));
            }
        }
        v
    }

    /// Replaces a named parameter or buffer. The shape must match exactly.
    pub fn set_tensor(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let (layer, field) = name.split_once('.').ok_or_else(|| Error::Checkpoint(format!("bad tensor name `{name}`")))?;
        let i = self.find_layer(layer).map_err(|_| Error::Checkpoint(format!("model has no tensor `{name}`")))?;
        let l = &mut self.layers[i];
        let mut all = l.params_mut();
        if !all.iter().any(|(n, _)| *n == field) {
            all = l.buffers_mut();
        }
        let (_, slot) =
            all.into_iter().find(|(n, _)| *n == field).ok_or_else(|| Error::Checkpoint(format!("model has no tensor `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, stored tensor is {:?}", slot.shape(), value.shape())));
        }
        *slot = value;
        Ok(())
    }
}
