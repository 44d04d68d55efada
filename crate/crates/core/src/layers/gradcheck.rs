//! Finite-difference oracle for backward passes.
//!
//! Layers are checked through the scalar `L = Σ r ⊙ layer(x)` with a fixed
//! random `r`, so the analytic input/parameter gradients are one backward
//! call with `r` as the upstream gradient.

use super::{
    Aggregation, BatchNorm, Conv2d, Dense, DualFlags, ForwardCtx, GcKind, GenConv, Grads, Layer, Loss, MaxPool2x2, Mode,
    MorphKind, MorphLayer, Relu, Tape,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::window::Padding;

/// Step used by [`suite`].
pub const STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-4)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Central differences `(f(x + h) − f(x − h)) / 2h` per entry of `x`.
pub fn numeric_gradient(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, step: f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let dn = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - dn) / (2.0 * step);
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates where the one-sided slopes disagree (a tie or kink inside
    /// the step). They pass if the analytic value is a valid subgradient.
    pub kinks: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub groups: Vec<GroupReport>,
}

impl Report {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }

    fn merge(&mut self, other: Report) {
        for g in other.groups {
            match self.groups.iter_mut().find(|h| h.name == g.name) {
                Some(h) => {
                    h.checked += g.checked;
                    h.kinks += g.kinks;
                    h.max_rel_err = h.max_rel_err.max(g.max_rel_err);
                }
                None => self.groups.push(g),
            }
        }
    }
}

struct Probe<'a> {
    f0: f64,
    step: f64,
    group: &'a mut GroupReport,
}

impl Probe<'_> {
    fn record(&mut self, analytic: f64, up: f64, dn: f64) {
        let h = self.step;
        let (right, left) = ((up - self.f0) / h, (self.f0 - dn) / h);
        let central = (up - dn) / (2.0 * h);
        self.group.checked += 1;
        let scale = right.abs().max(left.abs()).max(1.0);
        let err = if (right - left).abs() > 1e-3 * scale {
            self.group.kinks += 1;
            let (lo, hi) = (right.min(left), right.max(left));
            if analytic >= lo - 1e-6 * scale && analytic <= hi + 1e-6 * scale {
                0.0
            } else {
                rel_err(analytic, right).min(rel_err(analytic, left))
            }
        } else {
            rel_err(analytic, central)
        };
        self.group.max_rel_err = self.group.max_rel_err.max(err);
    }
}

fn run(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, seed: u64) -> Result<(Tensor<f64>, Tape<f64>)> {
    let mut rng = Rng::new(seed);
    layer.forward(x, &mut ForwardCtx::new(Mode::Train, &mut rng))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Compares a layer's backward pass against central differences at `x`.
pub fn check_layer(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, seed: u64, step: f64) -> Result<Report> {
    let (y, tape) = run(layer, x, seed)?;
    let mut rr = Rng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let r = Tensor::from_fn(y.shape(), |_| rr.normal(0.0, 1.0));
    let Grads { input, params } = layer.backward(&tape, &r)?;
    let f0 = dot(&y, &r);

    let mut report = Report::default();
    let mut group = GroupReport { name: "input".into(), ..Default::default() };
    let mut probe_x = x.clone();
    for i in 0..x.len() {
        let orig = probe_x.data()[i];
        probe_x.data_mut()[i] = orig + step;
        let up = dot(&run(layer, &probe_x, seed)?.0, &r);
        probe_x.data_mut()[i] = orig - step;
        let dn = dot(&run(layer, &probe_x, seed)?.0, &r);
        probe_x.data_mut()[i] = orig;
        Probe { f0, step, group: &mut group }.record(input.data()[i], up, dn);
    }
    report.groups.push(group);

    let names: Vec<&'static str> = layer.params().iter().map(|(n, _)| *n).collect();
    for (g, name) in names.iter().enumerate() {
        let mut group = GroupReport { name: (*name).into(), ..Default::default() };
        for i in 0..params[g].len() {
            let orig = layer.params()[g].1.data()[i];
            let eval = |v: f64, layer: &mut dyn Layer<f64>| -> Result<f64> {
                layer.params_mut()[g].1.data_mut()[i] = v;
                Ok(dot(&run(layer, x, seed)?.0, &r))
            };
            let up = eval(orig + step, layer)?;
            let dn = eval(orig - step, layer)?;
            layer.params_mut()[g].1.data_mut()[i] = orig;
            Probe { f0, step, group: &mut group }.record(params[g].data()[i], up, dn);
        }
        report.groups.push(group);
    }
    Ok(report)
}

/// Checks a layer over several random inputs drawn by `sample`.
pub fn check_layer_trials(
    layer: &mut dyn Layer<f64>,
    trials: usize,
    seed: u64,
    step: f64,
    mut sample: impl FnMut(&mut dyn Layer<f64>, &mut Rng) -> Tensor<f64>,
) -> Result<Report> {
    let mut rng = Rng::new(seed);
    let mut report = Report::default();
    for t in 0..trials {
        let x = sample(layer, &mut rng);
        report.merge(check_layer(layer, &x, seed.wrapping_add(t as u64), step)?);
    }
    Ok(report)
}

/// Checks a loss gradient with respect to the predictions.
pub fn check_loss(loss: Loss, pred: &Tensor<f64>, labels: &[usize], step: f64) -> Result<Report> {
    let (f0, grad) = loss.value_and_grad(pred, labels)?;
    let mut group = GroupReport { name: "pred".into(), ..Default::default() };
    let mut probe = pred.clone();
    for i in 0..pred.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = loss.value_and_grad(&probe, labels)?.0;
        probe.data_mut()[i] = orig - step;
        let dn = loss.value_and_grad(&probe, labels)?.0;
        probe.data_mut()[i] = orig;
        Probe { f0, step, group: &mut group }.record(grad.data()[i], up, dn);
    }
    Ok(Report { groups: vec![group] })
}

/// Wraps a layer and corrupts its input gradient; a negative control for the
/// checker itself.
pub struct Faulty<L>(pub L);

impl<L: Layer<f64>> Layer<f64> for Faulty<L> {
    fn id(&self) -> u64 {
        self.0.id()
    }

    fn kind(&self) -> &'static str {
        self.0.kind()
    }

    fn forward(&mut self, x: &Tensor<f64>, ctx: &mut ForwardCtx<'_>) -> Result<(Tensor<f64>, Tape<f64>)> {
        self.0.forward(x, ctx)
    }

    fn backward(&self, tape: &Tape<f64>, grad: &Tensor<f64>) -> Result<Grads<f64>> {
        let mut g = self.0.backward(tape, grad)?;
        g.input = g.input.scale(1.01);
        Ok(g)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<f64>)> {
        self.0.params()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<f64>)> {
        self.0.params_mut()
    }
}

/// What [`suite`] can check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Conv,
    Gc1,
    Gc2,
    HmDual,
    HmSingle,
    Shm,
    Erosion,
    Dilation,
    BatchNorm,
    Dense,
    Relu,
    MaxPool,
    Mse,
    SoftmaxCe,
}

impl Target {
    pub const ALL: [(&'static str, Target); 14] = [
        ("conv", Target::Conv),
        ("gc1", Target::Gc1),
        ("gc2", Target::Gc2),
        ("hm-dual", Target::HmDual),
        ("hm-single", Target::HmSingle),
        ("shm", Target::Shm),
        ("erosion", Target::Erosion),
        ("dilation", Target::Dilation),
        ("batchnorm", Target::BatchNorm),
        ("dense", Target::Dense),
        ("relu", Target::Relu),
        ("maxpool", Target::MaxPool),
        ("mse", Target::Mse),
        ("softmax-ce", Target::SoftmaxCe),
    ];

    pub fn needs_alpha(self) -> bool {
        matches!(self, Target::Gc1 | Target::Gc2 | Target::Shm)
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL.iter().find(|(n, _)| *n == s).map(|&(_, t)| t).ok_or_else(|| {
            let names: Vec<&str> = Target::ALL.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown gradcheck target `{s}` (one of {})", names.join(", ")))
        })
    }
}

/// Settings for [`suite`].
#[derive(Clone, Copy, Debug)]
pub struct SuiteSpec {
    pub target: Target,
    pub alpha: Option<f64>,
    pub flags: DualFlags,
    pub trials: usize,
    pub seed: u64,
    /// Wrap the layer in [`Faulty`].
    pub fault: bool,
}

fn random_layer(spec: &SuiteSpec) -> Result<(Box<dyn Layer<f64>>, Vec<usize>)> {
    let (c, o, k) = (2, 2, 3);
    let img = vec![2, c, 6, 6];
    let pad = Padding::None;
    let alpha = || spec.alpha.ok_or_else(|| Error::Config("this target needs an alpha".into()));
    let layer: Box<dyn Layer<f64>> = match spec.target {
        Target::Conv => Box::new(Conv2d::new(c, o, k, Padding::Zero(1), true)?),
        Target::Gc1 => Box::new(GenConv::new(GcKind::Gc1, alpha()?, c, o, k, pad)?),
        Target::Gc2 => Box::new(GenConv::new(GcKind::Gc2, alpha()?, c, o, k, pad)?),
        Target::HmDual => Box::new(MorphLayer::new(MorphKind::Dual(spec.flags), Aggregation::Hard, c, o, k, pad)?),
        Target::HmSingle => Box::new(MorphLayer::new(MorphKind::Single, Aggregation::Hard, c, o, k, pad)?),
        Target::Shm => {
            Box::new(MorphLayer::new(MorphKind::Dual(spec.flags), Aggregation::Soft { alpha: alpha()?, scale: 1.3 }, c, o, k, pad)?)
        }
        Target::Erosion => Box::new(MorphLayer::new(MorphKind::Erosion, Aggregation::Hard, c, o, k, pad)?),
        Target::Dilation => Box::new(MorphLayer::new(MorphKind::Dilation { negate: false }, Aggregation::Hard, c, o, k, pad)?),
        Target::BatchNorm => Box::new(BatchNorm::new(c)),
        Target::Dense => return Ok((Box::new(Dense::new(5, 3)?), vec![4, 5])),
        Target::Relu => Box::new(Relu::new()),
        Target::MaxPool => Box::new(MaxPool2x2::new()),
        Target::Mse | Target::SoftmaxCe => return Err(Error::Invalid("losses are not layers".into())),
    };
    Ok((layer, img))
}

/// Finite-difference check of one layer kind over `trials` random instances.
/// Each instance draws fresh parameters (standard normal, shifted by 0.5 for
/// batch-norm scales) and a fresh input.
pub fn suite(spec: &SuiteSpec) -> Result<Report> {
    let mut rng = Rng::new(spec.seed);
    let mut report = Report::default();
    if let Target::Mse | Target::SoftmaxCe = spec.target {
        if spec.fault {
            return Err(Error::Invalid("fault injection applies to layers only".into()));
        }
        let loss = if spec.target == Target::Mse { Loss::Mse } else { Loss::SoftmaxCrossEntropy };
        for _ in 0..spec.trials {
            let p = Tensor::from_fn(&[4, 5], |_| rng.normal(0.0, 1.0));
            let labels: Vec<usize> = (0..4).map(|_| rng.below(5)).collect();
            report.merge(check_loss(loss, &p, &labels, STEP)?);
        }
        return Ok(report);
    }
    for t in 0..spec.trials {
        let (mut layer, shape) = random_layer(spec)?;
        let bn = spec.target == Target::BatchNorm;
        for (name, p) in layer.params_mut() {
            let shift = if bn && name == "gamma" { 0.5 } else { 0.0 };
            p.data_mut().iter_mut().for_each(|v| *v = rng.normal(shift, 1.0));
        }
        let x = Tensor::from_fn(&shape, |_| rng.normal(0.0, 1.0));
        let seed = spec.seed.wrapping_add(t as u64);
        let r = if spec.fault {
            check_layer(&mut Faulty(layer), &x, seed, STEP)?
        } else {
            check_layer(layer.as_mut(), &x, seed, STEP)?
        };
        report.merge(r);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_slope_is_exact() {
        let x = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let g = numeric_gradient(|t| 3.0 * t.sum(), &x, 1e-3);
        assert!(g.data().iter().all(|&v| (v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn kink_with_valid_subgradient_is_flagged_not_failed() {
        let mut group = GroupReport::default();
        let h = 1e-5;
        // |x| at 0: right slope 1, left slope −1; 0.3 is a valid subgradient
        Probe { f0: 0.0, step: h, group: &mut group }.record(0.3, h, h);
        assert_eq!(group.kinks, 1);
        assert_eq!(group.max_rel_err, 0.0);
        Probe { f0: 0.0, step: h, group: &mut group }.record(3.0, h, h);
        assert!(group.max_rel_err > 0.5);
    }

    #[test]
    fn suite_covers_every_target() {
        for &(name, target) in Target::ALL.iter() {
            let spec = SuiteSpec { target, alpha: Some(0.5), flags: DualFlags::default(), trials: 2, seed: 9, fault: false };
            let r = suite(&spec).unwrap();
            assert!(r.passed(1e-4), "{name}: {r:?}");
        }
        let spec = SuiteSpec { target: Target::Conv, alpha: None, flags: DualFlags::default(), trials: 2, seed: 9, fault: true };
        assert!(!suite(&spec).unwrap().passed(1e-4));
    }
}
