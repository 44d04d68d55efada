use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Optimizer {
    /// `v ← μv + g; p ← p − lr·v`
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        match self {
            Optimizer::Sgd { momentum, .. } => Optimizer::Sgd { lr, momentum },
            Optimizer::Adam { beta1, beta2, eps, .. } => Optimizer::Adam { lr, beta1, beta2, eps },
        }
    }

    fn slots(&self) -> usize {
        match self {
            Optimizer::Sgd { momentum, .. } if *momentum == 0.0 => 0,
            Optimizer::Sgd { .. } => 1,
            Optimizer::Adam { .. } => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimSpec {
    #[serde(flatten)]
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl OptimSpec {
    pub fn validate(&self) -> Result<()> {
        let lr = self.optimizer.lr();
        // a zero rate is allowed: it freezes the model
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        match self.optimizer {
            Optimizer::Sgd { momentum, .. } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")))
            }
            Optimizer::Adam { beta1, beta2, eps, .. }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                Err(Error::Config("adam needs beta1, beta2 in [0, 1) and eps > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-parameter optimizer memory: momentum for SGD, first and second
/// moments for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub step: u64,
    /// `slots[s][p]` is slot `s` of parameter `p`.
    pub slots: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(opt: &Optimizer, shapes: &[Vec<usize>]) -> Self {
        let slots = (0..opt.slots()).map(|_| shapes.iter().map(|s| Tensor::zeros(s)).collect()).collect();
        OptimState { step: 0, slots }
    }

    /// Applies one update. `params` and `grads` are in the same order as the
    /// shapes the state was created with.
    pub fn update(&mut self, opt: &Optimizer, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || self.slots.iter().any(|s| s.len() != params.len()) {
            return Err(Error::Invalid(format!("{} parameters, {} gradients", params.len(), grads.len())));
        }
        self.step += 1;
        match *opt {
            Optimizer::Sgd { lr, momentum } => {
                let (lr, mu) = (T::of(lr), T::of(momentum));
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    p.same_shape(g)?;
                    if let Some(vel) = self.slots.first_mut() {
                        for ((w, &gi), v) in p.data_mut().iter_mut().zip(g.data()).zip(vel[i].data_mut()) {
                            *v = mu * *v + gi;
                            *w -= lr * *v;
                        }
                    } else {
                        for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                            *w -= lr * gi;
                        }
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = T::of(1.0 - beta1.powi(t));
                let c2 = T::of(1.0 - beta2.powi(t));
                let (b1, b2, lr, eps) = (T::of(beta1), T::of(beta2), T::of(lr), T::of(eps));
                let one = T::one();
                let (ms, vs) = self.slots.split_at_mut(1);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    p.same_shape(g)?;
                    let m = ms[0][i].data_mut();
                    let v = vs[0][i].data_mut();
                    for (j, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = b1 * m[j] + (one - b1) * gi;
                        v[j] = b2 * v[j] + (one - b2) * gi * gi;
                        let mhat = m[j] / c1;
                        let vhat = v[j] / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let opt = Optimizer::Adam { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-12 };
        let mut st = OptimState::<f64>::new(&opt, &[vec![2]]);
        let mut p = Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap();
        let g = Tensor::from_f64(&[2], &[3.0, -0.5]).unwrap();
        st.update(&opt, vec![&mut p], &[g]).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-9);
        assert!((p.data()[1] - 1.1).abs() < 1e-9);
    }

    #[test]
    fn momentum_accumulates() {
        let opt = Optimizer::Sgd { lr: 0.5, momentum: 0.5 };
        let mut st = OptimState::<f64>::new(&opt, &[vec![1]]);
        let mut p = Tensor::from_f64(&[1], &[0.0]).unwrap();
        let g = Tensor::from_f64(&[1], &[1.0]).unwrap();
        st.update(&opt, vec![&mut p], std::slice::from_ref(&g)).unwrap();
        st.update(&opt, vec![&mut p], &[g]).unwrap();
        // v1 = 1, v2 = 1.5
        assert_eq!(p.data()[0], -0.5 - 0.75);
    }

    #[test]
    fn validation() {
        let mut s = OptimSpec { optimizer: Optimizer::Sgd { lr: 0.01, momentum: 0.9 }, epochs: 1, batch_size: 0, seed: 0 };
        assert!(s.validate().is_err());
        s.batch_size = 4;
        s.validate().unwrap();
        s.optimizer = Optimizer::Sgd { lr: -1.0, momentum: 0.0 };
        assert!(s.validate().is_err());
    }
}
