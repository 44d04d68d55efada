use serde::{Deserialize, Serialize};

use super::model::Sequential;
use super::optim::{OptimSpec, OptimState};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::layers::{ForwardCtx, Mode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch losses.
    pub train_loss: f64,
    /// Accuracy of the training-mode forward passes during the epoch.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

/// Everything besides the model that a resumed run needs.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    /// Completed epochs.
    pub epoch: usize,
    /// Drives shuffling and dropout.
    pub rng: Rng,
    pub optim: OptimState<T>,
    pub history: Vec<EpochRecord>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: &Sequential<T>, optim: &OptimSpec, rng: Rng) -> Self {
        let shapes: Vec<Vec<usize>> = model.params().iter().map(|(_, t)| t.shape().to_vec()).collect();
        TrainState { epoch: 0, rng, optim: OptimState::new(&optim.optimizer, &shapes), history: Vec::new() }
    }

    pub fn best_test_acc(&self) -> Option<f64> {
        self.history.iter().filter_map(|r| r.test_acc).reduce(f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Called after every epoch.
pub type EpochHook<'a, T> = dyn FnMut(&EpochRecord, &Sequential<T>, &TrainState<T>) -> Result<Control> + 'a;

/// Independent streams derived from one run seed.
pub struct RunRngs {
    pub data: Rng,
    pub test_data: Rng,
    pub init: Rng,
    pub train: Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let mut root = Rng::new(seed);
        RunRngs { data: root.fork(), test_data: root.fork(), init: root.fork(), train: root.fork() }
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Predicted class per sample: the first maximal output.
pub fn predictions<T: Scalar>(out: &Tensor<T>) -> Vec<usize> {
    let n = *out.shape().first().unwrap_or(&0);
    if n == 0 {
        return Vec::new();
    }
    let k = out.len() / n;
    out.data().chunks(k).map(argmax).collect()
}

fn check_data<T: Scalar>(model: &Sequential<T>, data: &LabeledSet<T>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("data set is empty".into()));
    }
    if data.sample_shape() != model.spec().input.as_slice() {
        return Err(Error::Config(format!(
            "model expects samples of shape {:?}, data has {:?}",
            model.spec().input,
            data.sample_shape()
        )));
    }
    let k = model.spec().outputs()?;
    if data.num_classes() > k {
        return Err(Error::Config(format!("{} classes but the model has {k} outputs", data.num_classes())));
    }
    Ok(())
}

/// Runs epochs `state.epoch + 1 ..= optim.epochs`. Minibatches are drawn
/// from a fresh shuffle each epoch; a batch size of at least the set size
/// means full-batch descent in data order.
pub fn train<T: Scalar>(
    model: &mut Sequential<T>,
    data: &LabeledSet<T>,
    test: Option<&LabeledSet<T>>,
    optim: &OptimSpec,
    state: &mut TrainState<T>,
    hook: &mut EpochHook<'_, T>,
) -> Result<()> {
    optim.validate()?;
    check_data(model, data)?;
    if let Some(t) = test {
        check_data(model, t)?;
    }
    let loss = model.spec().loss;
    let n = data.len();
    let bs = optim.batch_size.min(n);
    while state.epoch < optim.epochs {
        let epoch = state.epoch + 1;
        let mut order: Vec<usize> = (0..n).collect();
        if bs < n {
            state.rng.shuffle(&mut order);
        }
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for rows in order.chunks(bs) {
            let x = if rows.len() == n && bs == n { data.images.clone() } else { data.images.select(rows) };
            let labels: Vec<usize> = rows.iter().map(|&i| data.labels[i]).collect();
            let mut ctx = ForwardCtx::new(Mode::Train, &mut state.rng);
            let fwd = model.forward(&x, &mut ctx)?;
            if let Some(i) = fwd.non_finite {
                return Err(Error::Diverged { layer: model.layer_name(i), epoch });
            }
            let (l, grad) = loss.value_and_grad(&fwd.output, &labels)?;
            if !l.is_finite() {
                return Err(Error::Diverged { layer: "loss".into(), epoch });
            }
            loss_sum += l.as_f64() * rows.len() as f64;
            correct += predictions(&fwd.output).iter().zip(&labels).filter(|(p, y)| p == y).count();
            let grads = model.backward(&fwd.tapes, grad)?;
            if let Some(i) = grads.iter().position(|g| g.iter().any(|t| !t.all_finite())) {
                return Err(Error::Diverged { layer: model.layer_name(i), epoch });
            }
            let flat: Vec<Tensor<T>> = grads.into_iter().flatten().collect();
            let params = model.params_mut().into_iter().map(|(_, p)| p).collect();
            state.optim.update(&optim.optimizer, params, &flat)?;
        }
        let test_acc = match test {
            Some(t) => Some(evaluate(model, t)?.accuracy),
            None => None,
        };
        let rec = EpochRecord { epoch, train_loss: loss_sum / n as f64, train_acc: correct as f64 / n as f64, test_acc };
        state.epoch = epoch;
        state.history.push(rec.clone());
        if hook(&rec, model, state)? == Control::Stop {
            break;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

pub fn metrics_from_outputs<T: Scalar>(out: &Tensor<T>, labels: &[usize], loss: crate::layers::Loss) -> Result<Metrics> {
    let (l, _) = loss.value_and_grad(out, labels)?;
    let pred = predictions(out);
    let k = out.len() / labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &y) in pred.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(Metrics { accuracy: hits as f64 / labels.len() as f64, loss: l.as_f64(), confusion })
}

/// Eval-mode accuracy, mean loss and confusion matrix.
pub fn evaluate<T: Scalar>(model: &mut Sequential<T>, data: &LabeledSet<T>) -> Result<Metrics> {
    check_data(model, data)?;
    let out = model.predict(&data.images, EVAL_BATCH)?;
    metrics_from_outputs(&out, &data.labels, model.spec().loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Loss;

    #[test]
    fn confusion_by_hand() {
        // rows: predicted 0, 1, 1, 2, 0
        let out = Tensor::<f64>::from_f64(&[5, 3], &[0.9, 0.1, 0.0, 0.2, 0.7, 0.1, 0.1, 0.8, 0.1, 0.0, 0.3, 0.6, 0.5, 0.5, 0.0]).unwrap();
        let labels = [0, 1, 2, 2, 1];
        let m = metrics_from_outputs(&out, &labels, Loss::SoftmaxCrossEntropy).unwrap();
        assert_eq!(m.confusion, vec![vec![1, 0, 0], vec![1, 1, 0], vec![0, 1, 1]]);
        assert!((m.accuracy - 0.6).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor_scores_one_in_k() {
        let labels: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let out = Tensor::<f64>::zeros(&[50, 10]);
        let m = metrics_from_outputs(&out, &labels, Loss::Mse).unwrap();
        assert!((m.accuracy - 0.1).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictor() {
        let labels = [2usize, 0, 1];
        let out = Tensor::from_fn(&[3, 3], |i| if i % 3 == labels[i / 3] { 1.0f64 } else { 0.0 });
        assert_eq!(metrics_from_outputs(&out, &labels, Loss::Mse).unwrap().accuracy, 1.0);
    }
}
