use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over all entries of `(pred − onehot(label))²`.
    Mse,
    /// Batch mean of `−log softmax(pred)[label]`.
    SoftmaxCrossEntropy,
}

impl Loss {
    /// Loss value and its gradient with respect to `pred`. `pred` is
    /// `[n, ...]`; the trailing extents are treated as the class axis.
    pub fn value_and_grad<T: Scalar>(&self, pred: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
        let n = *pred.shape().first().ok_or_else(|| shape_err!("loss needs a batch axis"))?;
        if n != labels.len() || n == 0 {
            return Err(shape_err!("{} predictions for {} labels", n, labels.len()));
        }
        let k = pred.len() / n;
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(invalid!("label {bad} out of range for {k} outputs"));
        }
        let p = pred.data();
        let mut grad = vec![T::zero(); p.len()];
        let mut total = 0.0f64;
        match self {
            Loss::Mse => {
                let denom = T::of((n * k) as f64);
                for (i, &y) in labels.iter().enumerate() {
                    for j in 0..k {
                        let t = if j == y { T::one() } else { T::zero() };
                        let d = p[i * k + j] - t;
                        total += (d * d).as_f64();
                        grad[i * k + j] = (d + d) / denom;
                    }
                }
                total /= (n * k) as f64;
            }
            Loss::SoftmaxCrossEntropy => {
                let inv_n = T::of(1.0 / n as f64);
                for (i, &y) in labels.iter().enumerate() {
                    let row = &p[i * k..(i + 1) * k];
                    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let z: T = row.iter().map(|&v| (v - m).exp()).sum();
                    let lz = z.ln();
                    total -= (row[y] - m - lz).as_f64();
                    for j in 0..k {
                        let s = (row[j] - m - lz).exp();
                        let t = if j == y { T::one() } else { T::zero() };
                        grad[i * k + j] = (s - t) * inv_n;
                    }
                }
                total /= n as f64;
            }
        }
        Ok((T::of(total), Tensor::new(pred.shape().to_vec(), grad)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_exact_prediction_is_zero() {
        let p = Tensor::<f64>::from_f64(&[1, 1], &[1.0]).unwrap();
        assert_eq!(Loss::Mse.value_and_grad(&p, &[0]).unwrap().0, 0.0);
    }

    #[test]
    fn uniform_logits_cost_ln10() {
        let p = Tensor::<f64>::zeros(&[3, 10]);
        let (l, _) = Loss::SoftmaxCrossEntropy.value_and_grad(&p, &[0, 4, 9]).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_labels() {
        let p = Tensor::<f64>::zeros(&[2, 3]);
        assert!(Loss::Mse.value_and_grad(&p, &[0]).is_err());
        assert!(Loss::Mse.value_and_grad(&p, &[0, 3]).is_err());
    }
}
