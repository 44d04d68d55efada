#![allow(dead_code)]

pub mod props;

use morphnet::layers::{ForwardCtx, Layer, Mode, Tape};
use morphnet::{Rng, Tensor};

pub fn set_param(layer: &mut dyn Layer<f64>, index: usize, values: &[f64]) {
    let mut params = layer.params_mut();
    let t = &mut params[index].1;
    assert_eq!(t.len(), values.len(), "parameter {index} size");
    t.data_mut().copy_from_slice(values);
}

pub fn forward(layer: &mut dyn Layer<f64>, x: &Tensor<f64>) -> (Tensor<f64>, Tape<f64>) {
    let mut rng = Rng::new(0);
    layer.forward(x, &mut ForwardCtx::new(Mode::Train, &mut rng)).unwrap()
}

pub fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal(0.0, 1.0))
}

pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Direct nested-loop correlation of `[n, c, h, w]` with `[o, c, k, k]`, zero padding `pad`.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let (oh, ow) = (h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    for s in 0..n {
        for f in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for a in 0..k {
                            for b in 0..k {
                                let (y, z) = ((i + a) as isize - pad as isize, (j + b) as isize - pad as isize);
                                if y >= 0 && z >= 0 && (y as usize) < h && (z as usize) < wd {
                                    acc += x.get(&[s, ch, y as usize, z as usize]) * w.get(&[f, ch, a, b]);
                                }
                            }
                        }
                    }
                    out.set(&[s, f, i, j], acc);
                }
            }
        }
    }
    out
}

pub const EX_A: [f64; 16] = [0.0, 0.0, 0.3, 0.3, 0.0, 0.7, 0.7, 0.3, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0, 0.0];
pub const EX_B: [f64; 16] = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
pub const EX_H: [f64; 9] = [0.0, 0.0, 0.0, 0.7, 0.7, 0.0, 0.0, 0.7, 0.0];
pub const EX_M: [f64; 9] = [0.0, 0.7, 0.7, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0];

pub fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "index {i}: got {g}, want {w}\n got {got:?}\nwant {want:?}");
    }
}
