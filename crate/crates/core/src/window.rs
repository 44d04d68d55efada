//! Sliding-window geometry shared by every spatial layer.
//!
//! Patches are laid out "im2col" style: for one sample, `cols[cell * P + pos]`
//! where `cell` runs over `(channel, ki, kj)` of the window and `pos` over the
//! `oh * ow` output positions.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    None,
    Zero(usize),
    Replicate(usize),
}

impl Padding {
    pub fn amount(self) -> usize {
        match self {
            Padding::None => 0,
            Padding::Zero(k) | Padding::Replicate(k) => k,
        }
    }
}

/// Geometry of a 2-D window sliding over a `channels x height x width` sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window2d {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub padding: Padding,
}

impl Window2d {
    pub fn new(channels: usize, height: usize, width: usize, kernel: (usize, usize), stride: (usize, usize), padding: Padding) -> Result<Self> {
        let w = Window2d { channels, height, width, kh: kernel.0, kw: kernel.1, sh: stride.0, sw: stride.1, padding };
        if w.kh == 0 || w.kw == 0 || w.sh == 0 || w.sw == 0 {
            return Err(shape_err!("window {:?} and stride {:?} must be positive", kernel, stride));
        }
        let p = padding.amount();
        if w.kh > height + 2 * p || w.kw > width + 2 * p {
            return Err(shape_err!(
                "window {}x{} larger than padded input {}x{}",
                w.kh,
                w.kw,
                height + 2 * p,
                width + 2 * p
            ));
        }
        Ok(w)
    }

    #[inline]
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding.amount() - self.kh) / self.sh + 1
    }

    #[inline]
    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding.amount() - self.kw) / self.sw + 1
    }

    /// Output positions per sample.
    #[inline]
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Cells per window across all channels.
    #[inline]
    pub fn cells(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Source (row, col) in unpadded coordinates for a window cell at an
    /// output position, or `None` if it falls in the padding.
    #[inline]
    fn source(&self, ki: usize, kj: usize, oy: usize, ox: usize) -> (isize, isize) {
        let p = self.padding.amount() as isize;
        ((oy * self.sh + ki) as isize - p, (ox * self.sw + kj) as isize - p)
    }

    /// Flat sample offset read by `(cell, pos)`, `None` inside zero padding.
    /// Replicate padding maps to the clamped edge pixel.
    #[inline]
    pub fn input_index(&self, cell: usize, pos: usize) -> Option<usize> {
        let c = cell / (self.kh * self.kw);
        let r = cell % (self.kh * self.kw);
        let (ki, kj) = (r / self.kw, r % self.kw);
        let ow = self.out_w();
        let (y, x) = self.source(ki, kj, pos / ow, pos % ow);
        let (h, w) = (self.height as isize, self.width as isize);
        let (y, x) = match self.padding {
            Padding::Replicate(_) => (y.clamp(0, h - 1), x.clamp(0, w - 1)),
            _ if y < 0 || x < 0 || y >= h || x >= w => return None,
            _ => (y, x),
        };
        Some(c * self.height * self.width + y as usize * self.width + x as usize)
    }

    /// Fills `cols` (`cells * positions`) from one sample.
    pub fn im2col<T: Scalar>(&self, sample: &[T], cols: &mut [T]) {
        debug_assert_eq!(sample.len(), self.sample_len());
        let (oh, ow) = (self.out_h(), self.out_w());
        let p = oh * ow;
        debug_assert_eq!(cols.len(), self.cells() * p);
        let pad = self.padding.amount();
        let fast = matches!(self.padding, Padding::None | Padding::Zero(_));
        for c in 0..self.channels {
            let plane = &sample[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let cell = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[cell * p..(cell + 1) * p];
                    if !fast {
                        for (pos, d) in dst.iter_mut().enumerate() {
                            *d = self.input_index(cell, pos).map_or(T::zero(), |i| sample[i]);
                        }
                        continue;
                    }
                    for oy in 0..oh {
                        let y = (oy * self.sh + ki) as isize - pad as isize;
                        let row = &mut dst[oy * ow..(oy + 1) * ow];
                        if y < 0 || y >= self.height as isize {
                            row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[y as usize * self.width..(y as usize + 1) * self.width];
                        if self.sw == 1 && pad == 0 {
                            row.copy_from_slice(&src[kj..kj + ow]);
                        } else {
                            for (ox, d) in row.iter_mut().enumerate() {
                                let x = (ox * self.sw + kj) as isize - pad as isize;
                                *d = if x < 0 || x >= self.width as isize { T::zero() } else { src[x as usize] };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a `cells * positions` gradient back onto one sample.
    pub fn col2im_add<T: Scalar>(&self, dcols: &[T], dsample: &mut [T]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let p = oh * ow;
        if matches!(self.padding, Padding::Replicate(_)) {
            for cell in 0..self.cells() {
                for pos in 0..p {
                    if let Some(i) = self.input_index(cell, pos) {
                        dsample[i] += dcols[cell * p + pos];
                    }
                }
            }
            return;
        }
        let pad = self.padding.amount() as isize;
        let hw = self.height * self.width;
        for c in 0..self.channels {
            let plane = &mut dsample[c * hw..(c + 1) * hw];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let cell = (c * self.kh + ki) * self.kw + kj;
                    let src = &dcols[cell * p..(cell + 1) * p];
                    for oy in 0..oh {
                        let y = (oy * self.sh + ki) as isize - pad;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.width..(y as usize + 1) * self.width];
                        let row = &src[oy * ow..(oy + 1) * ow];
                        if self.sw == 1 && pad == 0 {
                            for (d, &g) in dst[kj..kj + ow].iter_mut().zip(row) {
                                *d += g;
                            }
                        } else {
                            for (ox, &g) in row.iter().enumerate() {
                                let x = (ox * self.sw + kj) as isize - pad;
                                if x >= 0 && x < self.width as isize {
                                    dst[x as usize] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Splits a tensor of rank >= 2 into its leading extent and trailing (h, w).
fn spatial_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(shape_err!("window_view needs rank >= 2, got {:?}", shape));
    }
    let n = shape.len();
    Ok((shape[..n - 2].iter().product(), shape[n - 2], shape[n - 1]))
}

/// Extracts sliding windows over the last two axes.
///
/// The result has shape `[lead.., oh, ow, kh * kw]`, so every aggregation can
/// reduce over the final axis.
pub fn window_view<T: Scalar>(t: &Tensor<T>, window: (usize, usize), stride: (usize, usize), padding: Padding) -> Result<Tensor<T>> {
    let (lead, h, w) = spatial_dims(t.shape())?;
    let geom = Window2d::new(1, h, w, window, stride, padding)?;
    let (oh, ow, k) = (geom.out_h(), geom.out_w(), geom.cells());
    let p = oh * ow;
    let mut cols = vec![T::zero(); k * p];
    let mut out = Vec::with_capacity(lead * p * k);
    for plane in t.data().chunks(h * w).take(lead) {
        geom.im2col(plane, &mut cols);
        for pos in 0..p {
            out.extend((0..k).map(|cell| cols[cell * p + pos]));
        }
    }
    let mut shape = t.shape()[..t.ndim() - 2].to_vec();
    shape.extend([oh, ow, k]);
    Tensor::new(shape, out)
}
