//! Classical, forward-only morphology.
//!
//! These routines are the ground truth the differentiable layers are checked
//! against, and the engine behind `morphnet morph`. Outputs cover only the
//! positions where the whole structuring element fits inside the image; the
//! [`Valid`] wrapper remembers where that region sits in the full frame.

mod binary;
mod gray;
pub mod se_text;

pub use binary::{binary_dilate, binary_erode, binary_hit_or_miss, binary_hit_or_miss_unchecked, BinaryImage, BinarySe, BinarySePair};
pub use gray::{dnc_bound, gray_dilate, gray_erode, gray_hit_or_miss, GraySe};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A result computed on a sub-rectangle of a `full` frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Valid<V> {
    pub values: V,
    /// Row and column of `values[0][0]` in the full frame.
    pub offset: (usize, usize),
    pub full: (usize, usize),
}

impl<V> Valid<V> {
    fn in_region(&self, r: usize, c: usize, dims: (usize, usize)) -> Option<(usize, usize)> {
        let (r0, c0) = self.offset;
        (r >= r0 && c >= c0 && r - r0 < dims.0 && c - c0 < dims.1).then(|| (r - r0, c - c0))
    }
}

impl<T: Scalar> Valid<Tensor<T>> {
    /// Renders the full frame with `*` in uncomputed border cells.
    pub fn to_ascii(&self, decimals: usize) -> String {
        let dims = (self.values.shape()[0], self.values.shape()[1]);
        let cells: Vec<Vec<String>> = (0..self.full.0)
            .map(|r| {
                (0..self.full.1)
                    .map(|c| match self.in_region(r, c, dims) {
                        Some((i, j)) => format!("{:.*}", decimals, clean_zero(self.values.get(&[i, j]).as_f64())),
                        None => "*".to_string(),
                    })
                    .collect()
            })
            .collect();
        render_rows(&cells)
    }
}

impl Valid<BinaryImage> {
    pub fn to_ascii(&self) -> String {
        let dims = (self.values.rows(), self.values.cols());
        let cells: Vec<Vec<String>> = (0..self.full.0)
            .map(|r| {
                (0..self.full.1)
                    .map(|c| match self.in_region(r, c, dims) {
                        Some((i, j)) => self.values.get(i, j).to_string(),
                        None => "*".to_string(),
                    })
                    .collect()
            })
            .collect();
        render_rows(&cells)
    }
}

fn clean_zero(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

fn render_rows(cells: &[Vec<String>]) -> String {
    let width = cells.iter().flatten().map(|s| s.len()).max().unwrap_or(1);
    let mut out = String::new();
    for row in cells {
        let line: Vec<String> = row.iter().map(|s| format!("{s:>width$}")).collect();
        out.push_str(line.join(" ").trim_end());
        out.push('\n');
    }
    out
}
