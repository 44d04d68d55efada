//! Labeled image sets: the synthetic disk/ring task and IDX files.

mod idx;
mod synthetic;

pub use idx::{decode_idx_images, decode_idx_labels, load_idx, write_idx, IdxPixels};
pub use synthetic::{base_shapes, gen_synthetic, SyntheticSpec};

use crate::error::{shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FASHION_CLASSES: [&str; 10] =
    ["t-shirt/top", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag", "ankle boot"];

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet<T> {
    /// `[n, channels, height, width]`
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.ndim() != 4 {
            return Err(shape_err!("images must be [n, c, h, w], got {:?}", images.shape()));
        }
        if images.shape()[0] != labels.len() {
            return Err(crate::error::Error::CountMismatch { images: images.shape()[0], labels: labels.len() });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(shape_err!("label {l} but only {} classes", class_names.len()));
        }
        Ok(LabeledSet { images, labels, class_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `[channels, height, width]` of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        LabeledSet {
            images: self.images.select(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Population variance of all pixels.
    pub fn pixel_variance(&self) -> f64 {
        self.images.variance().as_f64()
    }

    pub fn cast<U: Scalar>(&self) -> LabeledSet<U> {
        LabeledSet { images: self.images.cast(), labels: self.labels.clone(), class_names: self.class_names.clone() }
    }
}

/// Class-balanced random subset: up to `per_class` samples of each class,
/// returned in their original order.
pub fn subset<T: Scalar>(set: &LabeledSet<T>, per_class: usize, rng: &mut Rng) -> LabeledSet<T> {
    let mut keep = Vec::new();
    for class in 0..set.num_classes() {
        let mut idx: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == class).collect();
        rng.shuffle(&mut idx);
        idx.truncate(per_class);
        keep.extend(idx);
    }
    keep.sort_unstable();
    set.select(&keep)
}
