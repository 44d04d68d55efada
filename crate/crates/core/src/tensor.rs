//! Dense row-major tensors.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array, row-major with the last axis fastest.
///
/// `shape.iter().product() == data.len()` always holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Min,
    Max,
    Sum,
    Mean,
}

/// Result of [`Tensor::reduce`]. `indices` holds the position of the selected
/// element along the reduced axis for `Min`/`Max` (lowest index on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct Reduced<T> {
    pub values: Tensor<T>,
    pub indices: Option<Vec<usize>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!("shape {:?} needs {} elements, got {}", shape, n, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Flat offset of a multi-index. Panics when the index is out of range:
    /// indexing is a contract, not a wraparound.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank {} vs tensor rank {}", index.len(), self.shape.len());
        let mut off = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            assert!(i < n, "index {:?} out of range for shape {:?}", index, self.shape);
            off = off * n + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    pub fn add_scalar(&self, c: T) -> Self {
        self.map(|x| x + c)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.len() as f64)
    }

    /// Population variance (divides by `len`).
    pub fn variance(&self) -> T {
        let mu = self.mean();
        self.data.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>() / T::of(self.len() as f64)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max))
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("shape mismatch {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| U::of(x.as_f64())).collect() }
    }

    /// Copies sample `i` along axis 0.
    pub fn sample(&self, i: usize) -> Tensor<T> {
        let per: usize = self.shape[1..].iter().product();
        Tensor { shape: self.shape[1..].to_vec(), data: self.data[i * per..(i + 1) * per].to_vec() }
    }

    /// Gathers rows along axis 0.
    pub fn select(&self, rows: &[usize]) -> Tensor<T> {
        let per: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * per);
        for &r in rows {
            data.extend_from_slice(&self.data[r * per..(r + 1) * per]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor { shape, data }
    }

    /// Concatenates along axis 0.
    pub fn concat(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
        let mut shape = first.shape.clone();
        shape[0] = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(shape_err!("concat {:?} with {:?}", first.shape, p.shape));
            }
            shape[0] += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Reduces `axis`, dropping it from the shape.
    pub fn reduce(&self, axis: usize, op: ReduceOp) -> Result<Reduced<T>> {
        if axis >= self.ndim() {
            return Err(shape_err!("axis {} out of range for rank {}", axis, self.ndim()));
        }
        let n = self.shape[axis];
        if n == 0 {
            return Err(Error::EmptyReduction(format!("axis {} of shape {:?} is empty", axis, self.shape)));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape.remove(axis);
        let mut values = Vec::with_capacity(outer * inner);
        let mut indices = matches!(op, ReduceOp::Min | ReduceOp::Max).then(|| Vec::with_capacity(outer * inner));
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| self.data[(o * n + k) * inner + i];
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let mut s = T::zero();
                        for k in 0..n {
                            s += at(k);
                        }
                        if op == ReduceOp::Mean {
                            s /= T::of(n as f64);
                        }
                        values.push(s);
                    }
                    ReduceOp::Min | ReduceOp::Max => {
                        let mut best = at(0);
                        let mut arg = 0;
                        for k in 1..n {
                            let v = at(k);
                            let better = if op == ReduceOp::Min { v < best } else { v > best };
                            if better {
                                best = v;
                                arg = k;
                            }
                        }
                        values.push(best);
                        indices.as_mut().unwrap().push(arg);
                    }
                }
            }
        }
        Ok(Reduced { values: Tensor { shape, data: values }, indices })
    }
}

impl<T: Scalar> std::ops::Index<&[usize]> for Tensor<T> {
    type Output = T;

    fn index(&self, index: &[usize]) -> &T {
        &self.data[self.offset(index)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0, 3], vec![]).is_ok());
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_index_panics() {
        let t = Tensor::<f32>::zeros(&[2, 2]);
        t.get(&[2, 0]);
    }

    #[test]
    fn max_reports_index() {
        let t = Tensor::<f64>::from_f64(&[2], &[-0.7, 0.0]).unwrap();
        let r = t.reduce(0, ReduceOp::Max).unwrap();
        assert_eq!(r.values.data(), &[0.0]);
        assert_eq!(r.indices.unwrap(), vec![1]);
    }

    #[test]
    fn sum_of_one_two_three() {
        let t = Tensor::<f64>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.reduce(0, ReduceOp::Sum).unwrap().values.data(), &[6.0]);
        assert_eq!(t.reduce(0, ReduceOp::Mean).unwrap().values.data(), &[2.0]);
    }

    #[test]
    fn min_matches_linear_scan() {
        let mut rng = crate::rng::Rng::new(17);
        let v: Vec<f64> = (0..9).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let t = Tensor::<f64>::from_f64(&[9], &v).unwrap();
        let r = t.reduce(0, ReduceOp::Min).unwrap();
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, &x) in v.iter().enumerate() {
            if x < best.0 {
                best = (x, i);
            }
        }
        assert_eq!(r.values.data()[0], best.0);
        assert_eq!(r.indices.unwrap()[0], best.1);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let t = Tensor::<f32>::new(vec![4], vec![1.0, 3.0, 3.0, 1.0]).unwrap();
        assert_eq!(t.reduce(0, ReduceOp::Max).unwrap().indices.unwrap(), vec![1]);
        assert_eq!(t.reduce(0, ReduceOp::Min).unwrap().indices.unwrap(), vec![0]);
    }

    #[test]
    fn reduce_middle_axis() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 2], |i| i as f64);
        let r = t.reduce(1, ReduceOp::Max).unwrap();
        assert_eq!(r.values.shape(), &[2, 2]);
        assert_eq!(r.values.data(), &[4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn empty_axis_is_an_error() {
        let t = Tensor::<f32>::zeros(&[3, 0]);
        assert!(matches!(t.reduce(1, ReduceOp::Min), Err(Error::EmptyReduction(_))));
        assert!(t.reduce(2, ReduceOp::Min).is_err());
    }
}
