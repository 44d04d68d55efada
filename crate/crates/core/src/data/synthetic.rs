use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Two classes on a square grid: a solid disk (label 0) and an annulus
/// (label 1), each copied `per_class` times with i.i.d. Gaussian pixel noise.
/// Noisy pixels are not clipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub grid: usize,
    pub per_class: usize,
    pub noise_sigma: f64,
    pub disk_radius: f64,
    pub ring_outer: f64,
    pub ring_inner: f64,
    pub center: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { grid: 28, per_class: 200, noise_sigma: 0.03, disk_radius: 8.0, ring_outer: 8.0, ring_inner: 4.0, center: (14.0, 14.0) }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.grid == 0 {
            return Err(invalid!("grid must be positive"));
        }
        if !(self.ring_inner < self.ring_outer) || self.ring_inner < 0.0 || !(self.disk_radius > 0.0) {
            return Err(invalid!("need 0 <= inner radius < outer radius, got {} and {}", self.ring_inner, self.ring_outer));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid!("noise sigma must be >= 0"));
        }
        let g = self.grid as f64 - 1.0;
        let (cy, cx) = self.center;
        let r = self.disk_radius.max(self.ring_outer);
        if cy - r < 0.0 || cx - r < 0.0 || cy + r > g || cx + r > g {
            return Err(invalid!("radius {r} around {:?} leaves the {}x{} grid", self.center, self.grid, self.grid));
        }
        Ok(())
    }
}

/// Noise-free `(disk, ring)` images, `[grid, grid]` with values in {0, 1}.
pub fn base_shapes<T: Scalar>(spec: &SyntheticSpec) -> Result<(Tensor<T>, Tensor<T>)> {
    spec.validate()?;
    let g = spec.grid;
    let d2 = |i: usize| {
        let (y, x) = ((i / g) as f64 - spec.center.0, (i % g) as f64 - spec.center.1);
        y * y + x * x
    };
    let ind = |b: bool| if b { T::one() } else { T::zero() };
    let disk = Tensor::from_fn(&[g, g], |i| ind(d2(i) <= spec.disk_radius.powi(2)));
    let ring = Tensor::from_fn(&[g, g], |i| ind(d2(i) <= spec.ring_outer.powi(2) && d2(i) > spec.ring_inner.powi(2)));
    Ok((disk, ring))
}

pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec, rng: &mut Rng) -> Result<LabeledSet<T>> {
    let (disk, ring) = base_shapes::<T>(spec)?;
    let g = spec.grid;
    let mut data = Vec::with_capacity(2 * spec.per_class * g * g);
    let mut labels = Vec::with_capacity(2 * spec.per_class);
    for (label, base) in [(0, &disk), (1, &ring)] {
        for _ in 0..spec.per_class {
            data.extend(base.data().iter().map(|&v| v + T::of(spec.noise_sigma * rng.normal(0.0, 1.0))));
            labels.push(label);
        }
    }
    LabeledSet::new(Tensor::new(vec![2 * spec.per_class, 1, g, g], data)?, labels, vec!["solid_circle".into(), "annular_ring".into()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_samples_equal_the_base() {
        let spec = SyntheticSpec { noise_sigma: 0.0, per_class: 3, ..Default::default() };
        let set: LabeledSet<f64> = gen_synthetic(&spec, &mut Rng::new(1)).unwrap();
        let (disk, ring) = base_shapes::<f64>(&spec).unwrap();
        for i in 0..6 {
            let base = if i < 3 { &disk } else { &ring };
            assert_eq!(set.images.sample(i).data(), base.data());
        }
    }

    #[test]
    fn counts_and_labels() {
        let set: LabeledSet<f32> = gen_synthetic(&SyntheticSpec::default(), &mut Rng::new(2)).unwrap();
        assert_eq!(set.images.shape(), &[400, 1, 28, 28]);
        assert_eq!(set.class_counts(), vec![200, 200]);
    }

    #[test]
    fn mean_of_noisy_disks_is_the_disk() {
        let spec = SyntheticSpec::default();
        let set: LabeledSet<f64> = gen_synthetic(&spec, &mut Rng::new(3)).unwrap();
        let (disk, _) = base_shapes::<f64>(&spec).unwrap();
        let mut mean = vec![0.0; 784];
        for i in 0..200 {
            for (m, v) in mean.iter_mut().zip(set.images.sample(i).data()) {
                *m += v / 200.0;
            }
        }
        let dev = mean.iter().zip(disk.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 0.01, "max deviation {dev}");
    }

    #[test]
    fn ring_has_a_hole() {
        let (disk, ring) = base_shapes::<f64>(&SyntheticSpec::default()).unwrap();
        assert_eq!(disk.get(&[14, 14]), 1.0);
        assert_eq!(ring.get(&[14, 14]), 0.0);
        assert_eq!(ring.get(&[14, 20]), 1.0);
        assert_eq!(ring.get(&[0, 0]), 0.0);
    }

    #[test]
    fn bad_radii() {
        let spec = SyntheticSpec { ring_inner: 8.0, ..Default::default() };
        assert!(gen_synthetic::<f32>(&spec, &mut Rng::new(0)).is_err());
        let spec = SyntheticSpec { disk_radius: 20.0, ..Default::default() };
        assert!(gen_synthetic::<f32>(&spec, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn same_seed_same_bits() {
        let a: LabeledSet<f32> = gen_synthetic(&SyntheticSpec::default(), &mut Rng::new(5)).unwrap();
        let b: LabeledSet<f32> = gen_synthetic(&SyntheticSpec::default(), &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }
}
