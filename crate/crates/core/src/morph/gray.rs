use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Valid;

/// Grayscale structuring element. Cells flagged in `dnc` are "don't care" and
/// never take part in a reduction; their stored weight is irrelevant.
#[derive(Clone, Debug, PartialEq)]
pub struct GraySe<T> {
    weights: Tensor<T>,
    dnc: Vec<bool>,
    origin: (usize, usize),
}

impl<T: Scalar> GraySe<T> {
    pub fn new(weights: Tensor<T>, dnc: Vec<bool>, origin: (usize, usize)) -> Result<Self> {
        if weights.ndim() != 2 || weights.is_empty() {
            return Err(shape_err!("structuring element must be a non-empty 2-D grid, got {:?}", weights.shape()));
        }
        if dnc.len() != weights.len() {
            return Err(shape_err!("dnc mask has {} cells, weights {}", dnc.len(), weights.len()));
        }
        let (r, c) = (weights.shape()[0], weights.shape()[1]);
        if origin.0 >= r || origin.1 >= c {
            return Err(shape_err!("origin {:?} outside {}x{} element", origin, r, c));
        }
        Ok(GraySe { weights, dnc, origin })
    }

    /// Rows of optional weights; `None` marks a don't-care cell.
    pub fn from_rows(rows: &[&[Option<f64>]], origin: (usize, usize)) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        let flat: Vec<Option<f64>> = rows.concat();
        let weights = Tensor::new(vec![rows.len(), cols], flat.iter().map(|w| T::of(w.unwrap_or(0.0))).collect())?;
        Self::new(weights, flat.iter().map(Option::is_none).collect(), origin)
    }

    /// Element with no don't-care cells.
    pub fn dense(weights: Tensor<T>, origin: (usize, usize)) -> Result<Self> {
        let n = weights.len();
        Self::new(weights, vec![false; n], origin)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.weights.shape()[0], self.weights.shape()[1])
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn dnc(&self) -> &[bool] {
        &self.dnc
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    /// `b^r(x, y) = b(-x, -y)`.
    pub fn reflect(&self) -> Self {
        let (r, c) = self.dims();
        let mut w = self.weights.data().to_vec();
        w.reverse();
        let mut dnc = self.dnc.clone();
        dnc.reverse();
        GraySe {
            weights: Tensor::new(vec![r, c], w).expect("same extents"),
            dnc,
            origin: (r - 1 - self.origin.0, c - 1 - self.origin.1),
        }
    }

    /// Active cells as (row offset, col offset, weight) relative to the origin.
    fn active(&self) -> Result<Vec<(isize, isize, T)>> {
        let (r, c) = self.dims();
        let cells: Vec<_> = (0..r * c)
            .filter(|&i| !self.dnc[i])
            .map(|i| ((i / c) as isize - self.origin.0 as isize, (i % c) as isize - self.origin.1 as isize, self.weights.data()[i]))
            .collect();
        if cells.is_empty() {
            return Err(Error::AllDnc(format!("{r}x{c} element is entirely don't-care")));
        }
        Ok(cells)
    }
}

fn image_dims<T: Scalar>(f: &Tensor<T>, se: &GraySe<T>) -> Result<(usize, usize, usize, usize)> {
    if f.ndim() != 2 {
        return Err(shape_err!("expected a 2-D image, got {:?}", f.shape()));
    }
    let (h, w) = (f.shape()[0], f.shape()[1]);
    let (sr, sc) = se.dims();
    if sr > h || sc > w {
        return Err(shape_err!("{}x{} element does not fit {}x{} image", sr, sc, h, w));
    }
    Ok((h, w, h - sr + 1, w - sc + 1))
}

/// `(f ⊖ b)(x, y) = min { f(x + a, y + c) - b(a, c) }` over non-DNC cells.
pub fn gray_erode<T: Scalar>(f: &Tensor<T>, se: &GraySe<T>) -> Result<Valid<Tensor<T>>> {
    let (h, w, oh, ow) = image_dims(f, se)?;
    let cells = se.active()?;
    let (or, oc) = se.origin();
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let (x, y) = ((i + or) as isize, (j + oc) as isize);
            let v = cells
                .iter()
                .map(|&(dr, dc, b)| f.data()[(x + dr) as usize * w + (y + dc) as usize] - b)
                .fold(T::infinity(), T::min);
            out.push(v);
        }
    }
    Ok(Valid { values: Tensor::new(vec![oh, ow], out)?, offset: (or, oc), full: (h, w) })
}

/// `(f ⊕ b)(x, y) = max { f(x - a, y - c) + b(a, c) }` over non-DNC cells.
pub fn gray_dilate<T: Scalar>(f: &Tensor<T>, se: &GraySe<T>) -> Result<Valid<Tensor<T>>> {
    let (h, w, oh, ow) = image_dims(f, se)?;
    let cells = se.active()?;
    let (sr, sc) = se.dims();
    let (r0, c0) = (sr - 1 - se.origin().0, sc - 1 - se.origin().1);
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let (x, y) = ((i + r0) as isize, (j + c0) as isize);
            let v = cells
                .iter()
                .map(|&(dr, dc, b)| f.data()[(x - dr) as usize * w + (y - dc) as usize] + b)
                .fold(T::neg_infinity(), T::max);
            out.push(v);
        }
    }
    Ok(Valid { values: Tensor::new(vec![oh, ow], out)?, offset: (r0, c0), full: (h, w) })
}

/// `f ⊙ (h, m) = (f ⊖ h) − (f ⊕ mʳ)`.
pub fn gray_hit_or_miss<T: Scalar>(f: &Tensor<T>, hit: &GraySe<T>, miss: &GraySe<T>) -> Result<Valid<Tensor<T>>> {
    if hit.dims() != miss.dims() || hit.origin() != miss.origin() {
        return Err(shape_err!(
            "hit {:?}@{:?} and miss {:?}@{:?} must share extents and origin",
            hit.dims(),
            hit.origin(),
            miss.dims(),
            miss.origin()
        ));
    }
    let e = gray_erode(f, hit)?;
    let d = gray_dilate(f, &miss.reflect())?;
    debug_assert_eq!(e.offset, d.offset);
    Ok(Valid { values: e.values.sub(&d.values)?, ..e })
}

/// Largest weight an erosion element may hold and still behave as don't-care
/// for images in `[lb_image, ub_image]` whose foreground weights are at least
/// `lb_foreground`: `lb_I − ub_I + lb_hf`.
pub fn dnc_bound(lb_image: f64, ub_image: f64, lb_foreground: f64) -> Result<f64> {
    if !(ub_image > lb_image) {
        return Err(invalid!("degenerate image range [{lb_image}, {ub_image}]"));
    }
    Ok(lb_image - ub_image + lb_foreground)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    const D: Option<f64> = None;

    fn img(rows: &[[f64; 4]; 4]) -> Tensor<f64> {
        Tensor::from_f64(&[4, 4], &rows.concat()).unwrap()
    }

    fn gray_example_image_a() -> Tensor<f64> {
        img(&[[0.0, 0.0, 0.3, 0.3], [0.0, 0.7, 0.7, 0.3], [0.0, 0.0, 0.7, 0.0], [0.0, 0.0, 0.0, 0.0]])
    }

    fn assert_grid(v: &Valid<Tensor<f64>>, want: [[f64; 2]; 2]) {
        for (i, row) in want.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                let got = v.values.get(&[i, j]);
                assert!((got - x).abs() < 1e-9, "({i},{j}) got {got} want {x}");
            }
        }
    }

    fn random_image(rng: &mut Rng, n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n, n], |_| rng.uniform(0.0, 1.0))
    }

    fn random_se(rng: &mut Rng) -> GraySe<f64> {
        loop {
            let w = Tensor::from_fn(&[3, 3], |_| rng.uniform(-1.0, 1.0));
            let dnc: Vec<bool> = (0..9).map(|_| rng.bernoulli(0.3)).collect();
            if dnc.iter().any(|d| !d) {
                return GraySe::new(w, dnc, (rng.below(3), rng.below(3))).unwrap();
            }
        }
    }

    #[test]
    fn gray_example_column1_erosion() {
        let h = GraySe::from_rows(&[&[Some(0.0), Some(0.0), Some(0.0)], &[Some(0.7), Some(0.7), Some(0.0)], &[Some(0.0), Some(0.7), Some(0.0)]], (1, 1)).unwrap();
        assert_grid(&gray_erode(&gray_example_image_a(), &h).unwrap(), [[-0.7, 0.0], [-0.7, -0.7]]);
    }

    #[test]
    fn dnc_mask_matches_column2() {
        let h = GraySe::from_rows(&[&[D, D, D], &[Some(0.7), Some(0.7), D], &[D, Some(0.7), D]], (1, 1)).unwrap();
        assert_grid(&gray_erode(&gray_example_image_a(), &h).unwrap(), [[-0.7, 0.0], [-0.7, -0.7]]);
    }

    #[test]
    fn single_zero_cell_erosion_is_identity() {
        let mut rng = Rng::new(1);
        let f = random_image(&mut rng, 5);
        let se = GraySe::from_rows(&[&[Some(0.0)]], (0, 0)).unwrap();
        assert_eq!(gray_erode(&f, &se).unwrap().values, f);
    }

    #[test]
    fn dilating_constant_by_zero_origin_is_constant() {
        let f = Tensor::<f64>::full(&[5, 5], 0.42);
        let se = GraySe::from_rows(&[&[D, D, D], &[D, Some(0.0), D], &[D, D, D]], (1, 1)).unwrap();
        let d = gray_dilate(&f, &se).unwrap();
        assert!(d.values.data().iter().all(|&v| v == 0.42));
    }

    #[test]
    fn all_dnc_is_an_error() {
        let se = GraySe::<f64>::from_rows(&[&[D, D], &[D, D]], (0, 0)).unwrap();
        let f = Tensor::zeros(&[3, 3]);
        assert!(matches!(gray_erode(&f, &se), Err(Error::AllDnc(_))));
        assert!(matches!(gray_dilate(&f, &se), Err(Error::AllDnc(_))));
    }

    #[test]
    fn erosion_matches_nested_loop_min() {
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let f = random_image(&mut rng, 6);
            let se = random_se(&mut rng);
            let got = gray_erode(&f, &se).unwrap();
            let (or, oc) = se.origin();
            for x in or..4 + or {
                for y in oc..4 + oc {
                    let mut best = f64::INFINITY;
                    for a in 0..3 {
                        for b in 0..3 {
                            if !se.dnc()[a * 3 + b] {
                                let v = f.get(&[x + a - or, y + b - oc]) - se.weights().get(&[a, b]);
                                best = best.min(v);
                            }
                        }
                    }
                    assert_eq!(got.values.get(&[x - or, y - oc]), best);
                }
            }
        }
    }

    #[test]
    fn dilation_is_negated_erosion_of_negation() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let f = random_image(&mut rng, 6);
            let se = random_se(&mut rng);
            let d = gray_dilate(&f, &se).unwrap();
            let e = gray_erode(&f.scale(-1.0), &se.reflect()).unwrap();
            assert_eq!(d.offset, e.offset);
            assert!(d.values.max_abs_diff(&e.values.scale(-1.0)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn dnc_bound_instance() {
        assert!((dnc_bound(0.0, 1.0, 0.7).unwrap() + 0.3).abs() < 1e-12);
        assert!(dnc_bound(0.5, 0.5, 0.1).is_err());
    }

    #[test]
    fn weights_below_dnc_bound_never_win() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let f = random_image(&mut rng, 6);
            let lb = rng.uniform(0.0, 0.5);
            let mut w = Tensor::from_fn(&[3, 3], |_| rng.uniform(lb, 1.0));
            let cell = [rng.below(3), rng.below(3)];
            let bound = dnc_bound(0.0, 1.0, lb).unwrap();
            w.set(&cell, bound - rng.uniform(0.0, 1.0));
            let se = GraySe::dense(w.clone(), (1, 1)).unwrap();
            let before = gray_erode(&f, &se).unwrap();
            let mut w2 = w;
            w2.set(&cell, w2.get(&cell) - 1.0);
            let after = gray_erode(&f, &GraySe::dense(w2, (1, 1)).unwrap()).unwrap();
            assert_eq!(before, after);
        }
    }
}
