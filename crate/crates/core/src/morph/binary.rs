use crate::error::{invalid, shape_err, Error, Result};

use super::Valid;

/// A 2-D image of 0/1 values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!("{}x{} image needs {} cells, got {}", rows, cols, rows * cols, data.len()));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(invalid!("binary image holds value {}", v));
        }
        Ok(BinaryImage { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        BinaryImage { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        assert!(r < self.rows && c < self.cols, "({r}, {c}) outside {}x{}", self.rows, self.cols);
        self.data[r * self.cols + c]
    }

    pub fn complement(&self) -> Self {
        BinaryImage { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| 1 - v).collect() }
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.data.chunks(self.cols.max(1)).map(|r| r.to_vec()).collect()
    }
}

/// A binary structuring element with an origin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarySe {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
    origin: (usize, usize),
}

impl BinarySe {
    pub fn new(rows: usize, cols: usize, cells: Vec<bool>, origin: (usize, usize)) -> Result<Self> {
        if rows == 0 || cols == 0 || cells.len() != rows * cols {
            return Err(shape_err!("{}x{} structuring element with {} cells", rows, cols, cells.len()));
        }
        if origin.0 >= rows || origin.1 >= cols {
            return Err(shape_err!("origin {:?} outside {}x{} element", origin, rows, cols));
        }
        Ok(BinarySe { rows, cols, cells, origin })
    }

    pub fn from_rows(rows: &[&[u8]], origin: (usize, usize)) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat().into_iter().map(|v| v != 0).collect(), origin)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    #[inline]
    pub fn is_set(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    /// Reflection about the origin.
    pub fn reflect(&self) -> Self {
        let mut cells = self.cells.clone();
        cells.reverse();
        BinarySe { rows: self.rows, cols: self.cols, cells, origin: (self.rows - 1 - self.origin.0, self.cols - 1 - self.origin.1) }
    }

    fn set_offsets(&self) -> impl Iterator<Item = (isize, isize)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (0..self.cols)
                .filter(move |&c| self.is_set(r, c))
                .map(move |c| (r as isize - self.origin.0 as isize, c as isize - self.origin.1 as isize))
        })
    }
}

/// Hit and miss elements satisfying `H ∩ M = ∅`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarySePair {
    hit: BinarySe,
    miss: BinarySe,
}

impl BinarySePair {
    /// Rejects pairs where some cell is set in both elements.
    pub fn new(hit: BinarySe, miss: BinarySe) -> Result<Self> {
        let pair = Self::new_unchecked(hit, miss)?;
        let cells = pair.intersection();
        if !cells.is_empty() {
            return Err(Error::IntersectingSe { cells });
        }
        Ok(pair)
    }

    /// Accepts intersecting pairs. Only shapes and origins are checked.
    pub fn new_unchecked(hit: BinarySe, miss: BinarySe) -> Result<Self> {
        if hit.dims() != miss.dims() || hit.origin != miss.origin {
            return Err(shape_err!(
                "hit {:?}@{:?} and miss {:?}@{:?} must share extents and origin",
                hit.dims(),
                hit.origin,
                miss.dims(),
                miss.origin
            ));
        }
        Ok(BinarySePair { hit, miss })
    }

    /// Cells set in both elements, as (row, col).
    pub fn intersection(&self) -> Vec<(usize, usize)> {
        let (rows, cols) = self.hit.dims();
        (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.hit.is_set(r, c) && self.miss.is_set(r, c))
            .collect()
    }

    pub fn hit(&self) -> &BinarySe {
        &self.hit
    }

    pub fn miss(&self) -> &BinarySe {
        &self.miss
    }
}

fn check_fits(a: &BinaryImage, se: &BinarySe) -> Result<(usize, usize)> {
    let (sr, sc) = se.dims();
    if sr > a.rows || sc > a.cols {
        return Err(shape_err!("{}x{} element does not fit {}x{} image", sr, sc, a.rows, a.cols));
    }
    Ok((a.rows - sr + 1, a.cols - sc + 1))
}

/// `A ⊖ B`: 1 where every set cell of `B`, translated to that point, lies on a 1.
pub fn binary_erode(a: &BinaryImage, se: &BinarySe) -> Result<Valid<BinaryImage>> {
    let (oh, ow) = check_fits(a, se)?;
    let (or, oc) = se.origin();
    let offsets: Vec<_> = se.set_offsets().collect();
    let mut data = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let (z0, z1) = ((i + or) as isize, (j + oc) as isize);
            let fits = offsets.iter().all(|&(dr, dc)| a.get((z0 + dr) as usize, (z1 + dc) as usize) == 1);
            data.push(fits as u8);
        }
    }
    Ok(Valid { values: BinaryImage { rows: oh, cols: ow, data }, offset: (or, oc), full: (a.rows, a.cols) })
}

/// `A ⊕ B`: 1 where the reflected, translated `B` overlaps `A`.
pub fn binary_dilate(a: &BinaryImage, se: &BinarySe) -> Result<Valid<BinaryImage>> {
    let (oh, ow) = check_fits(a, se)?;
    let (sr, sc) = se.dims();
    let (or, oc) = se.origin();
    let (r0, c0) = (sr - 1 - or, sc - 1 - oc);
    let offsets: Vec<_> = se.set_offsets().collect();
    let mut data = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let (z0, z1) = ((i + r0) as isize, (j + c0) as isize);
            let hit = offsets.iter().any(|&(dr, dc)| a.get((z0 - dr) as usize, (z1 - dc) as usize) == 1);
            data.push(hit as u8);
        }
    }
    Ok(Valid { values: BinaryImage { rows: oh, cols: ow, data }, offset: (r0, c0), full: (a.rows, a.cols) })
}

/// `(A ⊖ H) ∩ (Aᶜ ⊖ M)` for a validated pair.
pub fn binary_hit_or_miss(a: &BinaryImage, pair: &BinarySePair) -> Result<Valid<BinaryImage>> {
    let fg = binary_erode(a, &pair.hit)?;
    let bg = binary_erode(&a.complement(), &pair.miss)?;
    let data = fg.values.data.iter().zip(&bg.values.data).map(|(&x, &y)| x & y).collect();
    Ok(Valid { values: BinaryImage { rows: fg.values.rows, cols: fg.values.cols, data }, ..fg })
}

/// Same formula, with the disjointness check skipped. An intersecting pair can
/// never match anything, so the result is all zero.
pub fn binary_hit_or_miss_unchecked(a: &BinaryImage, hit: &BinarySe, miss: &BinarySe) -> Result<Valid<BinaryImage>> {
    binary_hit_or_miss(a, &BinarySePair::new_unchecked(hit.clone(), miss.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn binary_example_image() -> BinaryImage {
        BinaryImage::from_rows(&[&[0, 0, 0, 0], &[0, 1, 1, 0], &[0, 0, 1, 0], &[0, 0, 0, 0]]).unwrap()
    }

    fn binary_example_hit() -> BinarySe {
        BinarySe::from_rows(&[&[0, 0, 0], &[1, 1, 0], &[0, 1, 0]], (1, 1)).unwrap()
    }

    fn binary_example_miss() -> BinarySe {
        BinarySe::from_rows(&[&[0, 1, 1], &[0, 0, 1], &[0, 0, 0]], (1, 1)).unwrap()
    }

    fn random_image(rng: &mut Rng, r: usize, c: usize) -> BinaryImage {
        BinaryImage::new(r, c, (0..r * c).map(|_| rng.bernoulli(0.5) as u8).collect()).unwrap()
    }

    fn random_se(rng: &mut Rng) -> BinarySe {
        let cells = (0..9).map(|_| rng.bernoulli(0.4)).collect();
        BinarySe::new(3, 3, cells, (rng.below(3), rng.below(3))).unwrap()
    }

    #[test]
    fn binary_example_erosion_and_hit_or_miss() {
        let a = binary_example_image();
        assert_eq!(binary_erode(&a, &binary_example_hit()).unwrap().values.to_rows(), vec![vec![0, 1], vec![0, 0]]);
        let pair = BinarySePair::new(binary_example_hit(), binary_example_miss()).unwrap();
        assert_eq!(binary_hit_or_miss(&a, &pair).unwrap().values.to_rows(), vec![vec![0, 1], vec![0, 0]]);
    }

    #[test]
    fn binary_example_dilation_row_is_dilation_by_reflected_miss() {
        let d = binary_dilate(&binary_example_image(), &binary_example_miss().reflect()).unwrap();
        assert_eq!(d.values.to_rows(), vec![vec![1, 0], vec![1, 1]]);
        assert_eq!(d.offset, (1, 1));
    }

    #[test]
    fn binary_example_intersecting_pair_rejected_or_empty() {
        let miss = BinarySe::from_rows(&[&[0, 1, 1], &[0, 1, 1], &[0, 0, 0]], (1, 1)).unwrap();
        match BinarySePair::new(binary_example_hit(), miss.clone()) {
            Err(Error::IntersectingSe { cells }) => assert_eq!(cells, vec![(1, 1)]),
            other => panic!("expected rejection, got {other:?}"),
        }
        let forced = binary_hit_or_miss_unchecked(&binary_example_image(), &binary_example_hit(), &miss).unwrap();
        assert_eq!(forced.values.to_rows(), vec![vec![0, 0], vec![0, 0]]);
        assert_eq!(binary_dilate(&binary_example_image(), &miss.reflect()).unwrap().values.to_rows(), vec![vec![1, 1], vec![1, 1]]);
    }

    #[test]
    fn single_cell_erosion_is_identity() {
        let mut rng = Rng::new(8);
        let a = random_image(&mut rng, 5, 6);
        let se = BinarySe::from_rows(&[&[1]], (0, 0)).unwrap();
        assert_eq!(binary_erode(&a, &se).unwrap().values, a);
    }

    #[test]
    fn dilating_zeros_gives_zeros() {
        let mut rng = Rng::new(9);
        let se = random_se(&mut rng);
        let d = binary_dilate(&BinaryImage::zeros(5, 5), &se).unwrap();
        assert!(d.values.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn empty_miss_reduces_to_erosion() {
        let mut rng = Rng::new(10);
        for _ in 0..20 {
            let a = random_image(&mut rng, 6, 6);
            let hit = BinarySe::from_rows(&[&[0, 0, 0], &[0, 1, 0], &[0, 0, 0]], (1, 1)).unwrap();
            let miss = BinarySe::from_rows(&[&[0, 0, 0], &[0, 0, 0], &[0, 0, 0]], (1, 1)).unwrap();
            let hm = binary_hit_or_miss(&a, &BinarySePair::new(hit.clone(), miss).unwrap()).unwrap();
            assert_eq!(hm, binary_erode(&a, &hit).unwrap());
        }
    }

    #[test]
    fn erosion_matches_translate_and_test() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let a = random_image(&mut rng, 6, 6);
            let se = random_se(&mut rng);
            let got = binary_erode(&a, &se).unwrap();
            let (or, oc) = se.origin();
            // every z where B translated by z lies inside A, restricted to the fit region
            for zr in or..6 - 2 + or {
                for zc in oc..6 - 2 + oc {
                    let mut contained = true;
                    for r in 0..3 {
                        for c in 0..3 {
                            if se.is_set(r, c) {
                                let (y, x) = (zr + r - or, zc + c - oc);
                                contained &= a.get(y, x) == 1;
                            }
                        }
                    }
                    assert_eq!(got.values.get(zr - or, zc - oc), contained as u8);
                }
            }
        }
    }
}
