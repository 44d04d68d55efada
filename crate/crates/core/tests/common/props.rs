//! Randomized identities shared by the proptest suite and the acceptance run.
//! Each check draws one instance from `rng` and reports the first mismatch.

use morphnet::layers::{Aggregation, DualFlags, Layer, MorphKind, MorphLayer};
use morphnet::morph::{binary_dilate, binary_erode, gray_dilate, gray_erode, gray_hit_or_miss, BinaryImage, BinarySe, GraySe};
use morphnet::smooth::smooth_max;
use morphnet::{Padding, Rng, Tensor};

use super::{forward, randn, set_param};

pub type Check = fn(&mut Rng) -> Result<(), String>;

pub const ALL: [(&str, Check); 7] = [
    ("erosion/dilation shift", shift_commutes),
    ("hit-or-miss offset invariance", hit_or_miss_offset),
    ("binary duality", binary_duality),
    ("dnc perturbation invariance", dnc_invariance),
    ("smooth_max bounds and monotonicity", smooth_max_bounds),
    ("softmin/softmax negation symmetry", negation_symmetry),
    ("non-intersecting exclusivity", nonintersect_exclusive),
];

fn close(a: &[f64], b: &[f64], tol: f64, what: &str) -> Result<(), String> {
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if (x - y).abs() > tol * (1.0 + x.abs().max(y.abs())) {
            return Err(format!("{what}: cell {i}: {x} vs {y}"));
        }
    }
    if a.len() != b.len() {
        return Err(format!("{what}: {} vs {} cells", a.len(), b.len()));
    }
    Ok(())
}

fn gray_se(rng: &mut Rng, k: usize) -> GraySe<f64> {
    let keep = rng.below(k * k);
    let rows: Vec<Vec<Option<f64>>> = (0..k)
        .map(|r| (0..k).map(|c| (r * k + c == keep || rng.bernoulli(0.7)).then(|| rng.uniform(-1.0, 1.0))).collect())
        .collect();
    let refs: Vec<&[Option<f64>]> = rows.iter().map(Vec::as_slice).collect();
    GraySe::from_rows(&refs, (rng.below(k), rng.below(k))).unwrap()
}

fn image(rng: &mut Rng) -> Tensor<f64> {
    let (h, w) = (4 + rng.below(5), 4 + rng.below(5));
    Tensor::from_fn(&[h, w], |_| rng.uniform(0.0, 1.0))
}

pub fn shift_commutes(rng: &mut Rng) -> Result<(), String> {
    let f = image(rng);
    let k = 1 + rng.below(3);
    let se = gray_se(rng, k);
    let c = rng.uniform(-5.0, 5.0);
    let g = f.add_scalar(c);
    let want_e = gray_erode(&f, &se).unwrap().values.add_scalar(c);
    let want_d = gray_dilate(&f, &se).unwrap().values.add_scalar(c);
    close(gray_erode(&g, &se).unwrap().values.data(), want_e.data(), 1e-12, "erosion")?;
    close(gray_dilate(&g, &se).unwrap().values.data(), want_d.data(), 1e-12, "dilation")
}

pub fn hit_or_miss_offset(rng: &mut Rng) -> Result<(), String> {
    let f = image(rng);
    let k = 1 + rng.below(3);
    let (hit, miss0) = (gray_se(rng, k), gray_se(rng, k));
    let miss = GraySe::new(miss0.weights().clone(), miss0.dnc().to_vec(), hit.origin()).unwrap();
    let c = rng.uniform(-5.0, 5.0);
    let a = gray_hit_or_miss(&f, &hit, &miss).unwrap().values;
    let b = gray_hit_or_miss(&f.add_scalar(c), &hit, &miss).unwrap().values;
    close(a.data(), b.data(), 1e-12, "classical")?;

    let mut layer = MorphLayer::<f64>::new(MorphKind::Dual(DualFlags::default()), Aggregation::Hard, 2, 2, 3, Padding::None).unwrap();
    let (h, m) = (randn(rng, &[36]), randn(rng, &[36]));
    set_param(&mut layer, 0, h.data());
    set_param(&mut layer, 1, m.data());
    let x = randn(rng, &[2, 2, 5, 5]);
    let y0 = forward(&mut layer, &x).0;
    let y1 = forward(&mut layer, &x.add_scalar(c)).0;
    close(y0.data(), y1.data(), 1e-12, "dual layer")
}

fn binary_image(rng: &mut Rng) -> BinaryImage {
    let (h, w) = (4 + rng.below(5), 4 + rng.below(5));
    BinaryImage::new(h, w, (0..h * w).map(|_| rng.bernoulli(0.5) as u8).collect()).unwrap()
}

pub fn binary_duality(rng: &mut Rng) -> Result<(), String> {
    let a = binary_image(rng);
    let (kr, kc) = (1 + rng.below(3), 1 + rng.below(3));
    let cells: Vec<bool> = (0..kr * kc).map(|_| rng.bernoulli(0.6)).collect();
    let b = BinarySe::new(kr, kc, cells, (rng.below(kr), rng.below(kc))).unwrap();
    let (ac, br) = (a.complement(), b.reflect());
    let lhs = binary_erode(&a, &b).unwrap();
    let rhs = binary_dilate(&ac, &br).unwrap();
    if lhs.values.complement() != rhs.values || lhs.offset != rhs.offset {
        return Err("complement of erosion differs from dilation of complement".into());
    }
    let lhs = binary_dilate(&a, &b).unwrap();
    let rhs = binary_erode(&ac, &br).unwrap();
    if lhs.values.complement() != rhs.values || lhs.offset != rhs.offset {
        return Err("complement of dilation differs from erosion of complement".into());
    }
    Ok(())
}

pub fn dnc_invariance(rng: &mut Rng) -> Result<(), String> {
    let th = rng.uniform(-0.5, 0.5);
    let flags = DualFlags { nonintersect: rng.bernoulli(0.5), dnc: Some(th) };
    let mut layer = MorphLayer::<f64>::new(MorphKind::Dual(flags), Aggregation::Hard, 1, 1, 3, Padding::None).unwrap();
    let mut h = randn(rng, &[9]);
    let mut m = randn(rng, &[9]);
    // two live cells so neither term can be fully masked
    h.data_mut()[0] = th + 1.0 + rng.uniform(0.0, 1.0);
    m.data_mut()[0] = th + 0.5;
    m.data_mut()[1] = th + 1.0 + rng.uniform(0.0, 1.0);
    h.data_mut()[1] = th + 0.5;
    let dnc: Vec<usize> = (2..9).filter(|_| rng.bernoulli(0.5)).collect();
    for &i in &dnc {
        h.data_mut()[i] = th - rng.uniform(0.0, 1.0);
        m.data_mut()[i] = th - rng.uniform(0.0, 1.0);
    }
    set_param(&mut layer, 0, h.data());
    set_param(&mut layer, 1, m.data());
    let x = randn(rng, &[3, 1, 4, 4]);
    let y0 = forward(&mut layer, &x).0;
    for &i in &dnc {
        h.data_mut()[i] = th - rng.uniform(0.0, 3.0);
        m.data_mut()[i] = th - rng.uniform(0.0, 3.0);
    }
    set_param(&mut layer, 0, h.data());
    set_param(&mut layer, 1, m.data());
    let y1 = forward(&mut layer, &x).0;
    if y0.data() != y1.data() {
        return Err(format!("output moved after perturbing dnc cells {dnc:?}"));
    }
    Ok(())
}

fn vector(rng: &mut Rng) -> Vec<f64> {
    let n = 1 + rng.below(30);
    let scale = rng.uniform(0.1, 10.0);
    (0..n).map(|_| rng.normal(0.0, scale)).collect()
}

pub fn smooth_max_bounds(rng: &mut Rng) -> Result<(), String> {
    let x = vector(rng);
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut alphas: Vec<f64> = (0..6).map(|_| rng.uniform(-20.0, 20.0)).collect();
    alphas.push(0.0);
    alphas.sort_by(f64::total_cmp);
    let eps = 1e-12 * (1.0 + hi.abs().max(lo.abs()));
    let mut prev = f64::NEG_INFINITY;
    for a in alphas {
        let s = smooth_max(&x, a).unwrap().0;
        if s < lo - eps || s > hi + eps {
            return Err(format!("s({a}) = {s} outside [{lo}, {hi}]"));
        }
        if s < prev - eps {
            return Err(format!("s decreased to {s} at alpha {a}"));
        }
        prev = s;
    }
    Ok(())
}

pub fn negation_symmetry(rng: &mut Rng) -> Result<(), String> {
    let x = vector(rng);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let a = rng.uniform(-20.0, 20.0);
    let s = smooth_max(&x, a).unwrap().0;
    let t = smooth_max(&neg, -a).unwrap().0;
    close(&[s], &[-t], 1e-12, "negation")
}

pub fn nonintersect_exclusive(rng: &mut Rng) -> Result<(), String> {
    let dnc = rng.bernoulli(0.5).then_some(-0.5);
    let mut layer =
        MorphLayer::<f64>::new(MorphKind::Dual(DualFlags { nonintersect: true, dnc }), Aggregation::Hard, 2, 2, 3, Padding::None).unwrap();
    let (h, m) = (randn(rng, &[36]), randn(rng, &[36]));
    set_param(&mut layer, 0, h.data());
    set_param(&mut layer, 1, m.data());
    let cells = match layer.active_cells() {
        Ok(c) => c,
        // every cell of some term masked; nothing to compare
        Err(_) => return Ok(()),
    };
    let o = layer.params()[0].1.shape()[0];
    for ch in 0..o {
        for c in &cells[ch] {
            if cells[o + ch].contains(c) {
                let i = ch * 18 + *c as usize;
                if h.data()[i] != m.data()[i] {
                    return Err(format!("cell {i} active in both terms"));
                }
            }
        }
    }
    Ok(())
}

/// Runs `check` on `n` instances seeded from `seed`; returns failures.
pub fn run(check: Check, n: usize, seed: u64) -> Vec<String> {
    let mut root = Rng::new(seed);
    (0..n).filter_map(|_| check(&mut root.fork()).err()).collect()
}
