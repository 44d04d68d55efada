mod common;

use common::*;
use morphnet::layers::gradcheck::{check_layer, check_loss};
use morphnet::layers::{
    Aggregation, BatchNorm, Conv2d, Dense, DualFlags, GcKind, GenConv, Layer, Loss, MaxPool2x2, MorphKind, MorphLayer, Relu,
};
use morphnet::morph::{gray_dilate, gray_erode, gray_hit_or_miss, GraySe};
use morphnet::{Error, Padding, Rng, Tensor};

fn gray_example_input(img: &[f64; 16]) -> Tensor<f64> {
    Tensor::from_f64(&[1, 1, 4, 4], img).unwrap()
}

fn morph(kind: MorphKind, agg: Aggregation, c: usize, o: usize, k: usize) -> MorphLayer<f64> {
    MorphLayer::new(kind, agg, c, o, k, Padding::None).unwrap()
}

#[test]
fn erosion_layer_reproduces_worked_values() {
    let mut l = morph(MorphKind::Erosion, Aggregation::Hard, 1, 1, 3);
    set_param(&mut l, 0, &EX_H);
    let (y, _) = forward(&mut l, &gray_example_input(&EX_A));
    assert_close(y.data(), &[-0.7, 0.0, -0.7, -0.7], 1e-12);
}

#[test]
fn dilation_layer_reproduces_worked_values() {
    let mut l = morph(MorphKind::Dilation { negate: false }, Aggregation::Hard, 1, 1, 3);
    set_param(&mut l, 0, &EX_M);
    let (y, _) = forward(&mut l, &gray_example_input(&EX_A));
    assert_close(y.data(), &[1.4, 1.0, 1.4, 1.4], 1e-12);

    let mut neg = morph(MorphKind::Dilation { negate: true }, Aggregation::Hard, 1, 1, 3);
    set_param(&mut neg, 0, &EX_M);
    assert_close(forward(&mut neg, &gray_example_input(&EX_A)).0.data(), &[-1.4, -1.0, -1.4, -1.4], 1e-12);
}

#[test]
fn erosion_gradient_only_reaches_the_argmin() {
    let mut rng = Rng::new(11);
    let mut l = morph(MorphKind::Erosion, Aggregation::Hard, 1, 1, 3);
    set_param(&mut l, 0, uniform(&mut rng, &[9], -1.0, 1.0).data());
    let x = uniform(&mut rng, &[1, 1, 3, 3], 0.0, 1.0);
    let (y, tape) = forward(&mut l, &x);
    let g = l.backward(&tape, &Tensor::full(y.shape(), 1.0)).unwrap();
    assert_eq!(g.input.data().iter().filter(|&&v| v != 0.0).count(), 1);
    assert_eq!(g.params[0].data().iter().filter(|&&v| v != 0.0).count(), 1);
    assert_eq!(g.input.sum(), 1.0);
    assert_eq!(g.params[0].sum(), -1.0);
}

#[test]
fn erosion_and_dilation_gradients() {
    let mut rng = Rng::new(12);
    for kind in [MorphKind::Erosion, MorphKind::Dilation { negate: true }] {
        let mut l = morph(kind, Aggregation::Hard, 1, 2, 3);
        set_param(&mut l, 0, uniform(&mut rng, &[18], -1.0, 1.0).data());
        let x = uniform(&mut rng, &[1, 1, 6, 6], 0.0, 1.0);
        let r = check_layer(&mut l, &x, 1, 1e-5).unwrap();
        assert!(r.passed(1e-4), "{kind:?}: {r:?}");
    }
}

#[test]
fn dual_without_constraints_reproduces_first_worked_column() {
    let mut l = morph(MorphKind::Dual(DualFlags::default()), Aggregation::Hard, 1, 1, 3);
    set_param(&mut l, 0, &EX_H);
    set_param(&mut l, 1, &EX_M);
    let (y, _) = forward(&mut l, &gray_example_input(&EX_A));
    assert_close(y.data(), &[-2.1, -1.0, -2.1, -2.1], 1e-12);
}

#[test]
fn dual_masks_reproduce_dont_care_column() {
    // masking by value: zeros in both become don't-care, the 0.7 side wins elsewhere
    let flags = DualFlags { nonintersect: true, dnc: Some(0.0) };
    let mut l = morph(MorphKind::Dual(flags), Aggregation::Hard, 1, 1, 3);
    set_param(&mut l, 0, &EX_H);
    set_param(&mut l, 1, &EX_M);
    let (y, _) = forward(&mut l, &gray_example_input(&EX_A));
    assert_close(y.data(), &[-2.1, -1.0, -2.1, -2.1], 1e-12);
}

#[test]
fn unconstrained_dual_is_erosion_minus_dilation() {
    let mut rng = Rng::new(13);
    for _ in 0..20 {
        let h = uniform(&mut rng, &[9], -1.0, 1.0);
        let m = uniform(&mut rng, &[9], -1.0, 1.0);
        let f = uniform(&mut rng, &[6, 6], 0.0, 1.0);
        let mut l = morph(MorphKind::Dual(DualFlags { nonintersect: false, dnc: Some(f64::NEG_INFINITY) }), Aggregation::Hard, 1, 1, 3);
        set_param(&mut l, 0, h.data());
        set_param(&mut l, 1, m.data());
        let (y, _) = forward(&mut l, &f.clone().reshape(&[1, 1, 6, 6]).unwrap());
        let hs = GraySe::dense(h.reshape(&[3, 3]).unwrap(), (1, 1)).unwrap();
        let ms = GraySe::dense(m.reshape(&[3, 3]).unwrap(), (1, 1)).unwrap();
        let want = gray_erode(&f, &hs).unwrap().values.sub(&gray_dilate(&f, &ms.reflect()).unwrap().values).unwrap();
        assert_close(y.data(), want.data(), 1e-12);
        let oracle = gray_hit_or_miss(&f, &hs, &ms).unwrap();
        assert_close(y.data(), oracle.values.data(), 1e-12);
    }
}

#[test]
fn nonintersect_masks_are_exclusive() {
    let mut rng = Rng::new(14);
    for _ in 0..50 {
        let flags = DualFlags { nonintersect: true, dnc: Some(0.0) };
        let mut l = morph(MorphKind::Dual(flags), Aggregation::Hard, 2, 3, 3);
        let h = uniform(&mut rng, &[54], -1.0, 1.0);
        let m = uniform(&mut rng, &[54], -1.0, 1.0);
        set_param(&mut l, 0, h.data());
        set_param(&mut l, 1, m.data());
        let active = l.active_cells().unwrap();
        for o in 0..3 {
            for c in 0..18u32 {
                let hit = active[o].contains(&c);
                let miss = active[3 + o].contains(&c);
                let both_dnc = h.data()[o * 18 + c as usize].max(m.data()[o * 18 + c as usize]) <= 0.0;
                assert_eq!([hit, miss, both_dnc].iter().filter(|&&b| b).count(), 1, "channel {o} cell {c}");
            }
        }
    }
}

#[test]
fn fully_masked_dual_is_an_error() {
    let mut l = morph(MorphKind::Dual(DualFlags { nonintersect: false, dnc: Some(0.5) }), Aggregation::Hard, 1, 1, 2);
    set_param(&mut l, 0, &[0.1; 4]);
    set_param(&mut l, 1, &[0.2; 4]);
    let mut rng = Rng::new(0);
    let err = l.forward(&Tensor::zeros(&[1, 1, 3, 3]), &mut morphnet::layers::ForwardCtx::new(morphnet::layers::Mode::Eval, &mut rng));
    assert!(matches!(err, Err(Error::AllDnc(_))));
}

#[test]
fn single_se_matches_morphology_with_split_weights() {
    // ring of -0.7 (hit), +0.7 interior (miss), 5x5 filter
    let mut w = vec![0.0; 25];
    for i in 0..5 {
        for j in 0..5 {
            let border = i == 0 || j == 0 || i == 4 || j == 4;
            w[i * 5 + j] = if border { -0.7 } else { 0.7 };
        }
    }
    let mut rng = Rng::new(15);
    let f = uniform(&mut rng, &[7, 7], 0.0, 1.0);
    let mut l = morph(MorphKind::Single, Aggregation::Hard, 1, 1, 5);
    set_param(&mut l, 0, &w);
    let (y, _) = forward(&mut l, &f.clone().reshape(&[1, 1, 7, 7]).unwrap());
    let rows: Vec<Vec<Option<f64>>> =
        (0..5).map(|i| (0..5).map(|j| if w[i * 5 + j] < 0.0 { Some(-w[i * 5 + j]) } else { None }).collect()).collect();
    let rows_m: Vec<Vec<Option<f64>>> =
        (0..5).map(|i| (0..5).map(|j| if w[i * 5 + j] >= 0.0 { Some(w[i * 5 + j]) } else { None }).collect()).collect();
    let h = GraySe::from_rows(&rows.iter().map(Vec::as_slice).collect::<Vec<_>>(), (2, 2)).unwrap();
    let m = GraySe::from_rows(&rows_m.iter().map(Vec::as_slice).collect::<Vec<_>>(), (2, 2)).unwrap();
    let want = gray_hit_or_miss(&f, &h, &m).unwrap();
    assert_close(y.data(), want.values.data(), 1e-12);
}

#[test]
fn single_se_with_one_sign_drops_the_empty_term() {
    let mut l = morph(MorphKind::Single, Aggregation::Hard, 1, 1, 2);
    set_param(&mut l, 0, &[0.1, 0.2, 0.3, 0.4]);
    let x = Tensor::from_f64(&[1, 1, 2, 2], &[0.0, 0.0, 0.0, 1.0]).unwrap();
    let (y, tape) = forward(&mut l, &x);
    assert_close(y.data(), &[-1.4], 1e-12);
    let g = l.backward(&tape, &Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
    assert_close(g.params[0].data(), &[0.0, 0.0, 0.0, -1.0], 0.0);
}

#[test]
fn shm_large_alpha_approaches_hard_transform() {
    let mut rng = Rng::new(16);
    for _ in 0..10 {
        let h = uniform(&mut rng, &[18], 0.0, 1.0);
        let m = uniform(&mut rng, &[18], 0.0, 1.0);
        let x = uniform(&mut rng, &[2, 2, 5, 5], 0.0, 1.0);
        let mut hard = morph(MorphKind::Dual(DualFlags::default()), Aggregation::Hard, 2, 1, 3);
        let mut soft = morph(MorphKind::Dual(DualFlags::default()), Aggregation::Soft { alpha: 100.0, scale: 1.0 }, 2, 1, 3);
        for l in [&mut hard, &mut soft] {
            set_param(l, 0, h.data());
            set_param(l, 1, m.data());
        }
        let (a, _) = forward(&mut hard, &x);
        let (b, _) = forward(&mut soft, &x);
        // softmax error is bounded by ln(cells)/alpha per term; random gaps keep it far smaller
        assert!(a.max_abs_diff(&b).unwrap() < 0.05, "{}", a.max_abs_diff(&b).unwrap());
    }
}

#[test]
fn shm_zero_alpha_is_mean_difference() {
    let mut rng = Rng::new(17);
    let h = uniform(&mut rng, &[9], 0.0, 1.0);
    let m = uniform(&mut rng, &[9], 0.0, 1.0);
    let x = uniform(&mut rng, &[1, 1, 3, 3], 0.0, 1.0);
    let mut l = morph(MorphKind::Dual(DualFlags::default()), Aggregation::Soft { alpha: 0.0, scale: 1.0 }, 1, 1, 3);
    set_param(&mut l, 0, h.data());
    set_param(&mut l, 1, m.data());
    let (y, _) = forward(&mut l, &x);
    let hit = x.sub(&h.clone().reshape(&[1, 1, 3, 3]).unwrap()).unwrap().mean();
    let miss = x.add(&m.reshape(&[1, 1, 3, 3]).unwrap()).unwrap().mean();
    assert!((y.data()[0] - (hit - miss)).abs() < 1e-12);
}

#[test]
fn negative_alpha_is_rejected() {
    assert!(MorphLayer::<f64>::new(MorphKind::Dual(DualFlags::default()), Aggregation::Soft { alpha: -1.0, scale: 1.0 }, 1, 1, 3, Padding::None).is_err());
    assert!(GenConv::<f64>::new(GcKind::Gc2, -0.5, 1, 1, 3, Padding::None).is_err());
}

#[test]
fn unit_conv_scales() {
    let mut c = Conv2d::<f64>::new(1, 1, 1, Padding::None, false).unwrap();
    set_param(&mut c, 0, &[2.5]);
    let mut rng = Rng::new(18);
    let x = randn(&mut rng, &[2, 1, 4, 4]);
    assert_close(forward(&mut c, &x).0.data(), x.scale(2.5).data(), 1e-12);
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = Rng::new(19);
    for pad in [0, 1] {
        let mut c = Conv2d::<f64>::new(2, 3, 3, if pad == 0 { Padding::None } else { Padding::Zero(pad) }, false).unwrap();
        let w = randn(&mut rng, &[3, 2, 3, 3]);
        set_param(&mut c, 0, w.data());
        let x = randn(&mut rng, &[2, 2, 5, 5]);
        assert_close(forward(&mut c, &x).0.data(), conv_oracle(&x, &w, pad).data(), 1e-12);
    }
}

#[test]
fn identity_filter_with_padding_is_identity() {
    let mut c = Conv2d::<f64>::new(1, 1, 3, Padding::Zero(1), true).unwrap();
    let mut w = [0.0; 9];
    w[4] = 1.0;
    set_param(&mut c, 0, &w);
    let mut rng = Rng::new(20);
    let x = randn(&mut rng, &[1, 1, 5, 5]);
    assert_close(forward(&mut c, &x).0.data(), x.data(), 1e-12);
}

#[test]
fn conv_backward_matches_differences() {
    let mut rng = Rng::new(21);
    let mut c = Conv2d::<f64>::new(2, 2, 3, Padding::Zero(1), true).unwrap();
    set_param(&mut c, 0, randn(&mut rng, &[36]).data());
    set_param(&mut c, 1, randn(&mut rng, &[2]).data());
    let r = check_layer(&mut c, &randn(&mut rng, &[2, 2, 4, 4]), 3, 1e-5).unwrap();
    assert!(r.max_rel_err() < 1e-6, "{r:?}");
}

#[test]
fn gc1_at_zero_alpha_is_convolution() {
    let mut rng = Rng::new(22);
    let mut g = GenConv::<f64>::new(GcKind::Gc1, 0.0, 2, 2, 3, Padding::None).unwrap();
    let w = randn(&mut rng, &[2, 2, 3, 3]);
    set_param(&mut g, 0, w.data());
    let x = randn(&mut rng, &[1, 2, 5, 5]);
    assert_close(forward(&mut g, &x).0.data(), conv_oracle(&x, &w, 0).data(), 1e-12);
}

#[test]
fn gc1_all_positive_zero_alpha_is_window_sum() {
    let mut rng = Rng::new(23);
    let mut g = GenConv::<f64>::new(GcKind::Gc1, 0.0, 1, 1, 3, Padding::None).unwrap();
    let w = uniform(&mut rng, &[1, 1, 3, 3], 0.1, 1.0);
    set_param(&mut g, 0, w.data());
    let x = randn(&mut rng, &[1, 1, 3, 3]);
    let want: f64 = x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    assert!((forward(&mut g, &x).0.data()[0] - want).abs() < 1e-12);
}

#[test]
fn gc2_at_zero_alpha_is_twice_convolution() {
    let mut rng = Rng::new(24);
    let mut g = GenConv::<f64>::new(GcKind::Gc2, 0.0, 2, 2, 3, Padding::None).unwrap();
    let w = randn(&mut rng, &[2, 2, 3, 3]);
    set_param(&mut g, 0, w.data());
    let x = randn(&mut rng, &[1, 2, 5, 5]);
    assert_close(forward(&mut g, &x).0.data(), conv_oracle(&x, &w, 0).scale(2.0).data(), 1e-12);
}

#[test]
fn gc2_of_zero_input_is_zero() {
    let mut rng = Rng::new(25);
    for alpha in [0.0, 0.5, 3.0, f64::INFINITY] {
        let mut g = GenConv::<f64>::new(GcKind::Gc2, alpha, 1, 2, 3, Padding::None).unwrap();
        set_param(&mut g, 0, randn(&mut rng, &[18]).data());
        assert!(forward(&mut g, &Tensor::zeros(&[1, 1, 4, 4])).0.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn relu_and_maxpool_values() {
    let mut r = Relu::new();
    let x = Tensor::from_f64(&[1, 2], &[-1.0, 2.0]).unwrap();
    assert_eq!(forward(&mut r, &x).0.data(), &[0.0, 2.0]);
    let mut p = MaxPool2x2::new();
    let x = Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(forward(&mut p, &x).0.data(), &[4.0]);
}

#[test]
fn batchnorm_with_zero_variance_stays_finite() {
    let mut bn = BatchNorm::<f64>::new(2);
    let x = Tensor::full(&[4, 2, 3, 3], 0.7);
    let (y, tape) = forward(&mut bn, &x);
    assert!(y.all_finite());
    assert!(y.data().iter().all(|&v| v.abs() < 1e-6));
    let g = bn.backward(&tape, &Tensor::full(x.shape(), 1.0)).unwrap();
    assert!(g.input.all_finite());
}

#[test]
fn batchnorm_matches_direct_formula() {
    let mut rng = Rng::new(26);
    let mut bn = BatchNorm::<f64>::new(3);
    set_param(&mut bn, 0, &[1.5, 0.5, 2.0]);
    set_param(&mut bn, 1, &[0.1, -0.2, 0.0]);
    let x = randn(&mut rng, &[5, 3]);
    let (y, _) = forward(&mut bn, &x);
    for c in 0..3 {
        let col: Vec<f64> = (0..5).map(|i| x.get(&[i, c])).collect();
        let mean = col.iter().sum::<f64>() / 5.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        for (i, v) in col.iter().enumerate() {
            let want = [1.5, 0.5, 2.0][c] * (v - mean) / (var + 1e-5).sqrt() + [0.1, -0.2, 0.0][c];
            assert!((y.get(&[i, c]) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn tape_from_another_layer_is_rejected() {
    let mut a = Relu::new();
    let b = Relu::new();
    let x = Tensor::<f64>::zeros(&[1, 3]);
    let (_, tape) = forward(&mut a, &x);
    assert!(matches!(Layer::<f64>::backward(&b, &tape, &x), Err(Error::TapeMismatch { .. })));
}

#[test]
fn dense_and_losses_gradients() {
    let mut rng = Rng::new(27);
    let mut d = Dense::<f64>::new(4, 3).unwrap();
    set_param(&mut d, 0, randn(&mut rng, &[12]).data());
    set_param(&mut d, 1, randn(&mut rng, &[3]).data());
    assert!(check_layer(&mut d, &randn(&mut rng, &[5, 4]), 4, 1e-5).unwrap().passed(1e-6));
    for loss in [Loss::Mse, Loss::SoftmaxCrossEntropy] {
        let p = randn(&mut rng, &[4, 5]);
        assert!(check_loss(loss, &p, &[0, 4, 2, 2], 1e-5).unwrap().passed(1e-6));
    }
}
