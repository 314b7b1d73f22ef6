mod common;

use common::{ball, corner_extrema, corners, dense, linear_net, random_net, rng, tensor};
use eva_core::{
    backward_bounds, bounds, bounds_from_activation, combine_bounds, forward_affine_bounds,
    ibp_bounds, linf_ball, BoundConfig, BoundMethod, IntervalBounds, Layer, Network, Norm,
    PerturbBox, PIXEL_RANGE,
};
use rand::Rng;

fn interval(lower: &[f64], upper: &[f64]) -> IntervalBounds {
    IntervalBounds::new(tensor(&[lower.len()], lower), tensor(&[upper.len()], upper)).unwrap()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn random_box(r: &mut impl Rng, net: &Network) -> PerturbBox {
    let shape = net.input_shape().to_vec();
    let n: usize = shape.iter().product();
    let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    linf_ball(&tensor(&shape, &x), r.random_range(0.01..0.5), None).unwrap()
}

#[test]
fn identity_layer_passes_the_box_through() {
    let net = linear_net(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
    let b = ball(&[0.0, 0.0], 1.0);
    for m in BoundMethod::ALL {
        let out = bounds(&net, &b, m).unwrap();
        assert_close(out.lower().data(), &[-1.0, -1.0], 1e-12);
        assert_close(out.upper().data(), &[1.0, 1.0], 1e-12);
    }
}

#[test]
fn difference_over_unit_square() {
    let net = linear_net(1, 2, &[1.0, -1.0], &[0.0]);
    let b = ball(&[0.5, 0.5], 0.5);
    let (lo, hi) = corner_extrema(&net, &b);
    assert_eq!((lo[0], hi[0]), (-1.0, 1.0));
    let (out, _) = ibp_bounds(&net, &b).unwrap();
    assert_close(out.lower().data(), &[-1.0], 1e-12);
    assert_close(out.upper().data(), &[1.0], 1e-12);
}

#[test]
fn relu_clamps_its_interval() {
    let net = Network::new(
        vec![
            dense(1, 1, &[1.0], &[0.0]),
            Layer::Relu,
            dense(1, 1, &[1.0], &[0.0]),
        ],
        vec![1],
    )
    .unwrap();
    let (out, trace) = ibp_bounds(&net, &ball(&[0.5], 1.5)).unwrap();
    let pre = &trace.entries()[0];
    assert_close(pre.lower().data(), &[-1.0], 1e-12);
    assert_close(pre.upper().data(), &[2.0], 1e-12);
    assert_close(out.lower().data(), &[0.0], 1e-12);
    assert_close(out.upper().data(), &[2.0], 1e-12);
}

#[test]
fn every_method_is_exact_on_linear_nets() {
    let mut r = rng(11);
    for _ in 0..20 {
        let d = r.random_range(1..=5);
        let h = r.random_range(1..=4);
        let k = r.random_range(1..=3);
        let w1: Vec<f64> = (0..h * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let w2: Vec<f64> = (0..k * h).map(|_| r.random_range(-2.0..2.0)).collect();
        let net = Network::new(
            vec![
                dense(h, d, &w1, &vec![0.1; h]),
                dense(k, h, &w2, &vec![-0.2; k]),
            ],
            vec![d],
        )
        .unwrap();
        let b = random_box(&mut r, &net);
        let (lo, hi) = corner_extrema(&net, &b);
        for m in BoundMethod::ALL {
            let out = bounds(&net, &b, m).unwrap();
            if m == BoundMethod::Ibp {
                // Intervals forget the correlation between hidden units.
                assert!(out.contains(&interval(&lo, &hi), 1e-9));
                continue;
            }
            assert_close(out.lower().data(), &lo, 1e-9);
            assert_close(out.upper().data(), &hi, 1e-9);
        }
        let w: Vec<f64> = (0..k * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let single = linear_net(k, d, &w, &vec![0.3; k]);
        let (lo, hi) = corner_extrema(&single, &b);
        let out = bounds(&single, &b, BoundMethod::Ibp).unwrap();
        assert_close(out.lower().data(), &lo, 1e-9);
        assert_close(out.upper().data(), &hi, 1e-9);
    }
}

#[test]
fn stable_relus_make_forward_match_ibp() {
    let net = Network::new(
        vec![
            dense(2, 2, &[1.0, 0.5, -0.5, 1.0], &[5.0, 5.0]),
            Layer::Relu,
            dense(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]),
        ],
        vec![2],
    )
    .unwrap();
    let b = ball(&[0.2, -0.3], 0.5);
    let (ibp, _) = ibp_bounds(&net, &b).unwrap();
    let (fwd, _, _) = forward_affine_bounds(&net, &b).unwrap();
    let (lo, hi) = corner_extrema(&net, &b);
    assert_close(fwd.lower().data(), ibp.lower().data(), 1e-12);
    assert_close(fwd.upper().data(), ibp.upper().data(), 1e-12);
    assert_close(fwd.lower().data(), &lo, 1e-12);
    assert_close(fwd.upper().data(), &hi, 1e-12);
}

#[test]
fn unstable_relu_relaxation_lines() {
    let relu =
        |w: f64| Network::new(vec![dense(1, 1, &[w], &[0.0]), Layer::Relu], vec![1]).unwrap();
    // l = -1, u = 1: upper 0.5 z + 0.5, lower z since u >= |l|.
    let (_, _, aff) = forward_affine_bounds(&relu(1.0), &ball(&[0.0], 1.0)).unwrap();
    assert_close(aff.upper_coeffs.data(), &[0.5], 1e-12);
    assert_close(aff.upper_offset.data(), &[0.5], 1e-12);
    assert_close(aff.lower_coeffs.data(), &[1.0], 1e-12);
    assert_close(aff.lower_offset.data(), &[0.0], 1e-12);

    // l = -2, u = 1: upper slope 1/3, intercept 2/3, lower line 0.
    let (out, _, aff) = forward_affine_bounds(&relu(1.0), &ball(&[-0.5], 1.5)).unwrap();
    assert_close(aff.upper_coeffs.data(), &[1.0 / 3.0], 1e-12);
    // The form is in δ around the center -0.5: (z + 2)/3 with z = -0.5 + δ.
    assert_close(aff.upper_offset.data(), &[0.5], 1e-12);
    assert_close(aff.lower_coeffs.data(), &[0.0], 1e-12);
    assert_close(out.lower().data(), &[0.0], 1e-12);
    assert_close(out.upper().data(), &[1.0], 1e-12);
}

#[test]
fn backward_on_a_linear_form() {
    let net = linear_net(1, 2, &[2.0, -1.0], &[0.5]);
    let b = ball(&[0.0, 0.0], 1.0);
    let (_, trace) = ibp_bounds(&net, &b).unwrap();
    let out = backward_bounds(&net, &b, &trace, Norm::Linf).unwrap();
    assert!(!out.fell_back);
    assert_close(out.bounds.lower().data(), &[-2.5], 1e-12);
    assert_close(out.bounds.upper().data(), &[3.5], 1e-12);
}

#[test]
fn backward_uses_the_dual_norm() {
    let net = linear_net(1, 2, &[3.0, -4.0], &[1.0]);
    let b = ball(&[0.0, 0.0], 0.5);
    let (_, trace) = ibp_bounds(&net, &b).unwrap();
    for (norm, dual) in [(Norm::L2, 5.0), (Norm::L1, 4.0), (Norm::Linf, 7.0)] {
        let out = backward_bounds(&net, &b, &trace, norm).unwrap().bounds;
        assert_close(out.lower().data(), &[1.0 - 0.5 * dual], 1e-12);
        assert_close(out.upper().data(), &[1.0 + 0.5 * dual], 1e-12);
    }
}

#[test]
fn backward_is_exact_when_every_relu_is_stable() {
    let net = Network::new(
        vec![
            dense(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.3, 0.3], &[4.0, -9.0, 3.0]),
            Layer::Relu,
            dense(2, 3, &[1.0, -1.0, 2.0, 0.5, 0.5, -0.5], &[0.0, 1.0]),
        ],
        vec![2],
    )
    .unwrap();
    let b = ball(&[0.1, 0.2], 0.4);
    let (_, trace) = ibp_bounds(&net, &b).unwrap();
    let out = backward_bounds(&net, &b, &trace, Norm::Linf)
        .unwrap()
        .bounds;
    let (lo, hi) = corner_extrema(&net, &b);
    assert_close(out.lower().data(), &lo, 1e-12);
    assert_close(out.upper().data(), &hi, 1e-12);
}

#[test]
fn backward_is_sound_on_a_dense_grid_and_usually_tighter() {
    let mut r = rng(5);
    let (mut tighter, mut instances) = (0, 0);
    for _ in 0..20 {
        let w1: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let b1: Vec<f64> = (0..2).map(|_| r.random_range(-0.3..0.3)).collect();
        let net = Network::new(
            vec![
                dense(2, 2, &w1, &b1),
                Layer::Relu,
                dense(2, 2, &w2, &[0.0, 0.0]),
            ],
            vec![2],
        )
        .unwrap();
        let b = ball(&[0.0, 0.0], 1.0);
        let (ibp, trace) = ibp_bounds(&net, &b).unwrap();
        let back = backward_bounds(&net, &b, &trace, Norm::Linf)
            .unwrap()
            .bounds;
        let n = 1000;
        for i in 0..=n {
            for j in 0..=n {
                let x = [
                    2.0 * i as f64 / n as f64 - 1.0,
                    2.0 * j as f64 / n as f64 - 1.0,
                ];
                let z = net.forward(&tensor(&[2], &x)).unwrap();
                for (k, &v) in z.data().iter().enumerate() {
                    assert!(
                        back.lower().data()[k] - 1e-9 <= v && v <= back.upper().data()[k] + 1e-9
                    );
                }
            }
        }
        for k in 0..2 {
            instances += 1;
            tighter += usize::from(back.upper().data()[k] <= ibp.upper().data()[k] + 1e-12);
        }
    }
    assert!(
        2 * tighter > instances,
        "backward tighter on only {tighter}/{instances} outputs"
    );
}

#[test]
fn max_pool_blocks_the_backward_pass() {
    let net = Network::new(
        vec![
            Layer::Conv2d {
                kernels: tensor(&[1, 1, 1, 1], &[1.0]),
                bias: tensor(&[1], &[0.0]),
                stride: 1,
                padding: eva_core::Padding::Valid,
            },
            Layer::MaxPool2d {
                window: 2,
                stride: 2,
            },
            Layer::Flatten,
            dense(2, 1, &[1.0, -1.0], &[0.0, 0.0]),
        ],
        vec![1, 2, 2],
    )
    .unwrap();
    let b = linf_ball(&tensor(&[1, 2, 2], &[0.1, 0.2, 0.3, 0.4]), 0.1, None).unwrap();
    let (ibp, trace) = ibp_bounds(&net, &b).unwrap();
    let out = backward_bounds(&net, &b, &trace, Norm::Linf).unwrap();
    assert!(out.fell_back);
    assert_eq!(out.bounds, ibp);
}

#[test]
fn backward_rejects_a_foreign_trace() {
    let a = Network::new(
        vec![dense(2, 2, &[1.0; 4], &[0.0; 2]), Layer::Relu],
        vec![2],
    )
    .unwrap();
    let b = linear_net(2, 2, &[1.0; 4], &[0.0; 2]);
    let x = ball(&[0.0, 0.0], 0.1);
    let (_, trace) = ibp_bounds(&b, &x).unwrap();
    assert!(backward_bounds(&a, &x, &trace, Norm::Linf).is_err());
    assert!(bounds(&a, &ball(&[0.0], 0.1), BoundMethod::Ibp).is_err());
}

#[test]
fn combine_examples() {
    let b = interval(&[0.0, -1.0], &[2.0, 1.0]);
    assert_eq!(combine_bounds(&[b.clone(), b.clone()]).unwrap(), b);
    let c = combine_bounds(&[interval(&[0.0], &[2.0]), interval(&[-1.0], &[1.0])]).unwrap();
    assert_eq!(c, interval(&[0.0], &[1.0]));
    assert!(combine_bounds(&[]).is_err());
    assert!(combine_bounds(&[interval(&[0.0], &[1.0]), b]).is_err());
}

#[test]
fn combined_methods_are_contained_in_their_parts() {
    let mut r = rng(21);
    for _ in 0..40 {
        let net = random_net(&mut r);
        let b = random_box(&mut r, &net);
        let (ibp, _) = ibp_bounds(&net, &b).unwrap();
        assert_eq!(bounds(&net, &b, BoundMethod::Ibp).unwrap(), ibp);
        let fwd = bounds(&net, &b, BoundMethod::Forward).unwrap();
        for m in [BoundMethod::IbpForward, BoundMethod::IbpForwardBackward] {
            let c = bounds(&net, &b, m).unwrap();
            assert!(ibp.contains(&c, 1e-12), "{m} escapes IBP");
            assert!(fwd.contains(&c, 1e-12), "{m} escapes forward");
        }
    }
}

#[test]
fn degenerate_boxes_give_the_point_value() {
    let mut r = rng(3);
    for _ in 0..30 {
        let net = random_net(&mut r);
        let b = random_box(&mut r, &net);
        let point = PerturbBox::point(b.center().clone());
        let z = net.forward(b.center()).unwrap();
        for m in BoundMethod::ALL {
            let out = bounds(&net, &point, m).unwrap();
            assert_close(out.lower().data(), z.data(), 1e-9);
            assert_close(out.upper().data(), z.data(), 1e-9);
        }
    }
}

#[test]
fn shrinking_the_radius_shrinks_the_bounds() {
    let mut r = rng(8);
    for _ in 0..30 {
        let net = random_net(&mut r);
        let n = net.input_len();
        let x: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let x = tensor(net.input_shape(), &x);
        let (e1, e2) = (0.05, r.random_range(0.05..0.4));
        let small = linf_ball(&x, e1, Some(PIXEL_RANGE)).unwrap();
        let large = linf_ball(&x, e2, Some(PIXEL_RANGE)).unwrap();
        for m in [
            BoundMethod::Ibp,
            BoundMethod::Forward,
            BoundMethod::Backward,
        ] {
            let (s, l) = (
                bounds(&net, &small, m).unwrap(),
                bounds(&net, &large, m).unwrap(),
            );
            assert!(l.contains(&s, 1e-9), "{m}: ε={e1} not inside ε={e2}");
        }
    }
}

#[test]
fn activation_space_bounds() {
    let mut r = rng(13);
    let net = Network::new(
        vec![
            dense(3, 2, &[1.0, -1.0, 0.5, 0.5, -2.0, 1.0], &[0.1, 0.0, -0.1]),
            Layer::Relu,
            dense(2, 3, &[1.0, 2.0, -1.0, -0.5, 1.0, 1.0], &[0.0, 0.3]),
        ],
        vec![2],
    )
    .unwrap();
    let b = ball(&[0.3, -0.2], 0.2);
    for m in BoundMethod::ALL {
        assert_eq!(
            bounds_from_activation(&net, 0, &b, m).unwrap(),
            bounds(&net, &b, m).unwrap()
        );
    }

    let h = net.activation_at(b.center(), 2).unwrap();
    let z = net.forward_from(2, &h).unwrap();
    let out = bounds_from_activation(
        &net,
        2,
        &PerturbBox::point(h.clone()),
        BoundMethod::IbpForwardBackward,
    )
    .unwrap();
    assert_close(out.lower().data(), z.data(), 1e-12);
    assert_close(out.upper().data(), z.data(), 1e-12);

    for _ in 0..10 {
        let center: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
        let a = ball(&center, r.random_range(0.01..0.5));
        let suffix = linear_net(2, 3, &[1.0, 2.0, -1.0, -0.5, 1.0, 1.0], &[0.0, 0.3]);
        let (lo, hi) = corner_extrema(&suffix, &a);
        assert_eq!(corners(&a).len(), 8);
        for m in BoundMethod::ALL {
            let out = bounds_from_activation(&net, 2, &a, m).unwrap();
            assert_close(out.lower().data(), &lo, 1e-9);
            assert_close(out.upper().data(), &hi, 1e-9);
        }
    }
    assert!(bounds_from_activation(&net, 9, &b, BoundMethod::Ibp).is_err());
}

#[test]
fn combined_bounds_are_tighter_on_the_fixture() {
    let net = common::mnist_mlp();
    let data = common::test_set();
    let (mut ibp, mut combined) = (0.0, 0.0);
    for i in 0..3 {
        let b = linf_ball(&data.image(i).unwrap(), 0.05, Some(PIXEL_RANGE)).unwrap();
        ibp += bounds(net, &b, BoundMethod::Ibp).unwrap().mean_gap();
        combined += bounds(net, &b, BoundConfig::from(BoundMethod::IbpForwardBackward))
            .unwrap()
            .mean_gap();
    }
    assert!(combined < ibp, "combined {combined} vs ibp {ibp}");
}
