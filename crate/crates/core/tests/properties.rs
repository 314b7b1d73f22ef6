mod common;

use common::{random_net, rng, tensor};
use eva_core::{
    ao_upper, bounds, grid_cells, grid_for_shape, linf_ball, mask_ball, ranking, sample_uniform,
    sign_split, trapezoid, BoundMethod, Tensor, VariableSet, PIXEL_RANGE,
};
use proptest::prelude::*;
use rand::Rng;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn bounds_contain_sampled_outputs(seed in any::<u64>(), eps in 0.001f64..0.6, clip in any::<bool>()) {
        let mut r = rng(seed);
        let net = random_net(&mut r);
        let x: Vec<f64> = (0..net.input_len()).map(|_| r.random_range(0.0..1.0)).collect();
        let b = linf_ball(&tensor(net.input_shape(), &x), eps, clip.then_some(PIXEL_RANGE)).unwrap();
        let samples = sample_uniform(&b, 100, seed).unwrap();
        for m in BoundMethod::ALL {
            let out = bounds(&net, &b, m).unwrap();
            for d in &samples {
                let z = net.forward(&b.center().add(d).unwrap()).unwrap();
                for (k, &v) in z.data().iter().enumerate() {
                    prop_assert!(out.lower().data()[k] - 1e-9 <= v, "{m} lower");
                    prop_assert!(v <= out.upper().data()[k] + 1e-9, "{m} upper");
                }
            }
        }
    }

    #[test]
    fn freezing_more_never_raises_the_overlap(seed in any::<u64>(), eps in 0.01f64..0.5) {
        let mut r = rng(seed);
        let net = random_net(&mut r);
        let x: Vec<f64> = (0..net.input_len()).map(|_| r.random_range(0.0..1.0)).collect();
        let b = linf_ball(&tensor(net.input_shape(), &x), eps, None).unwrap();
        let u = VariableSet::new((0..net.input_len()).filter(|_| r.random_bool(0.3)));
        let v = u.union(&VariableSet::new((0..net.input_len()).filter(|_| r.random_bool(0.3))));
        let class = r.random_range(0..net.class_count());
        // IBP is monotone in the box, so nested boxes give ordered overlaps.
        let full = ao_upper(&net, &b, BoundMethod::Ibp, class).unwrap().value;
        let bu = ao_upper(&net, &mask_ball(&b, &u).unwrap(), BoundMethod::Ibp, class).unwrap().value;
        let bv = ao_upper(&net, &mask_ball(&b, &v).unwrap(), BoundMethod::Ibp, class).unwrap().value;
        prop_assert!(bu <= full + 1e-9);
        prop_assert!(bv <= bu + 1e-9);
    }

    #[test]
    fn masks_compose_by_union(seed in any::<u64>(), dim in 1usize..40) {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..dim).map(|_| r.random_range(0.0..1.0)).collect();
        let b = linf_ball(&tensor(&[dim], &x), 0.3, Some(PIXEL_RANGE)).unwrap();
        let u = VariableSet::new((0..dim).filter(|_| r.random_bool(0.4)));
        let v = VariableSet::new((0..dim).filter(|_| r.random_bool(0.4)));
        let twice = mask_ball(&mask_ball(&b, &u).unwrap(), &v).unwrap();
        prop_assert_eq!(&twice, &mask_ball(&b, &u.union(&v)).unwrap());
        prop_assert_eq!(&twice, &mask_ball(&mask_ball(&b, &v).unwrap(), &u).unwrap());
        prop_assert_eq!(mask_ball(&b, &VariableSet::empty()).unwrap(), b.clone());
        prop_assert!(mask_ball(&b, &VariableSet::all(dim)).unwrap().is_degenerate());
    }

    #[test]
    fn sign_split_halves_cover_the_box(seed in any::<u64>(), dim in 1usize..30) {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..dim).map(|_| r.random_range(0.0..1.0)).collect();
        let b = linf_ball(&tensor(&[dim], &x), r.random_range(0.01..0.5), Some(PIXEL_RANGE)).unwrap();
        let (plus, minus) = sign_split(&b);
        for i in 0..dim {
            prop_assert_eq!(plus.lo().data()[i], 0.0);
            prop_assert_eq!(plus.hi().data()[i], b.hi().data()[i]);
            prop_assert_eq!(minus.lo().data()[i], b.lo().data()[i]);
            prop_assert_eq!(minus.hi().data()[i], 0.0);
        }
    }

    #[test]
    fn grid_cells_partition_the_image(c in 1usize..4, h in 1usize..20, w in 1usize..20, g in 1usize..20) {
        prop_assume!(g <= h.min(w));
        let grid = grid_cells(h, w, c, g).unwrap();
        prop_assert_eq!(grid.cell_count(), g * g);
        let mut owner = vec![usize::MAX; c * h * w];
        for (k, cell) in grid.cells().iter().enumerate() {
            prop_assert!(!cell.is_empty());
            for &i in cell.indices() {
                prop_assert_eq!(owner[i], usize::MAX, "coordinate {} in two cells", i);
                owner[i] = k;
            }
        }
        for (i, &k) in owner.iter().enumerate() {
            prop_assert_eq!(k, grid.cell_of(i));
        }
        let sizes: Vec<usize> = grid.cells().iter().map(|c| c.len()).collect();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        let (rows, cols) = (h.div_ceil(g) * c, w.div_ceil(g));
        prop_assert!(hi - lo <= rows * cols);
    }

    #[test]
    fn flat_grids_are_contiguous_runs(d in 1usize..100, g in 1usize..100) {
        prop_assume!(g <= d);
        let grid = grid_for_shape(&[d], g).unwrap();
        let mut next = 0;
        for cell in grid.cells() {
            let idx = cell.indices();
            prop_assert!(!idx.is_empty());
            prop_assert_eq!(idx[0], next);
            prop_assert_eq!(*idx.last().unwrap(), next + idx.len() - 1);
            next += idx.len();
        }
        prop_assert_eq!(next, d);
    }

    #[test]
    fn softmax_is_a_distribution(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = random_net(&mut r);
        let x: Vec<f64> = (0..net.input_len()).map(|_| r.random_range(-3.0..3.0)).collect();
        let x = tensor(net.input_shape(), &x);
        let p = net.forward_probs(&x).unwrap();
        let z = net.forward(&x).unwrap();
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(p.argmax(), z.argmax());
    }

    #[test]
    fn ranking_sorts_descending(map in prop::collection::vec(-5.0f64..5.0, 1..60)) {
        let order = ranking(&map);
        let mut seen = order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..map.len()).collect::<Vec<_>>());
        for w in order.windows(2) {
            prop_assert!(map[w[0]] > map[w[1]] || (map[w[0]] == map[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn trapezoid_is_linear(ys in prop::collection::vec(-2.0f64..2.0, 2..30), a in -3.0f64..3.0) {
        let n = ys.len();
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let scaled: Vec<f64> = ys.iter().map(|y| a * y + 1.0).collect();
        let lhs = trapezoid(&xs, &scaled);
        let rhs = a * trapezoid(&xs, &ys) + 1.0;
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn tensor_arithmetic_round_trips(data in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let t = Tensor::new(vec![data.len()], data.clone()).unwrap();
        let u = t.map(|v| 2.0 * v).unwrap();
        prop_assert_eq!(u.sub(&t).unwrap(), t.clone());
        prop_assert_eq!(t.add(&t).unwrap(), u);
        prop_assert!(Tensor::new(vec![data.len() + 1], data).is_err());
    }
}
