use bianchor::metrics::{energy_distance, sliced_wasserstein};
use bianchor::nnet::{FeatureConfig, MlpModel};
use bianchor::quadrature::{QuadratureRule, RuleKind};
use bianchor::sidenet::{sidenet_predict, SideNetModel};
use bianchor::TensorBuffer;
use proptest::prelude::*;

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, k| acc * x + k)
}

fn poly_integral(c: &[f64], a: f64, b: f64) -> f64 {
    let anti = |x: f64| c.iter().enumerate().map(|(k, ck)| ck * x.powi(k as i32 + 1) / (k as f64 + 1.0)).sum::<f64>();
    anti(b) - anti(a)
}

fn points(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 2 * n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadrature_is_affine_consistent(
        coeffs in prop::collection::vec(-2.0..2.0f64, 1..=6),
        t in 0.2..1.0f64,
        frac in 0.05..1.0f64,
        shift in -0.15..0.0f64,
    ) {
        // Degree ≤ 5 polynomials integrate exactly on any sub-interval and the
        // result tracks a shift of the interval.
        let h = frac * t;
        for kind in [RuleKind::GaussLobatto4, RuleKind::GaussLegendre3] {
            let rule = QuadratureRule::new(kind);
            for s in [0.0, shift] {
                let ts = (t + s).clamp(h, 1.0);
                let vals: Vec<Vec<f64>> = rule.map_nodes(ts, h).unwrap().into_iter().map(|tau| vec![poly(&coeffs, tau)]).collect();
                let got = rule.apply(&vals, h).unwrap()[0];
                let want = poly_integral(&coeffs, ts - h, ts);
                prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn sliced_wasserstein_ignores_order_and_argument_order(a in points(30), b in points(20), seed in 0u64..1000) {
        let ta = TensorBuffer::from_rows(2, a.clone());
        let tb = TensorBuffer::from_rows(2, b);
        let mut rows: Vec<Vec<f64>> = a.chunks(2).map(<[f64]>::to_vec).collect();
        rows.reverse();
        rows.rotate_left(7);
        let permuted = TensorBuffer::stack(&rows).unwrap();
        let d = sliced_wasserstein(&ta, &tb, 16, seed).unwrap();
        prop_assert!((d - sliced_wasserstein(&permuted, &tb, 16, seed).unwrap()).abs() < 1e-12);
        prop_assert!((d - sliced_wasserstein(&tb, &ta, 16, seed).unwrap()).abs() < 1e-12);
        prop_assert_eq!(sliced_wasserstein(&ta, &ta, 16, seed).unwrap(), 0.0);
    }

    #[test]
    fn energy_distance_is_symmetric_and_nonnegative(a in points(25), b in points(15)) {
        let ta = TensorBuffer::from_rows(2, a);
        let tb = TensorBuffer::from_rows(2, b);
        let ab = energy_distance(&ta, &tb).unwrap();
        prop_assert!((ab - energy_distance(&tb, &ta).unwrap()).abs() < 1e-12);
        prop_assert!(ab >= -1e-12);
        prop_assert_eq!(energy_distance(&ta, &ta).unwrap(), 0.0);
    }

    #[test]
    fn forward_is_row_independent(rows in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 1..6), seed in 0u64..500) {
        let model = MlpModel::new(&[3, 7, 5, 2], seed).unwrap();
        let batch = TensorBuffer::stack(&rows).unwrap();
        let out = model.forward(&batch).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = model.forward(&TensorBuffer::from_rows(3, r.clone())).unwrap();
            prop_assert_eq!(single.row(0), out.row(i));
        }
    }

    #[test]
    fn zero_offset_returns_the_anchor_velocity(
        x in prop::collection::vec(-5.0..5.0f64, 2),
        v in prop::collection::vec(-5.0..5.0f64, 2),
        t in 0.0..=1.0f64,
        seed in 0u64..500,
    ) {
        let features = FeatureConfig::sidenet(2, 2);
        let mlp = MlpModel::new(&[features.input_dim(), 8, 2], seed).unwrap().with_features(features).unwrap();
        let mut sidenet = SideNetModel::from_model(mlp).unwrap();
        for p in sidenet.model_mut().parameters_mut() {
            p.iter_mut().for_each(|w| *w += 0.1);
        }
        let pred = sidenet_predict(&sidenet, &x, &v, t, &[0.0]).unwrap();
        prop_assert_eq!(&pred[0], &v);
    }
}
