use std::collections::BTreeMap;

use daclab_core::losses::{dkd_loss, kd_loss, pld_loss, total_loss, Projections};
use daclab_core::numerics::{Graph, ParameterSet, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn kd_value(s: &Tensor<f64>, t: &Tensor<f64>, temp: f64) -> f64 {
    let mut g = Graph::new();
    let (sv, tv) = (g.constant(s.clone()), g.constant(t.clone()));
    let l = kd_loss(&mut g, sv, tv, temp, true).unwrap();
    g.value(l).item()
}

proptest! {
    #[test]
    fn log_softmax_normalizes_and_ignores_shifts(x in matrix(3, 5), c in -50.0f64..50.0) {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let ls = g.log_softmax(v).unwrap();
        let shifted = g.constant(Tensor::new(vec![3, 5], x.data().iter().map(|v| v + c).collect()).unwrap());
        let ls2 = g.log_softmax(shifted).unwrap();
        for row in g.value(ls).data().chunks(5) {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
        for (a, b) in g.value(ls).data().iter().zip(g.value(ls2).data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn kd_is_non_negative_and_zero_on_match(s in matrix(4, 3), t in matrix(4, 3), temp in 0.2f64..4.0) {
        prop_assert!(kd_value(&s, &t, temp) >= -1e-12);
        prop_assert!(kd_value(&t, &t, temp).abs() < 1e-7);
    }

    #[test]
    fn dkd_equals_sum_of_kd_terms(
        heads in prop::collection::vec(matrix(3, 2), 1..5),
        teachers in prop::collection::vec(matrix(3, 2), 5),
        temp in 0.3f64..2.0,
    ) {
        let i = heads.len();
        let mut g = Graph::new();
        let hv: Vec<_> = heads.iter().map(|h| g.constant(h.clone())).collect();
        let tv: Vec<_> = teachers.iter().map(|t| g.constant(t.clone())).collect();
        let l = dkd_loss(&mut g, &hv, tv[i - 1], &tv[..i - 1], temp, true).unwrap();
        let expected: f64 = (0..i).map(|k| kd_value(&heads[k], &teachers[k], temp)).sum();
        prop_assert!((g.value(l).item() - expected).abs() < 1e-7);
    }

    #[test]
    fn pld_invariant_under_feature_permutation(
        h in matrix(3, 4), hs in matrix(3, 4), hc in matrix(3, 4),
        wsc in matrix(4, 4), wcl in matrix(4, 4),
        perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle(),
        i in 1usize..4,
    ) {
        let permute_cols = |m: &Tensor<f64>| Tensor::from_fn(&[3, 4], |k| m.data()[(k / 4) * 4 + perm[k % 4]]);
        let conjugate = |w: &Tensor<f64>| Tensor::from_fn(&[4, 4], |k| w.data()[perm[k / 4] * 4 + perm[k % 4]]);
        let eval = |h: &Tensor<f64>, hs: &Tensor<f64>, hc: &Tensor<f64>, wsc: &Tensor<f64>, wcl: &Tensor<f64>| {
            let mut p = ParameterSet::new();
            p.insert("fc/w_sc", wsc.clone()).unwrap();
            p.insert("fc/w_cl", wcl.clone()).unwrap();
            let mut g = Graph::new();
            let b = g.bind(&p, false);
            let tap = |g: &mut Graph<f64>, t: &Tensor<f64>| BTreeMap::from([("fc".to_string(), g.constant(t.clone()))]);
            let (a, s, c) = (tap(&mut g, h), tap(&mut g, hs), tap(&mut g, hc));
            let l = pld_loss(&mut g, &a, &s, Some(&c), &b, i).unwrap();
            g.value(l).item()
        };
        let base = eval(&h, &hs, &hc, &wsc, &wcl);
        let moved = eval(&permute_cols(&h), &permute_cols(&hs), &permute_cols(&hc), &conjugate(&wsc), &conjugate(&wcl));
        prop_assert!((base - moved).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn projection_gradients_vanish_at_zero_lambda(
        s in matrix(3, 2), t in matrix(3, 2), h in matrix(3, 3), hs in matrix(3, 3), hc in matrix(3, 3),
    ) {
        let proj = Projections::<f64>::identity(&[("fc".to_string(), 3)]);
        let mut g = Graph::new();
        let b = proj.bind(&mut g, true);
        let (sv, tv) = (g.param(s), g.constant(t));
        let tap = |g: &mut Graph<f64>, t: Tensor<f64>| BTreeMap::from([("fc".to_string(), g.param(t))]);
        let (a, hsv, hcv) = (tap(&mut g, h), tap(&mut g, hs), tap(&mut g, hc));
        let dkd = dkd_loss(&mut g, &[sv], tv, &[], 0.5, true).unwrap();
        let pld = pld_loss(&mut g, &a, &hsv, Some(&hcv), &b, 2).unwrap();
        let l = total_loss(&mut g, dkd, pld, 0.0).unwrap();
        let grads = g.backward(l).unwrap();
        for v in b.values() {
            let gv = grads.get(*v).map(|g| g.to_vec()).unwrap_or_default();
            prop_assert!(gv.iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn backward_twice_is_identical() {
    let x = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
    let run = || {
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let ls = g.log_softmax(v).unwrap();
        let sq = g.square(ls);
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        grads.get(v).unwrap().to_vec()
    };
    assert_eq!(run(), run());
}
