//! Analytic gradients against central finite differences (64-bit, step 1e-5).

use std::collections::BTreeMap;

use daclab_core::losses::{dkd_loss, kd_loss, pld_loss, pld_loss_paired, total_loss, Projections};
use daclab_core::models::{init_head, ArchSpec, BoundModel, HeadSelector, MultiHeadModel};
use daclab_core::numerics::gradcheck::check_gradients;
use daclab_core::numerics::{Padding, ParameterSet, RngStream, Tensor};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rand_tensor(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

fn params(entries: &[(&str, &[usize])], seed: u64) -> ParameterSet<f64> {
    let mut rng = RngStream::new(seed, "gradcheck");
    let mut p = ParameterSet::new();
    for (name, shape) in entries {
        p.insert(*name, rand_tensor(shape, &mut rng)).unwrap();
    }
    p
}

#[test]
fn elementwise_and_reductions() {
    for seed in 0..5 {
        let p = params(&[("a", &[3, 4]), ("b", &[3, 4]), ("r", &[4])], seed);
        let report = check_gradients(&p, STEP, |g, b| {
            let s = g.add(b["a"], b["b"])?;
            let d = g.sub(s, b["b"])?;
            let m = g.mul(d, b["b"])?;
            let r = g.add_row(m, b["r"])?;
            let e = g.exp(r);
            let q = g.square(e);
            let sc = g.scale(q, 0.3);
            let relu = g.relu(sc);
            let ls = g.log_softmax(relu)?;
            let t = g.transpose(ls)?;
            let rs = g.reshape(t, &[2, 6])?;
            let a = g.mean(rs);
            let sq = g.square(rs);
            let c = g.sum(sq);
            g.add(a, c)
        })
        .unwrap();
        assert!(report.max_rel_error < TOL, "{report:?}");
    }
}

#[test]
fn column_concatenation() {
    let p = params(&[("a", &[3, 2]), ("b", &[3, 4]), ("c", &[3, 1])], 11);
    let report = check_gradients(&p, STEP, |g, b| {
        let j = g.concat_cols(&[b["a"], b["b"], b["c"]])?;
        let w = g.constant(Tensor::from_fn(&[3, 7], |i| (i as f64 * 0.37).sin()));
        let m = g.mul(j, w)?;
        let sq = g.square(m);
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_error < TOL, "{report:?}");
}

#[test]
fn logits_tap_projection() {
    // Projections of unequal size: a 2-wide new head against the SC head and
    // two older 2-wide heads joined against the previous model's heads.
    let p = params(
        &[("new", &[4, 2]), ("old1", &[4, 2]), ("old2", &[4, 2]), ("logits/w_sc", &[2, 2]), ("logits/w_cl", &[4, 4])],
        12,
    );
    let mut rng = RngStream::new(12, "targets");
    let sc = rand_tensor(&[4, 2], &mut rng);
    let cl = rand_tensor(&[4, 4], &mut rng);
    let report = check_gradients(&p, STEP, |g, b| {
        let joined = g.concat_cols(&[b["old1"], b["old2"]])?;
        let scv = g.constant(sc.clone());
        let clv = g.constant(cl.clone());
        let tap = |v| BTreeMap::from([("logits".to_string(), v)]);
        pld_loss_paired(g, &tap(b["new"]), &tap(scv), Some((&tap(joined), &tap(clv))), b, 3)
    })
    .unwrap();
    assert!(report.max_rel_error < TOL, "{report:?}");
}

#[test]
fn matmul_all_transpose_combinations() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa: &[usize] = if ta { &[4, 3] } else { &[3, 4] };
        let sb: &[usize] = if tb { &[5, 4] } else { &[4, 5] };
        let p = params(&[("a", sa), ("b", sb)], 7);
        let report = check_gradients(&p, STEP, |g, b| {
            let c = g.matmul_t(b["a"], b["b"], ta, tb)?;
            let sq = g.square(c);
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < TOL, "{ta} {tb}: {report:?}");
    }
}

#[test]
fn conv_and_pool() {
    for (stride, pad) in [(1, Padding::Same), (1, Padding::Valid), (2, Padding::Same)] {
        let p = params(&[("x", &[2, 2, 6, 5]), ("w", &[3, 2, 3, 3]), ("b", &[3])], 3);
        let report = check_gradients(&p, STEP, |g, b| {
            let y = g.conv2d(b["x"], b["w"], Some(b["b"]), stride, pad)?;
            let z = g.max_pool2d(y, 2, 2)?;
            let sq = g.square(z);
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < TOL, "{stride} {pad:?}: {report:?}");
    }
}

#[test]
fn random_two_layer_mlp() {
    let arch = ArchSpec::mlp(5, vec![7, 6], 3);
    for seed in 0..4 {
        let model = MultiHeadModel::<f64>::random(arch.clone(), seed)
            .unwrap()
            .with_head(init_head(&arch, &RngStream::new(seed, "h")), 1, vec![0, 1, 2])
            .unwrap();
        let mut rng = RngStream::new(seed, "x");
        let x = rand_tensor(&[4, 5], &mut rng);
        let labels = [0usize, 2, 1, 1];
        let mut flat = ParameterSet::new();
        for (n, t) in model.backbone().iter() {
            flat.insert(format!("bb/{n}"), t.clone()).unwrap();
        }
        for (n, t) in model.heads()[0].params.iter() {
            flat.insert(format!("h/{n}"), t.clone()).unwrap();
        }
        let report = check_gradients(&flat, STEP, |g, b| {
            let xv = g.constant(x.clone());
            let mut h = xv;
            for l in ["hidden1", "hidden2"] {
                let z = g.matmul_t(h, b[&format!("bb/{l}.weight")], false, true)?;
                let z = g.add_row(z, b[&format!("bb/{l}.bias")])?;
                h = g.relu(z);
            }
            let z = g.matmul_t(h, b["h/weight"], false, true)?;
            let z = g.add_row(z, b["h/bias"])?;
            let ls = g.log_softmax(z)?;
            let onehot = Tensor::from_fn(&[4, 3], |i| if labels[i / 3] == i % 3 { -0.25 } else { 0.0 });
            let oh = g.constant(onehot);
            let picked = g.mul(ls, oh)?;
            Ok(g.sum(picked))
        })
        .unwrap();
        assert!(report.max_rel_error < TOL, "seed {seed}: {report:?}");
    }
}

fn distillation_check(arch: &ArchSpec, seed: u64) -> f64 {
    let student = MultiHeadModel::<f64>::random(arch.clone(), seed)
        .unwrap()
        .with_head(init_head(arch, &RngStream::new(seed, "h1")), 1, vec![0, 1])
        .unwrap()
        .with_head(init_head(arch, &RngStream::new(seed, "h2")), 2, vec![2, 3])
        .unwrap();
    let teacher = MultiHeadModel::<f64>::random(arch.clone(), 100 + seed)
        .unwrap()
        .with_head(init_head(arch, &RngStream::new(seed, "t1")), 1, vec![0, 1])
        .unwrap()
        .with_head(init_head(arch, &RngStream::new(seed, "t2")), 2, vec![2, 3])
        .unwrap();
    let mut rng = RngStream::new(seed, "x");
    let mut shape = vec![3];
    shape.extend_from_slice(&arch.input);
    let x = rand_tensor(&shape, &mut rng);
    let mut proj = Projections::<f64>::for_arch(arch, &arch.taps).unwrap();
    for (_, t) in proj.params_mut().iter_mut() {
        for v in t.data_mut() {
            *v += rng.uniform_range(-0.2, 0.2);
        }
    }
    let mut flat = ParameterSet::new();
    for (n, t) in student.backbone().iter() {
        let mut t = t.clone();
        // zero biases would put dead units exactly on the relu kink
        if n.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(0.05, 0.5));
        }
        flat.insert(format!("bb/{n}"), t).unwrap();
    }
    for h in student.heads() {
        for (n, t) in h.params.iter() {
            flat.insert(format!("h{}/{n}", h.task_id), t.clone()).unwrap();
        }
    }
    for (n, t) in proj.params().iter() {
        flat.insert(format!("p/{n}"), t.clone()).unwrap();
    }
    let report = check_gradients(&flat, STEP, |g, b| {
        let unflatten = |prefix: &str| -> BTreeMap<String, _> {
            b.iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|r| (r.to_string(), *v)))
                .collect()
        };
        let bound = BoundModel {
            backbone: unflatten("bb/"),
            heads: vec![unflatten("h1/"), unflatten("h2/")],
        };
        let xv = g.constant(x.clone());
        let out = student.forward_bound(g, &bound, xv, HeadSelector::All, &arch.taps)?;
        let t_out = teacher.forward(g, xv, HeadSelector::All)?;
        let sc = teacher.forward(g, xv, HeadSelector::Task(2))?;
        let heads: Vec<_> = out.logits.iter().map(|(_, v)| *v).collect();
        let kd = kd_loss(g, heads[0], t_out.logits[0].1, 0.5, true)?;
        let dkd = dkd_loss(g, &heads, sc.logits[0].1, &[t_out.logits[0].1], 0.5, true)?;
        let pld = pld_loss(g, &out.taps, &t_out.taps, Some(&t_out.taps), &unflatten("p/"), 2)?;
        let tot = total_loss(g, dkd, pld, 0.3)?;
        g.add(tot, kd)
    })
    .unwrap();
    assert!(report.checked > 0);
    report.max_rel_error
}

#[test]
fn distillation_losses_on_random_mlps() {
    let arch = ArchSpec::mlp(4, vec![5, 3], 2).with_taps(&["hidden1", "hidden2"]);
    for seed in 0..20 {
        let err = distillation_check(&arch, seed);
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn distillation_losses_on_random_cnns() {
    let arch = ArchSpec::smallcnn([1, 4, 4], [2, 3], 4, 2).with_taps(&["conv2", "fc"]);
    for seed in 0..4 {
        let err = distillation_check(&arch, seed);
        assert!(err < TOL, "seed {seed}: {err}");
    }
}
