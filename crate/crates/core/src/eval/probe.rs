use serde::{Deserialize, Serialize};

use crate::datagen::Experience;
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::models::{HeadSelector, MultiHeadModel};
use crate::numerics::{Float, Graph, Optimizer, OptimizerConfig, ParameterSet, RngStream, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    /// Training stops once the full-batch loss changes by less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            tolerance: 1e-6,
            max_iterations: 3000,
        }
    }
}

/// Outcome of a probe fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub iterations: usize,
    pub final_loss: f64,
}

fn standardize(train: &mut Tensor<f64>, test: &mut Tensor<f64>) {
    let (n, d) = (train.shape()[0], train.shape()[1]);
    for j in 0..d {
        let col = (0..n).map(|i| train.data()[i * d + j]);
        let mean = col.clone().sum::<f64>() / n as f64;
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
        for t in [&mut *train, &mut *test] {
            let rows = t.shape()[0];
            let data = t.data_mut();
            for i in 0..rows {
                data[i * d + j] = (data[i * d + j] - mean) * scale;
            }
        }
    }
}

/// Multinomial logistic regression on fixed features, full-batch Adam.
pub fn probe_features(
    train_x: &Tensor<f64>,
    train_y: &[u32],
    test_x: &Tensor<f64>,
    test_y: &[u32],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport> {
    if train_y.is_empty() || test_y.is_empty() || train_x.shape().len() != 2 {
        return Err(Error::InvalidArgument("linear probe needs non-empty 2-D feature sets".into()));
    }
    if train_x.shape()[0] != train_y.len() || test_x.shape()[0] != test_y.len() || train_x.shape()[1] != test_x.shape()[1] {
        return Err(Error::InvalidArgument(format!(
            "probe features {:?}/{:?} vs labels {}/{}",
            train_x.shape(),
            test_x.shape(),
            train_y.len(),
            test_y.len()
        )));
    }
    let mut classes: Vec<u32> = train_y.iter().chain(test_y).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let index = |l: &u32| classes.binary_search(l).expect("collected above");
    let ytr: Vec<usize> = train_y.iter().map(index).collect();
    let (mut xtr, mut xte) = (train_x.clone(), test_x.clone());
    standardize(&mut xtr, &mut xte);

    let (d, k) = (xtr.shape()[1], classes.len());
    let mut rng = RngStream::new(seed, "probe-init");
    let mut params = ParameterSet::new();
    params.insert("weight", Tensor::from_fn(&[k, d], |_| rng.uniform_range(-1e-3, 1e-3)))?;
    params.insert("bias", Tensor::zeros(&[k]))?;
    let mut opt = Optimizer::new(OptimizerConfig::adam(cfg.learning_rate))?;
    let logits = |g: &mut Graph<f64>, x: &Tensor<f64>, p: &crate::numerics::Bindings| -> Result<_> {
        let xv = g.constant(x.clone());
        let z = g.matmul_t(xv, p["weight"], false, true)?;
        g.add_row(z, p["bias"])
    };
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let mut loss_value = f64::NAN;
    while iterations < cfg.max_iterations {
        let mut g = Graph::new();
        let b = g.bind(&params, true);
        let z = logits(&mut g, &xtr, &b)?;
        let loss = cross_entropy(&mut g, z, &ytr)?;
        loss_value = g.value(loss).item();
        if (prev - loss_value).abs() < cfg.tolerance {
            break;
        }
        prev = loss_value;
        let grads = g.backward(loss)?;
        params.zero_grad();
        params.accumulate_grads(&grads, &b)?;
        opt.step(&mut params)?;
        iterations += 1;
    }
    let mut g = Graph::new();
    let b = g.bind(&params, false);
    let z = logits(&mut g, &xte, &b)?;
    let pred = g.value(z).argmax_rows();
    let correct = pred.iter().zip(test_y).filter(|(p, y)| classes[**p] == **y).count();
    Ok(ProbeReport {
        accuracy: correct as f64 / test_y.len() as f64,
        iterations,
        final_loss: loss_value,
    })
}

/// Frozen-feature probe over the union of all experiences' classes.
pub fn linear_probe<T: Float>(
    model: &MultiHeadModel<T>,
    tap: &str,
    experiences: &[Experience],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport> {
    if model.arch().layer_width(tap).is_none() {
        return Err(Error::InvalidArgument(format!("unknown probe tap `{tap}`")));
    }
    let taps = [tap.to_string()];
    let extract = |pick: fn(&Experience) -> &crate::datagen::LabeledSet| -> Result<(Tensor<f64>, Vec<u32>)> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut width = 0;
        for e in experiences {
            let set = pick(e);
            if set.is_empty() {
                continue;
            }
            let out = model.infer(&set.images.cast(), HeadSelector::All, &taps, 256)?;
            let f = &out.taps[tap];
            width = f.shape()[1];
            rows.extend(f.data().iter().map(|v| v.as_f64()));
            labels.extend_from_slice(&set.labels);
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("linear probe on an empty feature set".into()));
        }
        Ok((Tensor::new(vec![labels.len(), width], rows)?, labels))
    };
    let (xtr, ytr) = extract(|e| &e.train)?;
    let (xte, yte) = extract(|e| &e.test)?;
    probe_features(&xtr, &ytr, &xte, &yte, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_features_are_learned() {
        let mut r = RngStream::new(0, "p");
        let mut make = |n: usize| {
            let labels: Vec<u32> = (0..n as u32).map(|i| i % 3).collect();
            let x = Tensor::from_fn(&[n, 4], |k| {
                let (i, j) = (k / 4, k % 4);
                (if j == labels[i] as usize { 2.0 } else { 0.0 }) + r.uniform_range(-0.3, 0.3)
            });
            (x, labels)
        };
        let (xtr, ytr) = make(60);
        let (xte, yte) = make(30);
        let rep = probe_features(&xtr, &ytr, &xte, &yte, &ProbeConfig::default(), 1).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        let again = probe_features(&xtr, &ytr, &xte, &yte, &ProbeConfig::default(), 1).unwrap();
        assert_eq!(rep, again);
    }

    #[test]
    fn empty_sets_rejected() {
        let x = Tensor::<f64>::zeros(&[0, 3]);
        assert!(probe_features(&x, &[], &x, &[], &ProbeConfig::default(), 0).is_err());
    }
}
