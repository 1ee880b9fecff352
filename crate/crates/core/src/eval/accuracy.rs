use serde::{Deserialize, Serialize};

use crate::datagen::Experience;
use crate::error::{Error, Result};
use crate::models::{HeadSelector, MultiHeadModel};
use crate::numerics::{Float, Tensor};

/// `A[t][i]`: accuracy on task `i` after step `t` (both 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            rows: (1..=n_tasks).map(|t| vec![None; t]).collect(),
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.rows.len()
    }

    fn check(&self, t: usize, i: usize) -> Result<()> {
        if t == 0 || i == 0 || t > self.rows.len() || i > t {
            return Err(Error::InvalidArgument(format!(
                "A[{t}][{i}] is outside a {n}-task lower-triangular matrix",
                n = self.rows.len()
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, t: usize, i: usize, accuracy: f64) -> Result<()> {
        self.check(t, i)?;
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::InvalidArgument(format!("accuracy {accuracy} outside [0, 1]")));
        }
        self.rows[t - 1][i - 1] = Some(accuracy);
        Ok(())
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.check(t, i).ok()?;
        self.rows[t - 1][i - 1]
    }

    fn entry(&self, t: usize, i: usize) -> Result<f64> {
        self.check(t, i)?;
        self.rows[t - 1][i - 1].ok_or_else(|| Error::InvalidArgument(format!("A[{t}][{i}] has not been measured")))
    }

    /// `(1/t)·Σ_{i≤t} A[t][i]`.
    pub fn average_accuracy(&self, t: usize) -> Result<f64> {
        let mut sum = 0.0;
        for i in 1..=t {
            sum += self.entry(t, i)?;
        }
        Ok(sum / t as f64)
    }

    /// `A[i][i] − A[T][i]`; negative values mean backward transfer.
    pub fn forgetting(&self, i: usize, t_final: usize) -> Result<f64> {
        if i > t_final {
            return Err(Error::InvalidArgument(format!("forgetting needs i <= T, got i={i}, T={t_final}")));
        }
        Ok(self.entry(i, i)? - self.entry(t_final, i)?)
    }

    /// Mean forgetting over tasks `1..T` (the last task cannot be forgotten yet).
    pub fn mean_forgetting(&self, t_final: usize) -> Result<f64> {
        if t_final < 2 {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for i in 1..t_final {
            sum += self.forgetting(i, t_final)?;
        }
        Ok(sum / (t_final - 1) as f64)
    }

    /// `t,i,accuracy` rows for every measured entry, six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i,accuracy\n");
        for (t, row) in self.rows.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    out.push_str(&format!("{},{},{:.6}\n", t + 1, i + 1, v));
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("t,i,accuracy") {
            return Err(Error::InvalidArgument("accuracy matrix CSV must start with `t,i,accuracy`".into()));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::InvalidArgument(format!("accuracy matrix CSV line {}: `{line}`", n + 2));
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let t: usize = parts[0].trim().parse().map_err(|_| bad())?;
            let i: usize = parts[1].trim().parse().map_err(|_| bad())?;
            let a: f64 = parts[2].trim().parse().map_err(|_| bad())?;
            entries.push((t, i, a));
        }
        let n = entries.iter().map(|e| e.0).max().unwrap_or(0);
        let mut m = Self::new(n);
        for (t, i, a) in entries {
            m.set(t, i, a)?;
        }
        Ok(m)
    }
}

/// How predictions are read off a multi-head model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// The head of the sample's task.
    TaskAware,
    /// Mean of per-head softmax distributions; heads must share one class set.
    AgnosticAvg,
    /// Argmax over all heads' logits side by side, mapped to global labels.
    AgnosticConcat,
}

fn softmax_rows(logits: &Tensor<f64>) -> Vec<f64> {
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Global-label predictions of `model` on `images`.
pub fn predict<T: Float>(model: &MultiHeadModel<T>, images: &Tensor<T>, task_id: u32, mode: InferenceMode) -> Result<Vec<u32>> {
    if model.heads().is_empty() {
        return Err(Error::InvalidArgument("model has no heads".into()));
    }
    let selector = match mode {
        InferenceMode::TaskAware => HeadSelector::Task(task_id),
        _ => HeadSelector::All,
    };
    let out = model.infer(images, selector, &[], 256)?;
    let logits: Vec<Tensor<f64>> = out.logits.iter().map(|(_, t)| t.cast()).collect();
    let n = images.shape()[0];
    match mode {
        InferenceMode::TaskAware => {
            let head = model.head(task_id).ok_or(Error::UnknownTask(task_id))?;
            Ok(logits[0].argmax_rows().into_iter().map(|k| head.classes[k]).collect())
        }
        InferenceMode::AgnosticAvg => {
            let classes = &model.heads()[0].classes;
            if model.heads().iter().any(|h| &h.classes != classes) {
                return Err(Error::InvalidArgument(
                    "agnostic_avg needs heads over one shared class set; heads here predict different classes, use agnostic_concat".into(),
                ));
            }
            let k = classes.len();
            let mut mean = vec![0.0; n * k];
            for l in &logits {
                for (m, p) in mean.iter_mut().zip(softmax_rows(l)) {
                    *m += p / logits.len() as f64;
                }
            }
            Ok(mean.chunks(k).map(|r| classes[argmax(r)]).collect())
        }
        InferenceMode::AgnosticConcat => {
            let labels: Vec<u32> = model.heads().iter().flat_map(|h| h.classes.iter().copied()).collect();
            let widths: Vec<usize> = logits.iter().map(|l| l.shape()[1]).collect();
            let total: usize = widths.iter().sum();
            let mut joined = Vec::with_capacity(n * total);
            for r in 0..n {
                for (l, &w) in logits.iter().zip(&widths) {
                    joined.extend_from_slice(&l.data()[r * w..(r + 1) * w]);
                }
            }
            Ok(joined.chunks(total).map(|r| labels[argmax(r)]).collect())
        }
    }
}

/// Fraction of `exp.test` classified correctly.
pub fn task_accuracy<T: Float>(model: &MultiHeadModel<T>, exp: &Experience, mode: InferenceMode) -> Result<f64> {
    let images: Tensor<T> = exp.test.images.cast();
    labeled_accuracy(model, &images, &exp.test.labels, exp.task_id, mode)
}

pub fn labeled_accuracy<T: Float>(
    model: &MultiHeadModel<T>,
    images: &Tensor<T>,
    labels: &[u32],
    task_id: u32,
    mode: InferenceMode,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let pred = predict(model, images, task_id, mode)?;
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

/// Fraction of rows where two logit tensors share their argmax.
pub fn argmax_agreement<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() || a.shape().len() != 2 || a.shape()[0] == 0 {
        return Err(Error::InvalidArgument(format!("agreement of {:?} and {:?}", a.shape(), b.shape())));
    }
    let (pa, pb) = (a.argmax_rows(), b.argmax_rows());
    Ok(pa.iter().zip(&pb).filter(|(x, y)| x == y).count() as f64 / pa.len() as f64)
}
