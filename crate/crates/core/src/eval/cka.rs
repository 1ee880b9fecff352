use serde::{Deserialize, Serialize};

use crate::datagen::Experience;
use crate::error::{Error, Result};
use crate::models::{HeadSelector, MultiHeadModel};
use crate::numerics::{Float, Tensor};

/// One entry of a CKA report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaResult {
    pub value: f64,
    pub layer: String,
    pub reference_index: usize,
    pub model_index: usize,
}

fn centered(x: &Tensor<f64>) -> (usize, usize, Vec<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut data = x.data().to_vec();
    for j in 0..d {
        let mean = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
        for i in 0..n {
            data[i * d + j] -= mean;
        }
    }
    (n, d, data)
}

/// `AᵀB` or `ABᵀ` products of row-major `n×d` matrices.
fn gram(n: usize, da: usize, a: &[f64], db: usize, b: &[f64], over_features: bool) -> Vec<f64> {
    if over_features {
        let mut c = vec![0.0; da * db];
        f64::gemm(da, n, db, 1.0, a, true, b, false, 0.0, &mut c);
        c
    } else {
        debug_assert_eq!(da, db);
        let mut c = vec![0.0; n * n];
        f64::gemm(n, da, n, 1.0, a, false, b, true, 0.0, &mut c);
        c
    }
}

fn frob_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Linear CKA between `n×d1` and `n×d2` feature matrices.
///
/// `‖YᶜᵀXᶜ‖²_F / (‖XᶜᵀXᶜ‖_F·‖YᶜᵀYᶜ‖_F)`; when `n` is smaller than the
/// feature widths the same quantities are taken from `n×n` Gram matrices.
pub fn cka<T: Float>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let (xs, ys) = (x.shape(), y.shape());
    if xs.len() != 2 || ys.len() != 2 || xs[0] != ys[0] {
        return Err(Error::InvalidArgument(format!("cka needs n×d inputs with equal n, got {xs:?} and {ys:?}")));
    }
    if xs[0] < 2 {
        return Err(Error::InvalidArgument("cka needs at least two samples".into()));
    }
    let use_gram = xs[0] < xs[1].max(ys[1]);
    cka_path(&x.cast(), &y.cast(), use_gram)
}

fn cka_path(x: &Tensor<f64>, y: &Tensor<f64>, use_gram: bool) -> Result<f64> {
    let (n, dx, xc) = centered(x);
    let (_, dy, yc) = centered(y);
    let (cross, xx, yy) = if use_gram {
        let kx = gram(n, dx, &xc, dx, &xc, false);
        let ky = gram(n, dy, &yc, dy, &yc, false);
        let inner: f64 = kx.iter().zip(&ky).map(|(a, b)| a * b).sum();
        (inner, frob_sq(&kx).sqrt(), frob_sq(&ky).sqrt())
    } else {
        let yx = gram(n, dy, &yc, dx, &xc, true);
        let xx = gram(n, dx, &xc, dx, &xc, true);
        let yy = gram(n, dy, &yc, dy, &yc, true);
        (frob_sq(&yx), frob_sq(&xx).sqrt(), frob_sq(&yy).sqrt())
    };
    let denom = xx * yy;
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::InvalidArgument("cka of a zero-variance feature matrix".into()));
    }
    Ok((cross / denom).clamp(0.0, 1.0))
}

/// Per-layer CKA between the reference model and every model (the
/// reference included) on the experience's test images.
pub fn cka_stream_report<T: Float>(
    models: &[&MultiHeadModel<T>],
    reference_index: usize,
    exp: &Experience,
    taps: &[String],
) -> Result<Vec<CkaResult>> {
    if models.len() < 2 {
        return Err(Error::InvalidArgument("cka report needs at least two models".into()));
    }
    let reference = models
        .get(reference_index)
        .ok_or_else(|| Error::InvalidArgument(format!("reference index {reference_index} out of range")))?;
    let hash = reference.arch().hash();
    if let Some(m) = models.iter().find(|m| m.arch().hash() != hash) {
        return Err(Error::HashMismatch {
            expected: hash,
            found: m.arch().hash(),
        });
    }
    let images: Tensor<T> = exp.test.images.cast();
    let features = |m: &MultiHeadModel<T>| m.infer(&images, HeadSelector::All, taps, 256).map(|o| o.taps);
    let ref_taps = features(reference)?;
    let mut out = Vec::with_capacity(taps.len() * models.len());
    for layer in taps {
        for (k, m) in models.iter().enumerate() {
            let value = if k == reference_index {
                1.0
            } else {
                cka(&ref_taps[layer], &features(m)?[layer])?
            };
            out.push(CkaResult {
                value,
                layer: layer.clone(),
                reference_index,
                model_index: k,
            });
        }
    }
    Ok(out)
}

/// `layer,model_index,cka` rows.
pub fn cka_csv(results: &[CkaResult]) -> String {
    let mut s = String::from("layer,model_index,cka\n");
    for r in results {
        s.push_str(&format!("{},{},{:.6}\n", r.layer, r.model_index, r.value));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn random(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut r = RngStream::new(seed, "cka");
        Tensor::from_fn(&[n, d], |_| r.uniform_range(-1.0, 1.0))
    }

    #[test]
    fn self_similarity_is_one() {
        let x = random(12, 5, 0);
        assert!((cka(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gram_and_feature_paths_agree() {
        for (n, dx, dy) in [(6, 9, 11), (30, 4, 5)] {
            let (x, y) = (random(n, dx, 1), random(n, dy, 2));
            let a = cka_path(&x, &y, true).unwrap();
            let b = cka_path(&x, &y, false).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_variance_rejected() {
        let x = Tensor::<f64>::zeros(&[5, 3]);
        assert!(cka(&x, &random(5, 3, 0)).is_err());
        assert!(cka(&random(1, 3, 0), &random(1, 3, 1)).is_err());
    }
}
