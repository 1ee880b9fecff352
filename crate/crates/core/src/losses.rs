//! Distillation objectives used during consolidation.
//!
//! * [`kd_loss`]: tempered KL divergence from a teacher to a student head.
//! * [`dkd_loss`]: the new head matches the self-centered teacher, every
//!   older head matches the previous consolidated model.
//! * [`pld_loss`]: projected latent distillation. The student's activation at
//!   each tap is mapped through two trainable square matrices (identity at
//!   start) and compared to both teachers' activations, the previous model's
//!   term weighted by the number of tasks it already holds.
//! * [`total_loss`]: `dkd + λ·pld`, with λ applied once.
//! * [`cross_entropy`]: the local loss of self-centered training.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::models::ArchSpec;
use crate::numerics::{Bindings, Float, Graph, OptimizerConfig, ParameterSet, Tensor, Var};

/// Tempered KL(teacher ‖ student), averaged over the batch.
///
/// With `t_squared` the value is multiplied by `T²` so gradient magnitudes do
/// not shrink as the temperature grows.
pub fn kd_loss<T: Float>(
    g: &mut Graph<T>,
    student_logits: Var,
    teacher_logits: Var,
    temperature: f64,
    t_squared: bool,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let (ss, ts) = (g.shape(student_logits), g.shape(teacher_logits));
    if ss != ts || ss.len() != 2 {
        return Err(shape_err(
            "kd_loss",
            format!("student logits {ss:?} vs teacher logits {ts:?}"),
        ));
    }
    let batch = ss[0].max(1);
    let inv_t = T::of(1.0 / temperature);
    let s = g.scale(student_logits, inv_t);
    let t = g.scale(teacher_logits, inv_t);
    let log_ps = g.log_softmax(s)?;
    let log_pt = g.log_softmax(t)?;
    let pt = g.exp(log_pt);
    let diff = g.sub(log_pt, log_ps)?;
    let kl = g.mul(pt, diff)?;
    let total = g.sum(kl);
    let mut factor = 1.0 / batch as f64;
    if t_squared {
        factor *= temperature * temperature;
    }
    Ok(g.scale(total, T::of(factor)))
}

/// Mean cross-entropy of `logits` (`N×K`) against class indices.
pub fn cross_entropy<T: Float>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
        return Err(shape_err(
            "cross_entropy",
            format!("logits {s:?} with {} labels (max {:?})", labels.len(), labels.iter().max()),
        ));
    }
    let k = s[1];
    let scale = -1.0 / labels.len().max(1) as f64;
    let mut pick = vec![T::zero(); s[0] * k];
    for (i, &l) in labels.iter().enumerate() {
        pick[i * k + l] = T::of(scale);
    }
    let ls = g.log_softmax(logits)?;
    let mask = g.constant(Tensor::new(s, pick)?);
    let picked = g.mul(ls, mask)?;
    Ok(g.sum(picked))
}

/// Double distillation over the student's heads `1..=i`.
///
/// `student_heads[k]` is matched to `prev_cl[k]` for `k < i-1` and the last
/// head to the self-centered teacher. For `i = 1` `prev_cl` is empty.
pub fn dkd_loss<T: Float>(
    g: &mut Graph<T>,
    student_heads: &[Var],
    sc_logits: Var,
    prev_cl_logits: &[Var],
    temperature: f64,
    t_squared: bool,
) -> Result<Var> {
    let Some((&new_head, old_heads)) = student_heads.split_last() else {
        return Err(Error::InvalidArgument("student has no heads".into()));
    };
    if old_heads.len() != prev_cl_logits.len() {
        return Err(Error::InvalidArgument(format!(
            "student has {} heads but the previous model provides {} outputs (need {})",
            student_heads.len(),
            prev_cl_logits.len(),
            student_heads.len() - 1
        )));
    }
    let mut total = kd_loss(g, new_head, sc_logits, temperature, t_squared)?;
    for (&s, &t) in old_heads.iter().zip(prev_cl_logits) {
        let term = kd_loss(g, s, t, temperature, t_squared)?;
        total = g.add(total, term)?;
    }
    Ok(total)
}

/// Name of the pseudo-tap that distills the heads' outputs.
///
/// For the self-centered term the student's newest head is compared with the
/// teacher's single head; for the previous-model term the student's older
/// heads, joined side by side, are compared with the previous model's heads.
pub const LOGITS_TAP: &str = "logits";

/// Trainable square projections, one `(W_sc, W_cl)` pair per tap.
///
/// The two matrices of a pair may differ in size when the compared
/// activations do (the logits tap). A width of zero omits the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections<T: Float> {
    params: ParameterSet<T>,
    taps: Vec<(String, usize, usize)>,
}

impl<T: Float> Projections<T> {
    /// Identity-initialized pairs for `(tap, width)` entries.
    pub fn identity(taps: &[(String, usize)]) -> Self {
        let sized: Vec<_> = taps.iter().map(|(t, w)| (t.clone(), *w, *w)).collect();
        Self::identity_sized(&sized)
    }

    /// Identity-initialized pairs for `(tap, sc_width, cl_width)` entries.
    pub fn identity_sized(taps: &[(String, usize, usize)]) -> Self {
        let mut params = ParameterSet::new();
        for (tap, sc, cl) in taps {
            if *sc > 0 {
                params.insert(format!("{tap}/w_sc"), Tensor::eye(*sc)).expect("unique taps");
            }
            if *cl > 0 {
                params.insert(format!("{tap}/w_cl"), Tensor::eye(*cl)).expect("unique taps");
            }
        }
        Self {
            params,
            taps: taps.to_vec(),
        }
    }

    /// Identity pairs sized from an architecture's layer widths.
    pub fn for_arch(arch: &ArchSpec, taps: &[String]) -> Result<Self> {
        let mut sized = Vec::with_capacity(taps.len());
        for t in taps {
            let w = arch
                .layer_width(t)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown tap `{t}`")))?;
            sized.push((t.clone(), w));
        }
        Ok(Self::identity(&sized))
    }

    /// Projections for a consolidation whose previous model holds
    /// `prev_heads` heads. Accepts [`LOGITS_TAP`]; the previous-model
    /// matrices are omitted when `prev_heads == 0`.
    pub fn for_step(arch: &ArchSpec, taps: &[String], prev_heads: usize) -> Result<Self> {
        let mut sized = Vec::with_capacity(taps.len());
        for t in taps {
            let (sc, cl) = if t == LOGITS_TAP {
                (arch.head_width, prev_heads * arch.head_width)
            } else {
                let w = arch
                    .layer_width(t)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown tap `{t}`")))?;
                (w, if prev_heads > 0 { w } else { 0 })
            };
            sized.push((t.clone(), sc, cl));
        }
        Ok(Self::identity_sized(&sized))
    }

    /// `(tap, sc_width, cl_width)` entries.
    pub fn taps(&self) -> &[(String, usize, usize)] {
        &self.taps
    }

    pub fn w_sc(&self, tap: &str) -> Option<&Tensor<T>> {
        self.params.get(&format!("{tap}/w_sc"))
    }

    pub fn w_cl(&self, tap: &str) -> Option<&Tensor<T>> {
        self.params.get(&format!("{tap}/w_cl"))
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bindings {
        g.bind(&self.params, trainable)
    }
}

fn projected_sq_error<T: Float>(g: &mut Graph<T>, h: Var, w: Var, target: Var, tap: &str) -> Result<Var> {
    let (hs, ws, ts) = (g.shape(h), g.shape(w), g.shape(target));
    if hs.len() != 2 || ws != [hs[1], hs[1]] || ts != hs {
        return Err(shape_err(
            "pld_loss",
            format!("tap `{tap}`: student {hs:?}, projection {ws:?}, teacher {ts:?}"),
        ));
    }
    // Row-wise W·h.
    let proj = g.matmul_t(h, w, false, true)?;
    let diff = g.sub(proj, target)?;
    let sq = g.square(diff);
    Ok(g.sum(sq))
}

/// Projected latent distillation at step `task_index` (1-based).
///
/// Sum over taps of `‖W_sc·h − h_sc‖² + (i−1)·‖W_cl·h − h_cl‖²`, averaged
/// over the batch. The previous model's activations may be omitted at `i = 1`.
pub fn pld_loss<T: Float>(
    g: &mut Graph<T>,
    h_student: &BTreeMap<String, Var>,
    h_sc: &BTreeMap<String, Var>,
    h_cl: Option<&BTreeMap<String, Var>>,
    projections: &Bindings,
    task_index: usize,
) -> Result<Var> {
    pld_loss_paired(g, h_student, h_sc, h_cl.map(|c| (h_student, c)), projections, task_index)
}

/// [`pld_loss`] where the student activation compared with the previous
/// model may differ from the one compared with the self-centered teacher.
pub fn pld_loss_paired<T: Float>(
    g: &mut Graph<T>,
    student_for_sc: &BTreeMap<String, Var>,
    h_sc: &BTreeMap<String, Var>,
    cl: Option<(&BTreeMap<String, Var>, &BTreeMap<String, Var>)>,
    projections: &Bindings,
    task_index: usize,
) -> Result<Var> {
    if task_index == 0 {
        return Err(Error::InvalidArgument("task index is 1-based".into()));
    }
    let same_keys = |a: &BTreeMap<String, Var>| a.keys().eq(student_for_sc.keys());
    if !same_keys(h_sc) || cl.is_some_and(|(s, c)| !same_keys(s) || !same_keys(c)) {
        return Err(Error::InvalidArgument(format!(
            "tap sets differ: student {:?}, sc {:?}, cl {:?}",
            student_for_sc.keys().collect::<Vec<_>>(),
            h_sc.keys().collect::<Vec<_>>(),
            cl.map(|(_, m)| m.keys().collect::<Vec<_>>())
        )));
    }
    if task_index > 1 && cl.is_none() {
        return Err(Error::InvalidArgument(format!(
            "step {task_index} needs the previous model's activations"
        )));
    }
    let projection = |tap: &str, which: &str| -> Result<Var> {
        projections
            .get(&format!("{tap}/{which}"))
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no {which} projection for tap `{tap}`")))
    };
    let mut total: Option<Var> = None;
    let mut batch = 1;
    for (tap, &h) in student_for_sc {
        batch = g.shape(h).first().copied().unwrap_or(1).max(1);
        let mut term = projected_sq_error(g, h, projection(tap, "w_sc")?, h_sc[tap], tap)?;
        if task_index > 1 {
            let (student_cl, h_cl) = cl.expect("checked");
            let e = projected_sq_error(g, student_cl[tap], projection(tap, "w_cl")?, h_cl[tap], tap)?;
            let e = g.scale(e, T::of((task_index - 1) as f64));
            term = g.add(term, e)?;
        }
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(T::zero())),
    };
    Ok(g.scale(total, T::of(1.0 / batch as f64)))
}

/// `dkd + λ·pld`.
pub fn total_loss<T: Float>(g: &mut Graph<T>, dkd: Var, pld: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    let weighted = g.scale(pld, T::of(lambda));
    g.add(dkd, weighted)
}

/// Scalar form of [`total_loss`].
pub fn combine(dkd: f64, pld: f64, lambda: f64) -> f64 {
    dkd + lambda * pld
}

/// How the consolidated student is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    /// Copy the previous consolidated model (the self-centered model at step 1).
    PrevCl,
    /// Copy the self-centered backbone.
    Sc,
    /// Fresh random backbone.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdDirection {
    /// KL(teacher ‖ student).
    TeacherToStudent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsolidationConfig {
    pub lambda: f64,
    pub temperature: f64,
    /// Layers for latent distillation; empty means the architecture's taps plus `logits`.
    pub taps: Vec<String>,
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub student_init: StudentInit,
    pub kd_direction: KdDirection,
    pub t_squared_scaling: bool,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            temperature: 0.5,
            taps: Vec::new(),
            iterations: 5000,
            batch_size: 64,
            optimizer: OptimizerConfig::adam(1e-4),
            student_init: StudentInit::PrevCl,
            kd_direction: KdDirection::TeacherToStudent,
            t_squared_scaling: true,
        }
    }
}

impl ConsolidationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("consolidation iterations must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("consolidation batch size must be >= 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        self.optimizer.validate()
    }

    /// Tap layers in effect for `arch`, possibly including [`LOGITS_TAP`].
    pub fn taps_for(&self, arch: &ArchSpec) -> Vec<String> {
        if self.taps.is_empty() {
            let mut taps = arch.taps.clone();
            taps.push(LOGITS_TAP.to_string());
            taps
        } else {
            self.taps.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn mat(g: &mut Graph<f64>, rows: usize, data: &[f64]) -> Var {
        let cols = data.len() / rows;
        g.constant(Tensor::new(vec![rows, cols], data.to_vec()).unwrap())
    }

    /// KL(p‖q) over explicit probability vectors.
    fn kl(p: &[f64], q: &[f64]) -> f64 {
        p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
    }

    #[test]
    fn kd_identical_logits_is_zero() {
        for t in [0.5, 1.0, 4.0] {
            let mut g = Graph::new();
            let s = mat(&mut g, 2, &[0.3, -1.0, 2.0, 0.1, 0.0, 5.0]);
            let tt = mat(&mut g, 2, &[0.3, -1.0, 2.0, 0.1, 0.0, 5.0]);
            let l = kd_loss(&mut g, s, tt, t, true).unwrap();
            assert!(g.value(l).item().abs() < 1e-7);
        }
    }

    #[test]
    fn kd_shift_invariant() {
        let mut g = Graph::new();
        let s = mat(&mut g, 1, &[0.3, -1.0, 2.0]);
        let t = mat(&mut g, 1, &[7.3, 6.0, 9.0]);
        let l = kd_loss(&mut g, s, t, 1.0, true).unwrap();
        assert!(g.value(l).item().abs() < 1e-7);
    }

    #[test]
    fn kd_against_scalar_oracle() {
        // teacher probs (0.75, 0.25), student (0.5, 0.5)
        let mut g = Graph::new();
        let s = mat(&mut g, 1, &[0.0, 0.0]);
        let t = mat(&mut g, 1, &[3f64.ln(), 0.0]);
        let l = kd_loss(&mut g, s, t, 1.0, true).unwrap();
        let expect = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((expect - kl(&[0.75, 0.25], &[0.5, 0.5])).abs() < 1e-15);
        assert!((g.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn kd_temperature_scaling() {
        let mut g = Graph::new();
        let s = mat(&mut g, 1, &[0.0, 1.0]);
        let t = mat(&mut g, 1, &[1.0, 0.0]);
        let plain = kd_loss(&mut g, s, t, 2.0, false).unwrap();
        let scaled = kd_loss(&mut g, s, t, 2.0, true).unwrap();
        assert!((g.value(scaled).item() - 4.0 * g.value(plain).item()).abs() < 1e-12);
    }

    #[test]
    fn kd_shape_mismatch() {
        let mut g = Graph::new();
        let s = mat(&mut g, 1, &[0.0, 1.0]);
        let t = mat(&mut g, 1, &[1.0, 0.0, 2.0]);
        assert!(kd_loss(&mut g, s, t, 1.0, true).unwrap_err().to_string().starts_with("kd_loss"));
        assert!(kd_loss(&mut g, s, s, 0.0, true).is_err());
    }

    #[test]
    fn dkd_sums_independent_terms() {
        let mut g = Graph::new();
        let s1 = mat(&mut g, 1, &[0.0, 0.0]);
        let s2 = mat(&mut g, 1, &[1.0, 0.0]);
        let cl1 = mat(&mut g, 1, &[3f64.ln(), 0.0]);
        let sc = mat(&mut g, 1, &[0.0, 1.0]);
        let d = dkd_loss(&mut g, &[s1, s2], sc, &[cl1], 1.0, false).unwrap();
        let soft = |a: f64, b: f64| {
            let z = a.exp() + b.exp();
            [a.exp() / z, b.exp() / z]
        };
        let a = kl(&[0.75, 0.25], &soft(0.0, 0.0));
        let b = kl(&soft(0.0, 1.0), &soft(1.0, 0.0));
        assert!((g.value(d).item() - (a + b)).abs() < 1e-12);
    }

    #[test]
    fn dkd_single_task_has_only_sc_term() {
        let mut g = Graph::new();
        let s = mat(&mut g, 2, &[0.2, 0.1, -0.3, 0.9]);
        let d = dkd_loss(&mut g, &[s], s, &[], 0.5, true).unwrap();
        assert!(g.value(d).item().abs() < 1e-7);
        assert!(dkd_loss(&mut g, &[s, s], s, &[], 0.5, true).is_err());
        assert!(dkd_loss(&mut g, &[], s, &[], 0.5, true).is_err());
    }

    fn taps(g: &mut Graph<f64>, rows: usize, data: &[f64]) -> BTreeMap<String, Var> {
        let v = mat(g, rows, data);
        BTreeMap::from([("fc".to_string(), v)])
    }

    #[test]
    fn pld_identity_case_is_zero() {
        for i in [1, 2, 5] {
            let mut g = Graph::new();
            let h = taps(&mut g, 2, &[0.1, 0.4, -0.2, 1.0]);
            let p = Projections::<f64>::identity(&[("fc".into(), 2)]);
            let pb = p.bind(&mut g, true);
            let l = pld_loss(&mut g, &h, &h, Some(&h), &pb, i).unwrap();
            assert_eq!(g.value(l).item(), 0.0);
        }
    }

    #[test]
    fn pld_first_step_arithmetic() {
        let mut g = Graph::new();
        let hs = taps(&mut g, 1, &[1.0, 0.0]);
        let hsc = taps(&mut g, 1, &[0.0, 1.0]);
        let hcl = taps(&mut g, 1, &[5.0, 5.0]);
        let p = Projections::<f64>::identity(&[("fc".into(), 2)]);
        let pb = p.bind(&mut g, true);
        let l = pld_loss(&mut g, &hs, &hsc, Some(&hcl), &pb, 1).unwrap();
        assert_eq!(g.value(l).item(), 2.0);
        let l = pld_loss(&mut g, &hs, &hsc, None, &pb, 1).unwrap();
        assert_eq!(g.value(l).item(), 2.0);
        assert!(pld_loss(&mut g, &hs, &hsc, None, &pb, 2).is_err());
    }

    #[test]
    fn pld_dimension_mismatch() {
        let mut g = Graph::new();
        let hs = taps(&mut g, 1, &[1.0, 0.0]);
        let p = Projections::<f64>::identity(&[("fc".into(), 3)]);
        let pb = p.bind(&mut g, true);
        let err = pld_loss(&mut g, &hs, &hs, None, &pb, 1).unwrap_err();
        assert!(err.to_string().starts_with("pld_loss"), "{err}");
    }

    #[test]
    fn pld_matches_dense_oracle() {
        let (b, d, i) = (3, 4, 3);
        let mut r = RngStream::new(8, "pld");
        let mut draw = |n: usize| (0..n).map(|_| r.uniform_range(-1.0, 1.0)).collect::<Vec<_>>();
        let (hs, hsc, hcl) = (draw(b * d), draw(b * d), draw(b * d));
        let (wsc, wcl) = (draw(d * d), draw(d * d));
        // Dense evaluation, one sample at a time.
        let mut expect = 0.0;
        for n in 0..b {
            let h = &hs[n * d..(n + 1) * d];
            for (w, target, weight) in [(&wsc, &hsc, 1.0), (&wcl, &hcl, (i - 1) as f64)] {
                for row in 0..d {
                    let wh: f64 = (0..d).map(|c| w[row * d + c] * h[c]).sum();
                    expect += weight * (wh - target[n * d + row]).powi(2);
                }
            }
        }
        expect /= b as f64;
        let mut g = Graph::new();
        let m_hs = taps(&mut g, b, &hs);
        let m_sc = taps(&mut g, b, &hsc);
        let m_cl = taps(&mut g, b, &hcl);
        let mut p = Projections::<f64>::identity(&[("fc".into(), d)]);
        p.params_mut().get_mut("fc/w_sc").unwrap().data_mut().copy_from_slice(&wsc);
        p.params_mut().get_mut("fc/w_cl").unwrap().data_mut().copy_from_slice(&wcl);
        let pb = p.bind(&mut g, true);
        let l = pld_loss(&mut g, &m_hs, &m_sc, Some(&m_cl), &pb, i).unwrap();
        assert!((g.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn total_loss_values() {
        assert!((combine(0.4, 3.0, 0.01) - 0.43).abs() < 1e-15);
        assert_eq!(combine(0.4, 0.0, 0.01), 0.4);
        let mut g = Graph::<f64>::new();
        let dkd = g.constant(Tensor::scalar(0.123456789));
        let pld = g.constant(Tensor::scalar(17.0));
        let t = total_loss(&mut g, dkd, pld, 0.0).unwrap();
        assert_eq!(g.value(t).item().to_bits(), 0.123456789f64.to_bits());
        assert!(total_loss(&mut g, dkd, pld, -1.0).is_err());
    }

    #[test]
    fn projections_start_at_identity() {
        let arch = ArchSpec::smallcnn([3, 8, 8], [4, 6], 10, 2).with_taps(&["conv2", "fc"]);
        let p = Projections::<f32>::for_arch(&arch, &arch.taps).unwrap();
        assert_eq!(p.w_sc("conv2").unwrap().data(), Tensor::<f32>::eye(24).data());
        assert_eq!(p.w_cl("fc").unwrap().data(), Tensor::<f32>::eye(10).data());
        assert_eq!(p.w_cl("fc").unwrap().shape(), &[10, 10]);
        assert!(Projections::<f32>::for_arch(&arch, &["nope".into()]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ConsolidationConfig::default().validate().is_ok());
        let bad = ConsolidationConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ConsolidationConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[2, 4]));
        let l = cross_entropy(&mut g, z, &[0, 3]).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&mut g, z, &[0, 4]).is_err());
    }
}
