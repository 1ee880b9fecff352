use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::{AugConfig, OodPool};
use crate::error::{Error, Result};
use crate::losses::{dkd_loss, pld_loss_paired, total_loss, ConsolidationConfig, Projections, StudentInit, LOGITS_TAP};
use crate::models::{build_model, HeadSelector, MultiHeadModel, SCModel};
use crate::numerics::{Bindings, Graph, Optimizer, ParameterSet, RngStream, Tensor, Var};

use super::derive_seed;
use super::messages::{Residency, SCMessage};

/// Loss terms of one consolidation batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dkd: f64,
    /// Zero when λ is zero; the latent term is then not computed.
    pub pld: f64,
    pub total: f64,
}

/// Result of one consolidation.
#[derive(Debug, Clone)]
pub struct Consolidated {
    pub model: MultiHeadModel<f32>,
    pub first_loss: LossBreakdown,
    pub last_loss: LossBreakdown,
}

/// Builds the student for step `i` according to `init`.
///
/// Old heads always come from the previous consolidated model and the new
/// head from the self-centered model; `init` chooses the backbone.
pub fn initial_student(
    prev_cl: Option<&MultiHeadModel<f32>>,
    sc: &SCModel<f32>,
    init: StudentInit,
    seed: u64,
) -> Result<MultiHeadModel<f32>> {
    let arch = sc.arch().clone();
    let backbone = match (init, prev_cl) {
        (StudentInit::PrevCl, Some(prev)) => prev.backbone().clone(),
        (StudentInit::PrevCl, None) | (StudentInit::Sc, _) => sc.backbone().clone(),
        (StudentInit::Random, _) => build_model::<f32>(&arch, seed, false)?.0,
    };
    let mut student = MultiHeadModel::new(arch, backbone)?;
    for h in prev_cl.map(|p| p.heads()).unwrap_or_default() {
        student.attach_head(h.params.clone(), h.task_id, h.classes.clone())?;
    }
    let new = sc.head();
    student.attach_head(new.params.clone(), new.task_id, new.classes.clone())?;
    Ok(student)
}

struct Teachers<'a> {
    sc: &'a MultiHeadModel<f32>,
    prev: Option<&'a MultiHeadModel<f32>>,
}

/// Forward graph of the consolidation objective on one batch.
fn build_loss(
    g: &mut Graph<f32>,
    student: &MultiHeadModel<f32>,
    bound: &crate::models::BoundModel,
    projections: Option<&Bindings>,
    teachers: &Teachers<'_>,
    x: &Tensor<f32>,
    cfg: &ConsolidationConfig,
) -> Result<(Var, Option<Var>, Var)> {
    let taps = cfg.taps_for(student.arch());
    let use_logits = taps.iter().any(|t| t == LOGITS_TAP);
    let layer_taps: Vec<String> = taps.into_iter().filter(|t| t != LOGITS_TAP).collect();
    let want_pld = cfg.lambda > 0.0;
    let feature_taps: &[String] = if want_pld { &layer_taps } else { &[] };

    let sc_out = teachers.sc.infer(x, HeadSelector::All, feature_taps, x.shape()[0])?;
    let prev_out = teachers
        .prev
        .map(|p| p.infer(x, HeadSelector::All, feature_taps, x.shape()[0]))
        .transpose()?;

    let xv = g.constant(x.clone());
    let out = student.forward_bound(g, bound, xv, HeadSelector::All, feature_taps)?;
    let heads: Vec<Var> = out.logits.iter().map(|(_, v)| *v).collect();
    let sc_logits = g.constant(sc_out.logits[0].1.clone());
    let prev_logits: Vec<Var> = prev_out
        .as_ref()
        .map(|o| o.logits.iter().map(|(_, t)| g.constant(t.clone())).collect())
        .unwrap_or_default();
    let dkd = dkd_loss(g, &heads, sc_logits, &prev_logits, cfg.temperature, cfg.t_squared_scaling)?;
    if !want_pld {
        return Ok((dkd, None, dkd));
    }

    let constants = |g: &mut Graph<f32>, taps: &BTreeMap<String, Tensor<f32>>| -> BTreeMap<String, Var> {
        taps.iter().map(|(k, t)| (k.clone(), g.constant(t.clone()))).collect()
    };
    let mut student_sc = out.taps.clone();
    let mut h_sc = constants(g, &sc_out.taps);
    let mut cl = prev_out.as_ref().map(|o| (out.taps.clone(), constants(g, &o.taps)));
    if use_logits {
        let (&newest, older) = heads.split_last().expect("student has a head");
        student_sc.insert(LOGITS_TAP.into(), newest);
        h_sc.insert(LOGITS_TAP.into(), sc_logits);
        if let Some((s, c)) = cl.as_mut() {
            let joined_student = g.concat_cols(older)?;
            let joined_prev = g.concat_cols(&prev_logits)?;
            s.insert(LOGITS_TAP.into(), joined_student);
            c.insert(LOGITS_TAP.into(), joined_prev);
        }
    }
    let task_index = heads.len();
    let proj = projections.ok_or_else(|| Error::InvalidArgument("latent distillation needs projections".into()))?;
    let pld = pld_loss_paired(g, &student_sc, &h_sc, cl.as_ref().map(|(s, c)| (s, c)), proj, task_index)?;
    let total = total_loss(g, dkd, pld, cfg.lambda)?;
    Ok((dkd, Some(pld), total))
}

fn breakdown(g: &Graph<f32>, dkd: Var, pld: Option<Var>, total: Var) -> LossBreakdown {
    LossBreakdown {
        dkd: g.value(dkd).item() as f64,
        pld: pld.map_or(0.0, |p| g.value(p).item() as f64),
        total: g.value(total).item() as f64,
    }
}

fn projections_for(student: &MultiHeadModel<f32>, cfg: &ConsolidationConfig) -> Result<Option<Projections<f32>>> {
    if cfg.lambda > 0.0 {
        let taps = cfg.taps_for(student.arch());
        Ok(Some(Projections::for_step(student.arch(), &taps, student.heads().len() - 1)?))
    } else {
        Ok(None)
    }
}

/// Value of the consolidation objective for `student` on batch `x`, with
/// fresh identity projections.
pub fn consolidation_loss(
    student: &MultiHeadModel<f32>,
    sc: &SCModel<f32>,
    prev_cl: Option<&MultiHeadModel<f32>>,
    x: &Tensor<f32>,
    cfg: &ConsolidationConfig,
) -> Result<LossBreakdown> {
    let proj = projections_for(student, cfg)?;
    let mut g = Graph::new();
    let bound = student.bind(&mut g, false);
    let pb = proj.as_ref().map(|p| p.bind(&mut g, false));
    let teachers = Teachers {
        sc: sc.as_multi_head(),
        prev: prev_cl,
    };
    let (dkd, pld, total) = build_loss(&mut g, student, &bound, pb.as_ref(), &teachers, x, cfg)?;
    Ok(breakdown(&g, dkd, pld, total))
}

/// Merges the previous consolidated model and one self-centered model into a
/// new consolidated model using only samples drawn from `pool`.
#[allow(clippy::too_many_arguments)]
pub fn consolidate(
    prev_cl: Option<&MultiHeadModel<f32>>,
    sc_msg: &SCMessage,
    pool: &OodPool,
    aug: &AugConfig,
    cfg: &ConsolidationConfig,
    seed: u64,
    residency: &Residency,
) -> Result<Consolidated> {
    cfg.validate()?;
    let _prev_slot = prev_cl.map(|_| residency.acquire()).transpose()?;
    let _sc_slot = residency.acquire()?;
    let sc = sc_msg.decode(prev_cl.map(|p| p.arch()))?;
    if let Some(prev) = prev_cl {
        if prev.head(sc.task_id()).is_some() {
            return Err(Error::DuplicateTask(sc.task_id()));
        }
    }
    let rng = RngStream::new(seed, "consolidate");
    let mut student = initial_student(prev_cl, &sc, cfg.student_init, derive_seed(seed, "student-init", 0))?;
    let mut proj = projections_for(&student, cfg)?;
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let teachers = Teachers {
        sc: sc.as_multi_head(),
        prev: prev_cl,
    };
    let shape = student.arch().image_shape();
    let mut first = None;
    let mut last = None;
    for step in 0..cfg.iterations {
        let x = pool.sample_batch(aug, shape, cfg.batch_size, &rng.split_index("batch", step as u64), 1)?;
        let mut g = Graph::new();
        let bound = student.bind(&mut g, true);
        let pb = proj.as_ref().map(|p| p.bind(&mut g, true));
        let (dkd, pld, total) = build_loss(&mut g, &student, &bound, pb.as_ref(), &teachers, &x, cfg)?;
        let losses = breakdown(&g, dkd, pld, total);
        if !losses.total.is_finite() {
            return Err(Error::InvalidArgument(format!("consolidation diverged at iteration {step}: {losses:?}")));
        }
        first.get_or_insert(losses);
        last = Some(losses);
        let grads = g.backward(total)?;
        student.zero_grad();
        student.accumulate_grads(&grads, &bound)?;
        let mut groups = student.param_groups_mut();
        let mut refs: Vec<(&str, &mut ParameterSet<f32>)> = groups.iter_mut().map(|(k, p)| (k.as_str(), &mut **p)).collect();
        if let (Some(p), Some(b)) = (proj.as_mut(), pb.as_ref()) {
            p.params_mut().zero_grad();
            p.params_mut().accumulate_grads(&grads, b)?;
            refs.push(("projections", p.params_mut()));
        }
        opt.step_groups(&mut refs)?;
    }
    student.zero_grad();
    Ok(Consolidated {
        model: student,
        first_loss: first.expect("at least one iteration"),
        last_loss: last.expect("at least one iteration"),
    })
}
