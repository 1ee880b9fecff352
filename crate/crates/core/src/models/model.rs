use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Bindings, Float, Gradients, Graph, Padding, ParameterSet, RngStream, Tensor, Var};

use super::{ArchKind, ArchSpec};

/// Which heads a forward pass evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSelector {
    Task(u32),
    All,
}

/// A per-task linear classifier on the shared representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T: Float> {
    pub task_id: u32,
    /// Global labels, in output-unit order.
    pub classes: Vec<u32>,
    /// `weight` (`width × features`) and `bias` (`width`).
    pub params: ParameterSet<T>,
}

/// Logits of the selected heads plus the recorded tap activations.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub logits: Vec<(u32, Var)>,
    /// Tap name → `batch × features` activation.
    pub taps: BTreeMap<String, Var>,
}

/// Leaves of a model bound into a graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub backbone: Bindings,
    pub heads: Vec<Bindings>,
}

/// Materialized outputs of an inference pass.
#[derive(Debug, Clone)]
pub struct Inference<T: Float> {
    pub logits: Vec<(u32, Tensor<T>)>,
    pub taps: BTreeMap<String, Tensor<T>>,
}

fn uniform_tensor<T: Float>(shape: &[usize], bound: f64, rng: &mut RngStream) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.uniform_range(-bound, bound)))
}

/// Fresh backbone parameters.
///
/// Weights are uniform in `±sqrt(6 / fan_in)`, biases start at zero. Each
/// tensor draws from its own stream, so the result depends only on
/// `(spec, rng key)`.
pub fn init_backbone<T: Float>(spec: &ArchSpec, rng: &RngStream) -> Result<ParameterSet<T>> {
    spec.validate()?;
    let mut p = ParameterSet::new();
    let dense = |p: &mut ParameterSet<T>, name: &str, fan_in: usize, out: usize| -> Result<()> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut r = rng.split(name);
        p.insert(format!("{name}.weight"), uniform_tensor(&[out, fan_in], bound, &mut r))?;
        p.insert(format!("{name}.bias"), Tensor::zeros(&[out]))
    };
    match spec.kind {
        ArchKind::Mlp => {
            let mut fan_in = spec.input_numel();
            for (i, &w) in spec.hidden.iter().enumerate() {
                dense(&mut p, &format!("hidden{}", i + 1), fan_in, w)?;
                fan_in = w;
            }
        }
        ArchKind::SmallCnn => {
            let c_in = spec.input[0];
            let (c1, c2, d) = (spec.hidden[0], spec.hidden[1], spec.hidden[2]);
            for (name, cin, cout) in [("conv1", c_in, c1), ("conv2", c1, c2)] {
                let fan_in = cin * 9;
                let mut r = rng.split(name);
                let bound = (6.0 / fan_in as f64).sqrt();
                p.insert(format!("{name}.weight"), uniform_tensor(&[cout, cin, 3, 3], bound, &mut r))?;
                p.insert(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
            }
            let flat = spec.layer_width("conv2").expect("validated");
            dense(&mut p, "fc", flat, d)?;
        }
    }
    Ok(p)
}

/// Fresh head parameters, uniform in `±1/sqrt(features)`.
pub fn init_head<T: Float>(spec: &ArchSpec, rng: &RngStream) -> ParameterSet<T> {
    let fan_in = spec.feature_width();
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut r = rng.split("head");
    let mut p = ParameterSet::new();
    p.insert("weight", uniform_tensor(&[spec.head_width, fan_in], bound, &mut r))
        .expect("fresh set");
    p.insert("bias", Tensor::zeros(&[spec.head_width])).expect("fresh set");
    p
}

/// Backbone plus an optional head, reproducible from `(spec, seed)`.
pub fn build_model<T: Float>(
    spec: &ArchSpec,
    seed: u64,
    with_head: bool,
) -> Result<(ParameterSet<T>, Option<ParameterSet<T>>)> {
    let rng = RngStream::new(seed, "model-init");
    let backbone = init_backbone(spec, &rng)?;
    let head = with_head.then(|| init_head(spec, &rng));
    Ok((backbone, head))
}

fn check_head<T: Float>(spec: &ArchSpec, head: &ParameterSet<T>, classes: &[u32]) -> Result<()> {
    let w = head
        .get("weight")
        .ok_or_else(|| Error::InvalidArgument("head is missing `weight`".into()))?;
    let b = head
        .get("bias")
        .ok_or_else(|| Error::InvalidArgument("head is missing `bias`".into()))?;
    let expect = [spec.head_width, spec.feature_width()];
    if w.shape() != expect || b.shape() != [spec.head_width] || head.len() != 2 {
        return Err(Error::Shape {
            op: "attach_head",
            detail: format!(
                "head weight {:?} / bias {:?}, architecture needs {expect:?}",
                w.shape(),
                b.shape()
            ),
        });
    }
    if classes.len() != spec.head_width {
        return Err(Error::InvalidArgument(format!(
            "head has {} outputs but {} classes were given",
            spec.head_width,
            classes.len()
        )));
    }
    Ok(())
}

fn check_backbone<T: Float>(spec: &ArchSpec, backbone: &ParameterSet<T>) -> Result<()> {
    let reference: ParameterSet<T> = init_backbone(spec, &RngStream::new(0, "shape-check"))?;
    let same = reference.len() == backbone.len()
        && reference
            .iter()
            .zip(backbone.iter())
            .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape());
    if !same {
        return Err(Error::InvalidArgument(
            "backbone parameters do not match the architecture".into(),
        ));
    }
    Ok(())
}

/// Runs the backbone, returning the penultimate features and requested taps.
fn backbone_forward<T: Float>(
    g: &mut Graph<T>,
    spec: &ArchSpec,
    bb: &Bindings,
    x: Var,
    taps: &[String],
) -> Result<(Var, BTreeMap<String, Var>)> {
    let batch = *g.shape(x).first().ok_or_else(|| Error::Shape {
        op: "forward",
        detail: "input has no batch axis".into(),
    })?;
    let mut want_shape = vec![batch];
    want_shape.extend_from_slice(&spec.input);
    let fits = match spec.kind {
        ArchKind::Mlp => g.shape(x).iter().skip(1).product::<usize>() == spec.input_numel(),
        _ => g.shape(x) == want_shape.as_slice(),
    };
    if !fits {
        return Err(Error::Shape {
            op: "forward",
            detail: format!("input {:?}, architecture expects {:?}", g.shape(x), want_shape),
        });
    }
    for t in taps {
        if spec.layer_width(t).is_none() {
            return Err(Error::InvalidArgument(format!("unknown tap `{t}`")));
        }
    }
    let p = |name: &str| bb[name];
    let mut recorded = BTreeMap::new();
    let mut record = |g: &mut Graph<T>, name: &str, v: Var| -> Result<()> {
        if taps.iter().any(|t| t == name) {
            let flat = g.flatten(v)?;
            recorded.insert(name.to_string(), flat);
        }
        Ok(())
    };
    let features = match spec.kind {
        ArchKind::Mlp => {
            let mut h = g.flatten(x)?;
            for i in 1..=spec.hidden.len() {
                let name = format!("hidden{i}");
                let z = g.matmul_t(h, p(&format!("{name}.weight")), false, true)?;
                let z = g.add_row(z, p(&format!("{name}.bias")))?;
                h = g.relu(z);
                record(g, &name, h)?;
            }
            h
        }
        ArchKind::SmallCnn => {
            let mut h = x;
            for name in ["conv1", "conv2"] {
                let z = g.conv2d(
                    h,
                    p(&format!("{name}.weight")),
                    Some(p(&format!("{name}.bias"))),
                    1,
                    Padding::Same,
                )?;
                let z = g.relu(z);
                h = g.max_pool2d(z, 2, 2)?;
                record(g, name, h)?;
            }
            let flat = g.flatten(h)?;
            let z = g.matmul_t(flat, p("fc.weight"), false, true)?;
            let z = g.add_row(z, p("fc.bias"))?;
            let h = g.relu(z);
            record(g, "fc", h)?;
            h
        }
    };
    Ok((features, recorded))
}

fn head_forward<T: Float>(g: &mut Graph<T>, head: &Bindings, features: Var) -> Result<Var> {
    let z = g.matmul_t(features, head["weight"], false, true)?;
    g.add_row(z, head["bias"])
}

/// Shared backbone with one linear head per consolidated task.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadModel<T: Float> {
    arch: ArchSpec,
    backbone: ParameterSet<T>,
    heads: Vec<Head<T>>,
}

impl<T: Float> MultiHeadModel<T> {
    /// A model with no heads yet.
    pub fn new(arch: ArchSpec, backbone: ParameterSet<T>) -> Result<Self> {
        arch.validate()?;
        check_backbone(&arch, &backbone)?;
        Ok(Self {
            arch,
            backbone,
            heads: Vec::new(),
        })
    }

    /// Randomly initialized, headless.
    pub fn random(arch: ArchSpec, seed: u64) -> Result<Self> {
        let (backbone, _) = build_model(&arch, seed, false)?;
        Self::new(arch, backbone)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn backbone(&self) -> &ParameterSet<T> {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.backbone
    }

    pub fn heads(&self) -> &[Head<T>] {
        &self.heads
    }

    pub fn head(&self, task_id: u32) -> Option<&Head<T>> {
        self.heads.iter().find(|h| h.task_id == task_id)
    }

    pub fn head_mut(&mut self, task_id: u32) -> Option<&mut Head<T>> {
        self.heads.iter_mut().find(|h| h.task_id == task_id)
    }

    pub fn task_ids(&self) -> Vec<u32> {
        self.heads.iter().map(|h| h.task_id).collect()
    }

    pub fn num_params(&self) -> usize {
        self.backbone.numel() + self.heads.iter().map(|h| h.params.numel()).sum::<usize>()
    }

    /// Appends a head; `task_id` must exceed every existing id.
    pub fn attach_head(&mut self, head: ParameterSet<T>, task_id: u32, classes: Vec<u32>) -> Result<()> {
        if let Some(last) = self.heads.last() {
            if last.task_id == task_id || self.head(task_id).is_some() {
                return Err(Error::DuplicateTask(task_id));
            }
            if task_id < last.task_id {
                return Err(Error::InvalidArgument(format!(
                    "task id {task_id} attached after {}; ids must be strictly increasing",
                    last.task_id
                )));
            }
        }
        check_head(&self.arch, &head, &classes)?;
        self.heads.push(Head {
            task_id,
            classes,
            params: head,
        });
        Ok(())
    }

    /// Consuming form of [`attach_head`](Self::attach_head).
    pub fn with_head(mut self, head: ParameterSet<T>, task_id: u32, classes: Vec<u32>) -> Result<Self> {
        self.attach_head(head, task_id, classes)?;
        Ok(self)
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundModel {
        BoundModel {
            backbone: g.bind(&self.backbone, trainable),
            heads: self.heads.iter().map(|h| g.bind(&h.params, trainable)).collect(),
        }
    }

    fn selected(&self, selector: HeadSelector) -> Result<Vec<usize>> {
        match selector {
            HeadSelector::All => Ok((0..self.heads.len()).collect()),
            HeadSelector::Task(id) => self
                .heads
                .iter()
                .position(|h| h.task_id == id)
                .map(|i| vec![i])
                .ok_or(Error::UnknownTask(id)),
        }
    }

    /// Forward pass over already bound parameters.
    ///
    /// The backbone runs once regardless of how many heads are selected.
    pub fn forward_bound(
        &self,
        g: &mut Graph<T>,
        bound: &BoundModel,
        x: Var,
        selector: HeadSelector,
        taps: &[String],
    ) -> Result<ModelOutput> {
        let which = self.selected(selector)?;
        let (features, taps) = backbone_forward(g, &self.arch, &bound.backbone, x, taps)?;
        let mut logits = Vec::with_capacity(which.len());
        for i in which {
            logits.push((self.heads[i].task_id, head_forward(g, &bound.heads[i], features)?));
        }
        Ok(ModelOutput { logits, taps })
    }

    /// Forward pass with parameters bound as constants and the configured taps.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, selector: HeadSelector) -> Result<ModelOutput> {
        let bound = self.bind(g, false);
        let taps = self.arch.taps.clone();
        self.forward_bound(g, &bound, x, selector, &taps)
    }

    /// Gradient-free evaluation in chunks of `chunk` samples.
    pub fn infer(&self, x: &Tensor<T>, selector: HeadSelector, taps: &[String], chunk: usize) -> Result<Inference<T>> {
        let which = self.selected(selector)?;
        let n = x.shape().first().copied().unwrap_or(0);
        let chunk = chunk.max(1);
        let mut logit_parts: Vec<Vec<Tensor<T>>> = vec![Vec::new(); which.len()];
        let mut tap_parts: BTreeMap<String, Vec<Tensor<T>>> = BTreeMap::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let xv = g.constant(x.slice_rows(start, end));
            let out = self.forward_bound(&mut g, &bound, xv, selector, taps)?;
            for (slot, (_, v)) in logit_parts.iter_mut().zip(&out.logits) {
                slot.push(g.value(*v).clone());
            }
            for (name, v) in &out.taps {
                tap_parts.entry(name.clone()).or_default().push(g.value(*v).clone());
            }
            start = end;
        }
        let logits = which
            .iter()
            .zip(logit_parts)
            .map(|(&i, parts)| Ok((self.heads[i].task_id, concat_rows(parts, self.arch.head_width)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut tap_out = BTreeMap::new();
        for t in taps {
            let width = self.arch.layer_width(t).ok_or_else(|| Error::InvalidArgument(format!("unknown tap `{t}`")))?;
            let parts = tap_parts.remove(t).unwrap_or_default();
            tap_out.insert(t.clone(), concat_rows(parts, width)?);
        }
        Ok(Inference { logits, taps: tap_out })
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients<T>, bound: &BoundModel) -> Result<()> {
        self.backbone.accumulate_grads(grads, &bound.backbone)?;
        for (h, b) in self.heads.iter_mut().zip(&bound.heads) {
            h.params.accumulate_grads(grads, b)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.backbone.zero_grad();
        self.heads.iter_mut().for_each(|h| h.params.zero_grad());
    }

    /// Named parameter groups for the optimizer: `backbone` and `head/<id>`.
    pub fn param_groups_mut(&mut self) -> Vec<(String, &mut ParameterSet<T>)> {
        let mut out = vec![("backbone".to_string(), &mut self.backbone)];
        for h in &mut self.heads {
            out.push((format!("head/{}", h.task_id), &mut h.params));
        }
        out
    }

    pub fn cast<U: Float>(&self) -> MultiHeadModel<U> {
        MultiHeadModel {
            arch: self.arch.clone(),
            backbone: self.backbone.cast(),
            heads: self
                .heads
                .iter()
                .map(|h| Head {
                    task_id: h.task_id,
                    classes: h.classes.clone(),
                    params: h.params.cast(),
                })
                .collect(),
        }
    }

    /// Replaces the backbone, keeping heads.
    pub fn set_backbone(&mut self, backbone: ParameterSet<T>) -> Result<()> {
        check_backbone(&self.arch, &backbone)?;
        self.backbone = backbone;
        Ok(())
    }

    pub(crate) fn from_parts(arch: ArchSpec, backbone: ParameterSet<T>, heads: Vec<Head<T>>) -> Result<Self> {
        let mut m = Self::new(arch, backbone)?;
        for h in heads {
            m.attach_head(h.params, h.task_id, h.classes)?;
        }
        Ok(m)
    }

    pub fn into_parts(self) -> (ArchSpec, ParameterSet<T>, Vec<Head<T>>) {
        (self.arch, self.backbone, self.heads)
    }
}

fn concat_rows<T: Float>(parts: Vec<Tensor<T>>, width: usize) -> Result<Tensor<T>> {
    let rows: usize = parts.iter().map(|p| p.shape()[0]).sum();
    let mut data = Vec::with_capacity(rows * width);
    for p in parts {
        data.extend(p.into_data());
    }
    Tensor::new(vec![rows, width], data)
}

/// A self-centered model: shared-architecture backbone with exactly one head.
#[derive(Debug, Clone, PartialEq)]
pub struct SCModel<T: Float> {
    inner: MultiHeadModel<T>,
}

impl<T: Float> SCModel<T> {
    pub fn new(arch: ArchSpec, backbone: ParameterSet<T>, head: ParameterSet<T>, task_id: u32, classes: Vec<u32>) -> Result<Self> {
        let inner = MultiHeadModel::new(arch, backbone)?.with_head(head, task_id, classes)?;
        Ok(Self { inner })
    }

    pub fn from_multi_head(model: MultiHeadModel<T>) -> Result<Self> {
        if model.heads.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "a self-centered model has exactly one head, got {}",
                model.heads.len()
            )));
        }
        Ok(Self { inner: model })
    }

    pub fn arch(&self) -> &ArchSpec {
        self.inner.arch()
    }

    pub fn backbone(&self) -> &ParameterSet<T> {
        self.inner.backbone()
    }

    pub fn head(&self) -> &Head<T> {
        &self.inner.heads[0]
    }

    pub fn task_id(&self) -> u32 {
        self.head().task_id
    }

    pub fn classes(&self) -> &[u32] {
        &self.head().classes
    }

    /// The model viewed as a one-head multi-head model.
    pub fn as_multi_head(&self) -> &MultiHeadModel<T> {
        &self.inner
    }

    pub fn as_multi_head_mut(&mut self) -> &mut MultiHeadModel<T> {
        &mut self.inner
    }

    pub fn into_multi_head(self) -> MultiHeadModel<T> {
        self.inner
    }
}
