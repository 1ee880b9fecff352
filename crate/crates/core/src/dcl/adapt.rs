use serde::{Deserialize, Serialize};

use crate::datagen::Experience;
use crate::error::{Error, Result};
use crate::eval::{labeled_accuracy, InferenceMode};
use crate::losses::cross_entropy;
use crate::models::{init_head, ArchSpec, HeadSelector, MultiHeadModel, SCModel};
use crate::numerics::{Graph, Optimizer, OptimizerConfig, ParameterSet, RngStream};

use super::messages::InitMessage;

/// Local finetuning budget of a self-centered device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 64,
            optimizer: OptimizerConfig::adam(1e-3),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("adaptation iterations must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("adaptation batch size must be >= 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Accuracy of an adapted model on its own task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub task_id: u32,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

/// Finetunes the received initialization on `exp` with cross-entropy.
///
/// The backbone of the snapshot is kept, any heads in it are ignored and a
/// fresh head of width `|classes|` is attached.
pub fn adapt(init: &InitMessage, exp: &Experience, cfg: &AdaptConfig, arch: &ArchSpec, seed: u64) -> Result<(SCModel<f32>, AdaptReport)> {
    let start = init.decode(arch)?;
    train_task(start.backbone().clone(), arch, exp, cfg, seed)
}

/// Trains `backbone` plus a new head on `exp`.
pub(crate) fn train_task(
    backbone: ParameterSet<f32>,
    arch: &ArchSpec,
    exp: &Experience,
    cfg: &AdaptConfig,
    seed: u64,
) -> Result<(SCModel<f32>, AdaptReport)> {
    cfg.validate()?;
    if exp.classes.len() != arch.head_width {
        return Err(Error::InvalidArgument(format!(
            "task {} has {} classes but heads are {} wide",
            exp.task_id,
            exp.classes.len(),
            arch.head_width
        )));
    }
    if exp.train.is_empty() {
        return Err(Error::InvalidArgument(format!("task {} has no training data", exp.task_id)));
    }
    let labels = exp.local_labels(&exp.train.labels)?;
    let rng = RngStream::new(seed, "adapt");
    let head = init_head(arch, &rng.split_index("head", exp.task_id as u64));
    let mut model = MultiHeadModel::new(arch.clone(), backbone)?.with_head(head, exp.task_id, exp.classes.clone())?;
    let mut opt = Optimizer::new(cfg.optimizer)?;

    let n = exp.train.len();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut loss_value = f64::NAN;
    for _ in 0..cfg.iterations {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(n) {
            if cursor == order.len() {
                order = (0..n).collect();
                rng.split_index("epoch", epoch).shuffle(&mut order);
                epoch += 1;
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let x = exp.train.images.gather_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();

        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let xv = g.constant(x);
        let out = model.forward_bound(&mut g, &bound, xv, HeadSelector::All, &[])?;
        let loss = cross_entropy(&mut g, out.logits[0].1, &y)?;
        loss_value = g.value(loss).item() as f64;
        let grads = g.backward(loss)?;
        model.zero_grad();
        model.accumulate_grads(&grads, &bound)?;
        let mut groups = model.param_groups_mut();
        let mut refs: Vec<(&str, &mut ParameterSet<f32>)> = groups.iter_mut().map(|(k, p)| (k.as_str(), &mut **p)).collect();
        opt.step_groups(&mut refs)?;
    }
    model.zero_grad();

    let train_accuracy = labeled_accuracy(&model, &exp.train.images, &exp.train.labels, exp.task_id, InferenceMode::TaskAware)?;
    let test_accuracy = if exp.test.is_empty() {
        f64::NAN
    } else {
        labeled_accuracy(&model, &exp.test.images, &exp.test.labels, exp.task_id, InferenceMode::TaskAware)?
    };
    let report = AdaptReport {
        task_id: exp.task_id,
        train_accuracy,
        test_accuracy,
        final_loss: loss_value,
    };
    Ok((SCModel::from_multi_head(model)?, report))
}
