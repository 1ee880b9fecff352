use serde::{Deserialize, Serialize};

use crate::datagen::{AugConfig, Experience, OodPool, OodSource};
use crate::error::{Error, Result};
use crate::eval::{task_accuracy, AccuracyMatrix, InferenceMode};
use crate::losses::ConsolidationConfig;
use crate::models::io::backbone_bytes;
use crate::models::{ArchSpec, MultiHeadModel, SCModel};

use super::adapt::{adapt, train_task, AdaptConfig, AdaptReport};
use super::consolidate::{consolidate, LossBreakdown};
use super::derive_seed;
use super::messages::{InitMessage, MessageLog, Residency, SCMessage};

/// Everything a scheme needs besides the stream and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub arch: ArchSpec,
    pub adapt: AdaptConfig,
    pub consolidation: ConsolidationConfig,
    pub aug: AugConfig,
    pub source: OodSource,
    pub inference: InferenceMode,
    /// Parallel adaptations in the independent scheme.
    pub workers: usize,
}

impl SchemeConfig {
    pub fn new(arch: ArchSpec, source: OodSource) -> Self {
        Self {
            arch,
            adapt: AdaptConfig::default(),
            consolidation: ConsolidationConfig::default(),
            aug: AugConfig::default(),
            source,
            inference: InferenceMode::TaskAware,
            workers: 1,
        }
    }
}

/// Per-task record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub task_id: u32,
    pub adapt: AdaptReport,
    pub first_loss: Option<LossBreakdown>,
    pub last_loss: Option<LossBreakdown>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: MultiHeadModel<f32>,
    pub matrix: AccuracyMatrix,
    /// Model after each step.
    pub snapshots: Vec<MultiHeadModel<f32>>,
    pub sc_models: Vec<SCModel<f32>>,
    pub log: MessageLog,
    pub steps: Vec<StepRecord>,
    pub peak_residency: usize,
}

fn check_stream(stream: &[Experience]) -> Result<()> {
    if stream.is_empty() {
        return Err(Error::InvalidArgument("stream is empty".into()));
    }
    if stream.windows(2).any(|w| w[0].task_id >= w[1].task_id) {
        return Err(Error::InvalidArgument("stream task ids must be strictly increasing".into()));
    }
    Ok(())
}

/// The initial random model `f_0` of a run.
pub fn initial_model(arch: &ArchSpec, seed: u64) -> Result<MultiHeadModel<f32>> {
    MultiHeadModel::random(arch.clone(), derive_seed(seed, "f0", 0))
}

fn fill_row(matrix: &mut AccuracyMatrix, t: usize, model: &MultiHeadModel<f32>, seen: &[Experience], mode: InferenceMode) -> Result<()> {
    for (i, exp) in seen.iter().enumerate() {
        matrix.set(t, i + 1, task_accuracy(model, exp, mode)?)?;
    }
    Ok(())
}

fn check_heads(model: &MultiHeadModel<f32>, step: usize) -> Result<()> {
    let ids = model.task_ids();
    if ids.len() != step || ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Protocol(format!("after step {step} the model holds heads {ids:?}")));
    }
    Ok(())
}

/// Loads the consolidation pool once, or per task for `real_data`.
struct Pools {
    shared: Option<OodPool>,
}

impl Pools {
    fn new(source: &OodSource) -> Result<Self> {
        Ok(Self {
            shared: match source {
                OodSource::RealData => None,
                s => Some(OodPool::load(s, None)?),
            },
        })
    }

    fn get<'a>(&'a self, source: &OodSource, exp: &Experience, scratch: &'a mut Option<OodPool>) -> Result<&'a OodPool> {
        match &self.shared {
            Some(p) => Ok(p),
            None => Ok(scratch.insert(OodPool::load(source, Some(&exp.train))?)),
        }
    }
}

/// Consolidates SC messages in order, starting from `prev`.
struct Consolidator<'a> {
    cfg: &'a SchemeConfig,
    stream: &'a [Experience],
    seed: u64,
    pools: Pools,
    residency: Residency,
    current: Option<MultiHeadModel<f32>>,
    matrix: AccuracyMatrix,
    snapshots: Vec<MultiHeadModel<f32>>,
}

impl<'a> Consolidator<'a> {
    fn new(cfg: &'a SchemeConfig, stream: &'a [Experience], seed: u64) -> Result<Self> {
        Ok(Self {
            cfg,
            stream,
            seed,
            pools: Pools::new(&cfg.source)?,
            residency: Residency::default(),
            current: None,
            matrix: AccuracyMatrix::new(stream.len()),
            snapshots: Vec::with_capacity(stream.len()),
        })
    }

    fn absorb(&mut self, step: usize, msg: &SCMessage) -> Result<(LossBreakdown, LossBreakdown)> {
        let exp = &self.stream[step - 1];
        let mut scratch = None;
        let pool = self.pools.get(&self.cfg.source, exp, &mut scratch)?;
        let seed = derive_seed(self.seed, "consolidate", exp.task_id as u64);
        let out = consolidate(
            self.current.as_ref(),
            msg,
            pool,
            &self.cfg.aug,
            &self.cfg.consolidation,
            seed,
            &self.residency,
        )?;
        check_heads(&out.model, step)?;
        fill_row(&mut self.matrix, step, &out.model, &self.stream[..step], self.cfg.inference)?;
        self.snapshots.push(out.model.clone());
        self.current = Some(out.model);
        Ok((out.first_loss, out.last_loss))
    }
}

fn adapt_seed(seed: u64, exp: &Experience) -> u64 {
    derive_seed(seed, "adapt", exp.task_id as u64)
}

/// Sequential scheme: each device starts from the latest consolidated model.
pub fn run_sequential(stream: &[Experience], cfg: &SchemeConfig, seed: u64) -> Result<RunOutcome> {
    check_stream(stream)?;
    let arch = &cfg.arch;
    let f0 = initial_model(arch, seed)?;
    let mut state = Consolidator::new(cfg, stream, seed)?;
    let mut log = MessageLog::default();
    let mut sc_models = Vec::with_capacity(stream.len());
    let mut steps = Vec::with_capacity(stream.len());
    let mut expected = backbone_bytes(f0.backbone());
    for (k, exp) in stream.iter().enumerate() {
        let step = k + 1;
        let init = InitMessage::from_model(step as u32, state.current.as_ref().unwrap_or(&f0));
        log.record_init(exp.task_id, &init);
        if init.backbone_bytes(arch)? != expected {
            return Err(Error::Protocol(format!(
                "init message of step {step} differs from the consolidated backbone of step {}",
                step - 1
            )));
        }
        let (sc, report) = adapt(&init, exp, &cfg.adapt, arch, adapt_seed(seed, exp))?;
        let msg = SCMessage::from_model(&sc);
        log.record_sc(step as u32, &msg);
        let (first, last) = state.absorb(step, &msg)?;
        expected = backbone_bytes(state.current.as_ref().expect("just consolidated").backbone());
        sc_models.push(sc);
        steps.push(StepRecord {
            step: step as u32,
            task_id: exp.task_id,
            adapt: report,
            first_loss: Some(first),
            last_loss: Some(last),
        });
    }
    finish(state, log, sc_models, steps, stream)
}

fn finish(
    state: Consolidator<'_>,
    log: MessageLog,
    sc_models: Vec<SCModel<f32>>,
    steps: Vec<StepRecord>,
    stream: &[Experience],
) -> Result<RunOutcome> {
    let ids: Vec<u32> = stream.iter().map(|e| e.task_id).collect();
    log.check_two_messages(&ids)?;
    if state.residency.current() != 0 {
        return Err(Error::Protocol("teacher slots still held after the run".into()));
    }
    Ok(RunOutcome {
        model: state.current.expect("stream is non-empty"),
        matrix: state.matrix,
        snapshots: state.snapshots,
        sc_models,
        log,
        steps,
        peak_residency: state.residency.peak(),
    })
}

/// Independent scheme: every device adapts from the same `f_0`, possibly in
/// parallel, and the results are consolidated in ascending task order.
pub fn run_independent(stream: &[Experience], cfg: &SchemeConfig, seed: u64) -> Result<RunOutcome> {
    check_stream(stream)?;
    let arch = &cfg.arch;
    let f0 = initial_model(arch, seed)?;
    let inits: Vec<InitMessage> = (1..=stream.len()).map(|s| InitMessage::from_model(s as u32, &f0)).collect();
    if inits.iter().any(|m| m.payload != inits[0].payload) {
        return Err(Error::Protocol("devices received different initializations".into()));
    }
    let mut log = MessageLog::default();
    for (exp, init) in stream.iter().zip(&inits) {
        log.record_init(exp.task_id, init);
    }

    let job = |k: usize| adapt(&inits[k], &stream[k], &cfg.adapt, arch, adapt_seed(seed, &stream[k]));
    let adapted: Vec<(SCModel<f32>, AdaptReport)> = if cfg.workers <= 1 || stream.len() < 2 {
        (0..stream.len()).map(job).collect::<Result<_>>()?
    } else {
        let chunk = stream.len().div_ceil(cfg.workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..stream.len())
                .step_by(chunk)
                .map(|start| {
                    let job = &job;
                    scope.spawn(move || (start..(start + chunk).min(stream.len())).map(job).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut all = Vec::with_capacity(stream.len());
            for h in handles {
                all.extend(h.join().expect("adaptation worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };

    let mut state = Consolidator::new(cfg, stream, seed)?;
    let mut sc_models = Vec::with_capacity(stream.len());
    let mut steps = Vec::with_capacity(stream.len());
    for (k, (sc, report)) in adapted.into_iter().enumerate() {
        let step = k + 1;
        let msg = SCMessage::from_model(&sc);
        log.record_sc(step as u32, &msg);
        let (first, last) = state.absorb(step, &msg)?;
        sc_models.push(sc);
        steps.push(StepRecord {
            step: step as u32,
            task_id: stream[k].task_id,
            adapt: report,
            first_loss: Some(first),
            last_loss: Some(last),
        });
    }
    finish(state, log, sc_models, steps, stream)
}

/// Lower anchor: one model finetuned on each task's raw data in turn, a new
/// head per task, no consolidation.
pub fn naive_finetune_baseline(
    stream: &[Experience],
    cfg: &SchemeConfig,
    seed: u64,
) -> Result<(MultiHeadModel<f32>, AccuracyMatrix, Vec<AdaptReport>)> {
    check_stream(stream)?;
    let mut model = initial_model(&cfg.arch, seed)?;
    let mut matrix = AccuracyMatrix::new(stream.len());
    let mut reports = Vec::with_capacity(stream.len());
    for (k, exp) in stream.iter().enumerate() {
        let (sc, report) = train_task(model.backbone().clone(), &cfg.arch, exp, &cfg.adapt, adapt_seed(seed, exp))?;
        let (_, backbone, mut heads) = sc.into_multi_head().into_parts();
        let head = heads.remove(0);
        model.set_backbone(backbone)?;
        model.attach_head(head.params, head.task_id, head.classes)?;
        fill_row(&mut matrix, k + 1, &model, &stream[..=k], cfg.inference)?;
        reports.push(report);
    }
    Ok((model, matrix, reports))
}
