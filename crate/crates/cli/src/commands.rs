use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use daclab_core::datagen::{Experience, OodSource};
use daclab_core::dcl::{naive_finetune_baseline, run_independent, run_sequential, AdaptReport, MessageLog, StepRecord};
use daclab_core::eval::{cka_csv, cka_stream_report, linear_probe, AccuracyMatrix};
use daclab_core::models::{load_model, save_model, MultiHeadModel};

use crate::config::{ConfigError, ExperimentConfig, Loaded, Scheme};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(ConfigError),
    /// Exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "invalid configuration:\n{e}"),
            CliError::Runtime(e) => write!(f, "run failed: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<daclab_core::Error> for CliError {
    fn from(e: daclab_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskForgetting {
    pub task_id: u32,
    pub forgetting: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub scheme: Scheme,
    pub source: String,
    pub seed: u64,
    pub n_tasks: usize,
    /// Average accuracy after each step.
    pub average_accuracy: Vec<f64>,
    pub final_average_accuracy: f64,
    pub forgetting: Vec<TaskForgetting>,
    pub mean_forgetting: f64,
    /// Each self-centered model's test accuracy on its own task.
    pub sc_accuracy: Vec<f64>,
    pub mean_sc_accuracy: f64,
    pub steps: Vec<StepRecord>,
    pub peak_teacher_residency: usize,
    pub wall_clock_seconds: f64,
}

/// What one seed of one experiment produced.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub dir: PathBuf,
    pub metrics: Metrics,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn metrics(
    matrix: &AccuracyMatrix,
    stream: &[Experience],
    scheme: Scheme,
    source: &OodSource,
    seed: u64,
    reports: &[AdaptReport],
    steps: Vec<StepRecord>,
    peak: usize,
    seconds: f64,
) -> CliResult<Metrics> {
    let n = stream.len();
    let average_accuracy = (1..=n).map(|t| matrix.average_accuracy(t)).collect::<daclab_core::Result<Vec<_>>>()?;
    let forgetting = (1..=n)
        .map(|i| {
            Ok(TaskForgetting {
                task_id: stream[i - 1].task_id,
                forgetting: matrix.forgetting(i, n)?,
            })
        })
        .collect::<daclab_core::Result<Vec<_>>>()?;
    let sc_accuracy: Vec<f64> = reports.iter().map(|r| r.test_accuracy).collect();
    Ok(Metrics {
        schema_version: METRICS_SCHEMA_VERSION,
        scheme,
        source: source.name().to_string(),
        seed,
        n_tasks: n,
        final_average_accuracy: average_accuracy[n - 1],
        average_accuracy,
        forgetting,
        mean_forgetting: matrix.mean_forgetting(n)?,
        mean_sc_accuracy: sc_accuracy.iter().sum::<f64>() / sc_accuracy.len() as f64,
        sc_accuracy,
        steps,
        peak_teacher_residency: peak,
        wall_clock_seconds: seconds,
    })
}

/// Runs one seed of the configured scheme with `source` and writes its artifacts into `dir`.
pub fn run_seed(loaded: &Loaded, stream: &[Experience], source: &OodSource, seed: u64, dir: &Path) -> CliResult<SeedResult> {
    let cfg = &loaded.config;
    let ckpt = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt)?;
    let scheme_cfg = loaded.scheme_config(source);
    let start = Instant::now();
    let (matrix, log, reports, steps, peak, snapshots) = match cfg.scheme {
        Scheme::Sequential | Scheme::Independent => {
            let out = if cfg.scheme == Scheme::Sequential {
                run_sequential(stream, &scheme_cfg, seed)?
            } else {
                run_independent(stream, &scheme_cfg, seed)?
            };
            for sc in &out.sc_models {
                save_model(sc.as_multi_head(), ckpt.join(format!("sc_task_{}.dacm", sc.task_id())))?;
            }
            let reports = out.steps.iter().map(|s| s.adapt).collect::<Vec<_>>();
            (out.matrix, out.log, reports, out.steps, out.peak_residency, out.snapshots)
        }
        Scheme::RehearsalFreeNaive => {
            let (model, matrix, reports) = naive_finetune_baseline(stream, &scheme_cfg, seed)?;
            let steps = reports
                .iter()
                .zip(1u32..)
                .map(|(r, step)| StepRecord {
                    step,
                    task_id: r.task_id,
                    adapt: *r,
                    first_loss: None,
                    last_loss: None,
                })
                .collect();
            (matrix, MessageLog::default(), reports, steps, 0, vec![model])
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    for (k, m) in snapshots.iter().enumerate() {
        let name = if cfg.scheme == Scheme::RehearsalFreeNaive {
            "final.dacm".to_string()
        } else {
            format!("step_{}.dacm", k + 1)
        };
        save_model(m, ckpt.join(name))?;
    }
    write(&dir.join("accuracy_matrix.csv"), matrix.to_csv())?;
    write(&dir.join("message_log.json"), log.to_json())?;
    let m = metrics(&matrix, stream, cfg.scheme, source, seed, &reports, steps, peak, seconds)?;
    write(&dir.join("metrics.json"), serde_json::to_string_pretty(&m).expect("metrics serialize") + "\n")?;
    Ok(SeedResult { dir: dir.to_path_buf(), metrics: m })
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

fn write_resolved(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    write(&out.join("resolved_config.toml"), cfg.to_toml())
}

/// `daclab run`.
pub fn cmd_run(loaded: &Loaded, out: &Path) -> CliResult<Vec<SeedResult>> {
    let cfg = &loaded.config;
    write_resolved(cfg, out)?;
    let stream = loaded.stream()?;
    let mut results = Vec::new();
    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    summary.write_record(["seed", "average_accuracy", "mean_forgetting", "mean_sc_accuracy"])?;
    for &seed in &cfg.seeds {
        eprintln!("[daclab] {} seed {seed}", cfg.scheme);
        let r = run_seed(loaded, &stream, &cfg.source, seed, &seed_dir(out, seed))?;
        summary.write_record([
            seed.to_string(),
            format!("{:.6}", r.metrics.final_average_accuracy),
            format!("{:.6}", r.metrics.mean_forgetting),
            format!("{:.6}", r.metrics.mean_sc_accuracy),
        ])?;
        eprintln!(
            "[daclab] seed {seed}: average accuracy {:.4}, mean forgetting {:.4} ({:.1}s)",
            r.metrics.final_average_accuracy, r.metrics.mean_forgetting, r.metrics.wall_clock_seconds
        );
        results.push(r);
    }
    summary.flush()?;
    Ok(results)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// `daclab ablate-sources`.
pub fn cmd_ablate(loaded: &Loaded, sources: &[String], out: &Path) -> CliResult<Vec<(String, Vec<SeedResult>)>> {
    if sources.is_empty() {
        return Err(ConfigError::single("--sources", "no sources given").into());
    }
    let resolved = sources
        .iter()
        .map(|s| Ok((s.clone(), loaded.named_source(s)?)))
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let cfg = &loaded.config;
    write_resolved(cfg, out)?;
    let stream = loaded.stream()?;
    let mut table = csv::Writer::from_path(out.join("ablation.csv"))?;
    table.write_record(["source", "seed", "avg_accuracy"])?;
    let mut all = Vec::new();
    for (name, source) in &resolved {
        let mut cell_cfg = cfg.clone();
        cell_cfg.source = source.clone();
        write_resolved(&cell_cfg, &out.join(name))?;
        let mut cells = Vec::new();
        for &seed in &cfg.seeds {
            eprintln!("[daclab] source {name} seed {seed}");
            let r = run_seed(loaded, &stream, source, seed, &seed_dir(&out.join(name), seed))?;
            table.write_record([name.clone(), seed.to_string(), format!("{:.6}", r.metrics.final_average_accuracy)])?;
            cells.push(r);
        }
        all.push((name.clone(), cells));
    }
    table.flush()?;
    let mut summary = csv::Writer::from_path(out.join("ablation_summary.csv"))?;
    summary.write_record(["source", "mean", "std", "n"])?;
    for (name, cells) in &all {
        let vals: Vec<f64> = cells.iter().map(|c| c.metrics.final_average_accuracy).collect();
        let (m, s) = mean_std(&vals);
        summary.write_record([name.clone(), format!("{m:.6}"), format!("{s:.6}"), vals.len().to_string()])?;
        eprintln!("[daclab] {name}: {m:.4} ± {s:.4} over {} seeds", vals.len());
    }
    summary.flush()?;
    Ok(all)
}

/// `daclab report`: linear probes of every self-centered model and the CKA
/// of each against the first one, per seed directory.
pub fn cmd_report(run_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let cfg_path = run_dir.join("resolved_config.toml");
    if !cfg_path.is_file() {
        return Err(ConfigError::single("run_dir", format!("{} has no resolved_config.toml", run_dir.display())).into());
    }
    let loaded = ExperimentConfig::read(&cfg_path)?.validate()?;
    let stream = loaded.stream()?;
    let arch = &loaded.config.arch;
    let mut seed_dirs: Vec<PathBuf> = std::fs::read_dir(run_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed_")))
        .collect();
    seed_dirs.sort();
    if seed_dirs.is_empty() {
        return Err(ConfigError::single("run_dir", format!("{} contains no seed_* directories", run_dir.display())).into());
    }
    let layers: Vec<String> = arch.layers().into_iter().map(|l| l.name).collect();
    let tap = arch.penultimate();
    for dir in &seed_dirs {
        let mut models: Vec<MultiHeadModel<f32>> = Vec::new();
        for exp in &stream {
            let path = dir.join("checkpoints").join(format!("sc_task_{}.dacm", exp.task_id));
            if !path.is_file() {
                return Err(ConfigError::single("checkpoints", format!("missing {}", path.display())).into());
            }
            models.push(load_model(&path, Some(arch))?);
        }
        let seed: u64 = dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|n| n.parse().ok())
            .unwrap_or(0);
        let mut probe = csv::Writer::from_path(dir.join("probe.csv"))?;
        probe.write_record(["model_index", "task_id", "tap", "accuracy"])?;
        for (k, (m, exp)) in models.iter().zip(&stream).enumerate() {
            let rep = linear_probe(m, &tap, &stream, &loaded.config.probe, seed)?;
            probe.write_record([k.to_string(), exp.task_id.to_string(), tap.clone(), format!("{:.6}", rep.accuracy)])?;
        }
        probe.flush()?;
        let refs: Vec<&MultiHeadModel<f32>> = models.iter().collect();
        let cka = if refs.len() >= 2 {
            cka_csv(&cka_stream_report(&refs, 0, &stream[0], &layers)?)
        } else {
            cka_csv(&[])
        };
        write(&dir.join("cka.csv"), cka)?;
        eprintln!("[daclab] report written to {}", dir.display());
    }
    Ok(seed_dirs)
}
