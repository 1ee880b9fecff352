use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use daclab_core::datagen::{make_split_stream, AugConfig, Dataset, DatasetSpec, Experience, OodSource};
use daclab_core::dcl::{AdaptConfig, SchemeConfig};
use daclab_core::eval::{InferenceMode, ProbeConfig};
use daclab_core::losses::{ConsolidationConfig, LOGITS_TAP};
use daclab_core::models::ArchSpec;

/// Environment variable that replaces the seed list with one seed.
pub const SEED_ENV: &str = "DACLAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Sequential,
    Independent,
    /// Plain finetuning on each task's data, no consolidation.
    RehearsalFreeNaive,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Sequential => "sequential",
            Scheme::Independent => "independent",
            Scheme::RehearsalFreeNaive => "rehearsal_free_naive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    pub n_tasks: usize,
    pub classes_per_task: usize,
    /// Seed of the class-to-task assignment.
    #[serde(default)]
    pub split_seed: u64,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/daclab")
}

fn default_inference() -> InferenceMode {
    InferenceMode::TaskAware
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_inference")]
    pub inference: InferenceMode,
    /// Parallel adaptations in the independent scheme.
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub stream: StreamConfig,
    pub arch: ArchSpec,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub consolidation: ConsolidationConfig,
    #[serde(default)]
    pub aug: AugConfig,
    pub source: OodSource,
    /// Extra named sources for `ablate-sources`.
    #[serde(default)]
    pub ablation: BTreeMap<String, OodSource>,
    #[serde(default)]
    pub probe: ProbeConfig,
}

/// Field-level problems found while loading a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub problems: Vec<(String, String)>,
}

impl ConfigError {
    pub fn single(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Self {
            problems: vec![(field.into(), msg.into())],
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (field, msg)) in self.problems.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{field}: {msg}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// A validated config with its dataset already loaded.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::single("config", e.message().to_string() + &span_hint(text, e.span())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads `path`; relative paths inside, including `output_dir`, are resolved against its directory.
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::single("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = std::path::absolute(path.parent().unwrap_or(Path::new("")))
            .map_err(|e| ConfigError::single("config", format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for src in std::iter::once(&mut self.source).chain(self.ablation.values_mut()) {
            match src {
                OodSource::SingleImage { path } | OodSource::ImageFolder { path } | OodSource::PatchCache { path } => fix(path),
                _ => {}
            }
        }
        if let DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } = &mut self.stream.dataset
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                fix(p);
            }
        }
    }

    /// `--seed` wins over `DACLAB_SEED`, which wins over the file.
    pub fn apply_seed_override(&mut self, cli_seed: Option<u64>, env_seed: Option<&str>) -> Result<(), ConfigError> {
        if let Some(s) = cli_seed {
            self.seeds = vec![s];
        } else if let Some(v) = env_seed {
            let s = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::single(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
            self.seeds = vec![s];
        }
        Ok(())
    }

    fn source_problems(field: &str, src: &OodSource, out: &mut Vec<(String, String)>) {
        for p in src.paths() {
            let ok = match src {
                OodSource::ImageFolder { .. } => p.is_dir(),
                _ => p.is_file(),
            };
            if !ok {
                out.push((format!("{field}.path"), format!("{} does not exist", p.display())));
            }
        }
    }

    /// Checks every field and loads the dataset.
    pub fn validate(self) -> Result<Loaded, ConfigError> {
        let mut p: Vec<(String, String)> = Vec::new();
        let mut push = |field: &str, e: String| p.push((field.to_string(), e));
        if self.seeds.is_empty() {
            push("seeds", "at least one seed is required".into());
        }
        if self.workers == 0 {
            push("workers", "must be >= 1".into());
        }
        if let Err(e) = self.arch.validate() {
            push("arch", e.to_string());
        }
        if self.arch.head_width != self.stream.classes_per_task {
            push(
                "arch.head_width",
                format!("is {} but stream.classes_per_task is {}", self.arch.head_width, self.stream.classes_per_task),
            );
        }
        if let Err(e) = self.adapt.validate() {
            push("adapt", e.to_string());
        }
        if let Err(e) = self.consolidation.validate() {
            push("consolidation", e.to_string());
        }
        for t in &self.consolidation.taps {
            if t != LOGITS_TAP && self.arch.layer_width(t).is_none() {
                push("consolidation.taps", format!("`{t}` is neither `logits` nor a layer of the architecture"));
            }
        }
        if let Err(e) = self.aug.validate() {
            push("aug", e.to_string());
        }
        if self.stream.n_tasks == 0 || self.stream.classes_per_task == 0 {
            push("stream", "n_tasks and classes_per_task must be >= 1".into());
        }
        Self::source_problems("source", &self.source, &mut p);
        for (name, src) in &self.ablation {
            Self::source_problems(&format!("ablation.{name}"), src, &mut p);
        }
        if let DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } = &self.stream.dataset
        {
            for (f, path) in [
                ("train_images", train_images),
                ("train_labels", train_labels),
                ("test_images", test_images),
                ("test_labels", test_labels),
            ] {
                if !path.is_file() {
                    p.push((format!("stream.dataset.{f}"), format!("{} does not exist", path.display())));
                }
            }
        }
        if !p.is_empty() {
            return Err(ConfigError { problems: p });
        }
        let dataset = self
            .stream
            .dataset
            .load()
            .map_err(|e| ConfigError::single("stream.dataset", e.to_string()))?;
        let shape = dataset.sample_shape();
        if shape.iter().product::<usize>() != self.arch.input_numel()
            || (self.arch.input.len() == 3 && self.arch.input[..] != shape[..])
        {
            return Err(ConfigError::single(
                "arch.input",
                format!("{:?} does not fit dataset images of shape {shape:?}", self.arch.input),
            ));
        }
        let needed = self.stream.n_tasks * self.stream.classes_per_task;
        if needed > dataset.n_classes as usize {
            return Err(ConfigError::single(
                "stream",
                format!("{needed} classes needed, dataset has {}", dataset.n_classes),
            ));
        }
        Ok(Loaded { config: self, dataset })
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

impl Loaded {
    pub fn stream(&self) -> daclab_core::Result<Vec<Experience>> {
        let s = &self.config.stream;
        make_split_stream(&self.dataset, s.n_tasks, s.classes_per_task, s.split_seed)
    }

    pub fn scheme_config(&self, source: &OodSource) -> SchemeConfig {
        let c = &self.config;
        SchemeConfig {
            arch: c.arch.clone(),
            adapt: c.adapt.clone(),
            consolidation: c.consolidation.clone(),
            aug: c.aug.clone(),
            source: source.clone(),
            inference: c.inference,
            workers: c.workers,
        }
    }

    /// Resolves an ablation source name.
    pub fn named_source(&self, name: &str) -> Result<OodSource, ConfigError> {
        if let Some(s) = self.config.ablation.get(name) {
            return Ok(s.clone());
        }
        match name {
            "noise" => Ok(OodSource::Noise),
            "real_data" => Ok(OodSource::RealData),
            n if n == self.config.source.name() => Ok(self.config.source.clone()),
            _ => Err(ConfigError::single(
                "--sources",
                format!("unknown source `{name}`; use noise, real_data, the config's own source kind, or a name defined under [ablation]"),
            )),
        }
    }
}
