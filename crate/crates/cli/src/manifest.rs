//! The experiment manifest: one JSON document binding model specs, task
//! generators, configurations, and the distiller choice.
//!
//! `teacher_spec`, `student_spec`, `training`, and `distillation` may be
//! inline objects or strings naming JSON files (resolved relative to the
//! manifest). `task` is one task object, or an array of them for the
//! multi-task distiller. The optional `run` section holds loop parameters,
//! `augmentation` mixes an auxiliary split into the distillation data.

use std::path::{Path, PathBuf};

use serde_json::Value;

use distilkit::config::{
    distillation_config_from_value, training_config_from_value, validate_against_specs,
    DistillationConfig, TrainingConfig,
};
use distilkit::json::{parse_document, JsonError, ObjectReader};
use distilkit::losses::Presets;
use distilkit::models::{HeadSpec, ModelSpec};
use distilkit::tasks::TaskKind;

use crate::CliError;

/// Which engine runs the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillerKind {
    BasicTrainer,
    Basic,
    General,
    MultiTeacher,
    MultiTask,
}

impl DistillerKind {
    pub fn name(&self) -> &'static str {
        match self {
            DistillerKind::BasicTrainer => "basic_trainer",
            DistillerKind::Basic => "basic",
            DistillerKind::General => "general",
            DistillerKind::MultiTeacher => "multi_teacher",
            DistillerKind::MultiTask => "multi_task",
        }
    }

    fn from_name(name: &str) -> Option<DistillerKind> {
        Some(match name {
            "basic_trainer" => DistillerKind::BasicTrainer,
            "basic" => DistillerKind::Basic,
            "general" => DistillerKind::General,
            "multi_teacher" => DistillerKind::MultiTeacher,
            "multi_task" => DistillerKind::MultiTask,
            _ => return None,
        })
    }
}

/// One synthetic-task description.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub seed: u64,
    pub n: usize,
    pub dev_n: usize,
    pub vocab_size: usize,
    pub length: usize,
    /// Classes or tags; unused for span extraction.
    pub labels: usize,
    /// Classification label noise.
    pub noise_rate: f64,
}

impl TaskSpec {
    /// The head this task requires on a model.
    pub fn head(&self) -> HeadSpec {
        match self.kind {
            TaskKind::Classification => HeadSpec::Classification { num_labels: self.labels },
            TaskKind::Tagging => HeadSpec::Tagging { num_labels: self.labels },
            TaskKind::Span => HeadSpec::SpanExtraction,
        }
    }

    fn from_json(value: &Value, context: &str) -> Result<TaskSpec, JsonError> {
        let r = ObjectReader::new(
            value,
            context,
            &["kind", "seed", "n", "dev_n", "vocab_size", "length", "num_classes", "num_tags", "noise_rate"],
        )?;
        let kind = match r.required_string("kind")?.as_str() {
            "classification" => TaskKind::Classification,
            "tagging" => TaskKind::Tagging,
            "span" => TaskKind::Span,
            other => {
                return Err(r.invalid(
                    "kind",
                    format!("unknown task kind \"{other}\" (classification, tagging, span)"),
                ))
            }
        };
        let labels = match kind {
            TaskKind::Classification => r.required_usize("num_classes")?,
            TaskKind::Tagging => r.required_usize("num_tags")?,
            TaskKind::Span => {
                for key in ["num_classes", "num_tags"] {
                    if r.has(key) {
                        return Err(r.invalid(key, "not applicable to span tasks"));
                    }
                }
                0
            }
        };
        let n = r.required_usize("n")?;
        Ok(TaskSpec {
            kind,
            seed: r.u64_field("seed", 7)?,
            n,
            dev_n: r.usize_field("dev_n", (n / 4).max(1))?,
            vocab_size: r.required_usize("vocab_size")?,
            length: r.required_usize("length")?,
            labels,
            noise_rate: r.f64_field("noise_rate", 0.0)?,
        })
    }

    pub fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("kind".into(), Value::from(self.kind.name()));
        obj.insert("seed".into(), Value::from(self.seed));
        obj.insert("n".into(), Value::from(self.n));
        obj.insert("dev_n".into(), Value::from(self.dev_n));
        obj.insert("vocab_size".into(), Value::from(self.vocab_size));
        obj.insert("length".into(), Value::from(self.length));
        match self.kind {
            TaskKind::Classification => {
                obj.insert("num_classes".into(), Value::from(self.labels));
                obj.insert("noise_rate".into(), Value::from(self.noise_rate));
            }
            TaskKind::Tagging => {
                obj.insert("num_tags".into(), Value::from(self.labels));
            }
            TaskKind::Span => {}
        }
        Value::Object(obj)
    }
}

/// Training-loop parameters outside the two config documents.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub num_epochs: usize,
    pub batch_size: usize,
    /// Supervised epochs when a teacher must be trained first.
    pub teacher_epochs: usize,
    pub learning_rate: f64,
    pub teacher_learning_rate: f64,
    /// Ensemble size for the multi-teacher distiller.
    pub num_teachers: usize,
    /// Round-robin task sampling for the multi-task distiller.
    pub round_robin: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            num_epochs: 4,
            batch_size: 8,
            teacher_epochs: 4,
            // Students learn at 1e-4 by default; the desk-scale teacher
            // takes a faster rate.
            learning_rate: 1e-4,
            teacher_learning_rate: 1e-3,
            num_teachers: 3,
            round_robin: false,
        }
    }
}

impl RunParams {
    fn from_json(value: &Value, context: &str) -> Result<RunParams, JsonError> {
        let d = RunParams::default();
        let r = ObjectReader::new(
            value,
            context,
            &[
                "num_epochs",
                "batch_size",
                "teacher_epochs",
                "learning_rate",
                "teacher_learning_rate",
                "num_teachers",
                "round_robin",
            ],
        )?;
        let p = RunParams {
            num_epochs: r.usize_field("num_epochs", d.num_epochs)?,
            batch_size: r.usize_field("batch_size", d.batch_size)?,
            teacher_epochs: r.usize_field("teacher_epochs", d.teacher_epochs)?,
            learning_rate: r.f64_field("learning_rate", d.learning_rate)?,
            teacher_learning_rate: r.f64_field("teacher_learning_rate", d.teacher_learning_rate)?,
            num_teachers: r.usize_field("num_teachers", d.num_teachers)?,
            round_robin: r.bool_field("round_robin", d.round_robin)?,
        };
        for (field, v) in [("num_epochs", p.num_epochs), ("batch_size", p.batch_size), ("teacher_epochs", p.teacher_epochs), ("num_teachers", p.num_teachers)] {
            if v == 0 {
                return Err(r.invalid(field, "must be >= 1"));
            }
        }
        for (field, v) in [("learning_rate", p.learning_rate), ("teacher_learning_rate", p.teacher_learning_rate)] {
            if v <= 0.0 || !v.is_finite() {
                return Err(r.invalid(field, "must be > 0"));
            }
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "num_epochs": self.num_epochs,
            "batch_size": self.batch_size,
            "teacher_epochs": self.teacher_epochs,
            "learning_rate": self.learning_rate,
            "teacher_learning_rate": self.teacher_learning_rate,
            "num_teachers": self.num_teachers,
            "round_robin": self.round_robin,
        })
    }
}

/// Auxiliary-data mixing for distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    pub mix_ratio: f64,
    /// Auxiliary pool size (defaults to the main set's size).
    pub n: Option<usize>,
    /// Auxiliary generator seed (defaults to the task seed).
    pub seed: Option<u64>,
    /// Keep gold labels on auxiliary examples.
    pub labeled: bool,
}

impl AugmentationSpec {
    fn from_json(value: &Value, context: &str) -> Result<AugmentationSpec, JsonError> {
        let r = ObjectReader::new(value, context, &["mix_ratio", "n", "seed", "labeled"])?;
        let mix_ratio = r.f64_field("mix_ratio", 1.0)?;
        if mix_ratio < 0.0 || !mix_ratio.is_finite() {
            return Err(r.invalid("mix_ratio", "must be >= 0"));
        }
        Ok(AugmentationSpec {
            mix_ratio,
            n: match r.get("n") {
                None | Some(Value::Null) => None,
                Some(v) => Some(r.as_usize("n", v)?),
            },
            seed: match r.get("seed") {
                None | Some(Value::Null) => None,
                Some(v) => Some(r.as_usize("seed", v)? as u64),
            },
            labeled: r.bool_field("labeled", false)?,
        })
    }

    pub fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("mix_ratio".into(), Value::from(self.mix_ratio));
        if let Some(n) = self.n {
            obj.insert("n".into(), Value::from(n));
        }
        if let Some(s) = self.seed {
            obj.insert("seed".into(), Value::from(s));
        }
        obj.insert("labeled".into(), Value::from(self.labeled));
        Value::Object(obj)
    }
}

/// A section that may be inline JSON or a path to a JSON file.
#[derive(Debug, Clone)]
enum Section {
    Inline(Value),
    File(String),
}

impl Section {
    fn from_json(value: Option<&Value>) -> Option<Section> {
        match value {
            None => None,
            Some(Value::String(path)) => Some(Section::File(path.clone())),
            Some(other) => Some(Section::Inline(other.clone())),
        }
    }

    fn load(&self, base: &Path, what: &str) -> Result<Value, CliError> {
        match self {
            Section::Inline(v) => Ok(v.clone()),
            Section::File(rel) => {
                let path = base.join(rel);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    CliError::Validation(format!("cannot read {what} file {path:?}: {e}"))
                })?;
                Ok(parse_document(&text)?)
            }
        }
    }
}

/// The parsed (but not yet file-resolved) manifest. Parsing touches no
/// files, so arbitrary manifest text can be validated in isolation.
pub struct ExperimentManifest {
    distiller: DistillerKind,
    teacher_spec: Option<Section>,
    student_spec: Section,
    teacher_weights: Vec<String>,
    tasks: Vec<TaskSpec>,
    run: RunParams,
    training: Option<Section>,
    distillation: Option<Section>,
    augmentation: Option<AugmentationSpec>,
}

const MANIFEST_KEYS: &[&str] = &[
    "distiller",
    "teacher_spec",
    "student_spec",
    "teacher_weights",
    "task",
    "run",
    "training",
    "distillation",
    "augmentation",
];

impl ExperimentManifest {
    pub fn from_json_str(text: &str) -> Result<ExperimentManifest, CliError> {
        let doc = parse_document(text)?;
        ExperimentManifest::from_json(&doc)
    }

    pub fn from_json(doc: &Value) -> Result<ExperimentManifest, CliError> {
        let r = ObjectReader::new(doc, "", MANIFEST_KEYS)?;
        let distiller_name = r.required_string("distiller")?;
        let distiller = DistillerKind::from_name(&distiller_name).ok_or_else(|| {
            CliError::Validation(format!(
                "field \"distiller\": unknown distiller \"{distiller_name}\" \
                 (basic_trainer, basic, general, multi_teacher, multi_task)"
            ))
        })?;

        let tasks = match r.require("task")? {
            Value::Array(items) => {
                let mut tasks = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    tasks.push(TaskSpec::from_json(item, &format!("task[{i}]"))?);
                }
                tasks
            }
            single => vec![TaskSpec::from_json(single, "task")?],
        };
        if tasks.is_empty() {
            return Err(CliError::Validation("field \"task\": empty task list".into()));
        }
        match distiller {
            DistillerKind::MultiTask => {
                if tasks.len() < 2 {
                    return Err(CliError::Validation(
                        "multi_task requires \"task\" to be an array of at least 2 tasks".into(),
                    ));
                }
            }
            _ => {
                if tasks.len() != 1 {
                    return Err(CliError::Validation(format!(
                        "distiller \"{}\" takes a single task",
                        distiller.name()
                    )));
                }
            }
        }

        let teacher_weights = match r.get("teacher_weights") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::String(p)) => vec![p.clone()],
            Some(Value::Array(items)) => {
                let mut paths = Vec::with_capacity(items.len());
                for item in items {
                    match item.as_str() {
                        Some(p) => paths.push(p.to_string()),
                        None => {
                            return Err(CliError::Validation(
                                "field \"teacher_weights\": expected path strings".into(),
                            ))
                        }
                    }
                }
                paths
            }
            Some(_) => {
                return Err(CliError::Validation(
                    "field \"teacher_weights\": expected a path or list of paths".into(),
                ))
            }
        };

        let run = match r.get("run") {
            None => RunParams::default(),
            Some(v) => RunParams::from_json(v, "run")?,
        };
        let augmentation = match r.get("augmentation") {
            None | Some(Value::Null) => None,
            Some(v) => Some(AugmentationSpec::from_json(v, "augmentation")?),
        };
        if augmentation.is_some() && distiller == DistillerKind::MultiTask {
            return Err(CliError::Validation(
                "augmentation is not supported with the multi_task distiller".into(),
            ));
        }

        Ok(ExperimentManifest {
            distiller,
            teacher_spec: Section::from_json(r.get("teacher_spec")),
            student_spec: Section::from_json(Some(r.require("student_spec")?))
                .expect("present"),
            teacher_weights,
            tasks,
            run,
            training: Section::from_json(r.get("training")),
            distillation: Section::from_json(r.get("distillation")),
            augmentation,
        })
    }

    pub fn distiller(&self) -> DistillerKind {
        self.distiller
    }

    /// Load referenced files and cross-validate everything; nothing is
    /// trained unless this succeeds.
    pub fn resolve(&self, base_dir: &Path, presets: &Presets) -> Result<ResolvedExperiment, CliError> {
        let student_value = self.student_spec.load(base_dir, "student spec")?;
        let student_spec = ModelSpec::from_json(&student_value, "student_spec")?;
        student_spec.validate(true)?;

        let teacher_spec = match &self.teacher_spec {
            Some(section) => {
                let value = section.load(base_dir, "teacher spec")?;
                let spec = ModelSpec::from_json(&value, "teacher_spec")?;
                spec.validate(true)?;
                Some(spec)
            }
            None => None,
        };

        let training = match &self.training {
            Some(section) => {
                let value = section.load(base_dir, "training config")?;
                training_config_from_value(&value, "training")?
            }
            None => TrainingConfig::default(),
        };
        let distillation = match &self.distillation {
            Some(section) => {
                let value = section.load(base_dir, "distillation config")?;
                distillation_config_from_value(&value, "distillation", presets)?
            }
            None => DistillationConfig::default(),
        };

        let needs_teacher = self.distiller != DistillerKind::BasicTrainer;
        if needs_teacher && teacher_spec.is_none() {
            return Err(CliError::Validation(format!(
                "distiller \"{}\" requires a teacher_spec",
                self.distiller.name()
            )));
        }

        // Heads must fit their tasks.
        let first_task = &self.tasks[0];
        if student_spec.head != first_task.head() {
            return Err(CliError::Validation(format!(
                "student head \"{}\" does not fit the {} task (expected {})",
                student_spec.head.kind_name(),
                first_task.kind.name(),
                first_task.head().kind_name()
            )));
        }
        if let Some(t) = &teacher_spec {
            if self.distiller != DistillerKind::MultiTask && t.head != first_task.head() {
                return Err(CliError::Validation(format!(
                    "teacher head \"{}\" does not fit the {} task",
                    t.head.kind_name(),
                    first_task.kind.name()
                )));
            }
        }
        for task in &self.tasks {
            if task.vocab_size > student_spec.vocab_size
                || teacher_spec.as_ref().is_some_and(|t| task.vocab_size > t.vocab_size)
            {
                return Err(CliError::Validation(format!(
                    "task vocab {} exceeds a model's vocab_size",
                    task.vocab_size
                )));
            }
            let max_positions = student_spec
                .max_positions
                .min(teacher_spec.as_ref().map_or(usize::MAX, |t| t.max_positions));
            if task.length > max_positions {
                return Err(CliError::Validation(format!(
                    "task length {} exceeds max_positions {max_positions}",
                    task.length
                )));
            }
        }

        // Distiller-specific validation, before any training starts.
        match self.distiller {
            DistillerKind::General => {
                validate_against_specs(
                    &distillation,
                    teacher_spec.as_ref().expect("checked above"),
                    &student_spec,
                    presets,
                )?;
            }
            DistillerKind::BasicTrainer | DistillerKind::Basic
            | DistillerKind::MultiTeacher | DistillerKind::MultiTask => {
                if !distillation.intermediate_matches.is_empty() {
                    return Err(CliError::Validation(format!(
                        "distiller \"{}\" does not support intermediate_matches",
                        self.distiller.name()
                    )));
                }
            }
        }
        if self.distiller == DistillerKind::MultiTeacher
            && !self.teacher_weights.is_empty()
            && self.teacher_weights.len() != self.run.num_teachers
        {
            return Err(CliError::Validation(format!(
                "{} teacher_weights paths for num_teachers = {}",
                self.teacher_weights.len(),
                self.run.num_teachers
            )));
        }

        Ok(ResolvedExperiment {
            distiller: self.distiller,
            teacher_spec,
            student_spec,
            teacher_weights: self
                .teacher_weights
                .iter()
                .map(|p| base_dir.join(p))
                .collect(),
            tasks: self.tasks.clone(),
            run: self.run.clone(),
            training,
            distillation,
            augmentation: self.augmentation.clone(),
        })
    }
}

/// A fully loaded, cross-validated experiment ready to execute.
pub struct ResolvedExperiment {
    pub distiller: DistillerKind,
    pub teacher_spec: Option<ModelSpec>,
    pub student_spec: ModelSpec,
    pub teacher_weights: Vec<PathBuf>,
    pub tasks: Vec<TaskSpec>,
    pub run: RunParams,
    pub training: TrainingConfig,
    pub distillation: DistillationConfig,
    pub augmentation: Option<AugmentationSpec>,
}
