//! The training engines: a supervised trainer and four distillers sharing one
//! `train` interface, plus the adaptor runtime, Adam optimizer, data loading,
//! and checkpoint scheduling.
//!
//! An adaptor translates a model's raw outputs into the named feature map the
//! engines consume (`logits`, `hidden`, `attention`, `inputs_mask`, ...); a
//! callback is invoked with the student and the global step at every
//! checkpoint, right after the checkpoint file is written.

mod data;
mod distillers;
mod optim;
mod schedule;

pub use data::{Batch, DataLoader};
pub use distillers::{
    task_sampler, BasicDistiller, BasicTrainer, Distiller, GeneralDistiller,
    MultiTaskDistiller, MultiTeacherDistiller, TaskSlot,
};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use schedule::{compute_checkpoint_steps, compute_checkpoint_steps_with_epoch_frequency};

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, TrainingConfig};
use crate::losses::LossError;
use crate::models::{ForwardOutput, Model, ModelError};
use crate::tasks::{TaskError, Target};
use crate::tensor::{Tensor, TensorError};

/// Errors from training and distillation runs.
#[derive(Debug)]
pub enum DistillError {
    /// A runtime contract violation (missing adaptor key, absent labels,
    /// missing gradient).
    Contract(String),
    /// An invalid setup detected before any training starts.
    Validation(String),
    Config(ConfigError),
    Loss(LossError),
    Model(ModelError),
    Tensor(TensorError),
    Task(TaskError),
    Io(std::io::Error),
}

impl fmt::Display for DistillError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistillError::Contract(msg) => write!(f, "contract error: {msg}"),
            DistillError::Validation(msg) => write!(f, "validation error: {msg}"),
            DistillError::Config(e) => write!(f, "{e}"),
            DistillError::Loss(e) => write!(f, "{e}"),
            DistillError::Model(e) => write!(f, "{e}"),
            DistillError::Tensor(e) => write!(f, "{e}"),
            DistillError::Task(e) => write!(f, "{e}"),
            DistillError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for DistillError {}

impl From<ConfigError> for DistillError {
    fn from(e: ConfigError) -> Self {
        DistillError::Config(e)
    }
}

impl From<LossError> for DistillError {
    fn from(e: LossError) -> Self {
        DistillError::Loss(e)
    }
}

impl From<ModelError> for DistillError {
    fn from(e: ModelError) -> Self {
        DistillError::Model(e)
    }
}

impl From<TensorError> for DistillError {
    fn from(e: TensorError) -> Self {
        DistillError::Tensor(e)
    }
}

impl From<TaskError> for DistillError {
    fn from(e: TaskError) -> Self {
        DistillError::Task(e)
    }
}

impl From<std::io::Error> for DistillError {
    fn from(e: std::io::Error) -> Self {
        DistillError::Io(e)
    }
}

/// One value in the map an adaptor returns.
pub enum AdaptorValue {
    Tensor(Tensor),
    TensorList(Vec<Tensor>),
    Labels(Vec<Option<Target>>),
}

/// The raw key → value map an adaptor produces;
/// [`run_adaptor`] validates and normalizes it.
#[derive(Default)]
pub struct AdaptorMap {
    entries: Vec<(String, AdaptorValue)>,
}

impl AdaptorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &str, value: AdaptorValue) -> Self {
        self.entries.push((key.to_string(), value));
        self
    }
}

/// A function explaining a model's inputs and outputs to the engines.
pub type Adaptor = Box<dyn Fn(&Batch, &ForwardOutput) -> AdaptorMap>;

/// A checkpoint callback: `(student, global_step)`.
pub type CallbackRef<'a> = &'a mut dyn FnMut(&Model, u64);

/// Normalized adaptor output.
pub struct AdaptorOutput {
    /// One tensor, or several (e.g. span start/end logits).
    pub logits: Vec<Tensor>,
    /// Optional `[batch, positions]` 0/1 mask restricting position-shaped
    /// logits rows.
    pub logits_mask: Option<Tensor>,
    /// Precomputed scalar task losses.
    pub losses: Vec<Tensor>,
    pub hidden: Option<Vec<Tensor>>,
    pub attention: Option<Vec<Tensor>>,
    pub inputs_mask: Option<Tensor>,
    pub labels: Option<Vec<Option<Target>>>,
}

const ADAPTOR_KEYS: &[&str] =
    &["logits", "logits_mask", "losses", "hidden", "attention", "inputs_mask", "labels"];

/// Run an adaptor over one batch's model outputs and validate the result:
/// unknown keys are rejected by name, single tensors are wrapped into lists
/// where lists are expected, masks are shape-checked, and at least one of
/// `logits`/`losses` must be present.
pub fn run_adaptor(
    adaptor: &Adaptor,
    batch: &Batch,
    outputs: &ForwardOutput,
) -> Result<AdaptorOutput, DistillError> {
    let map = adaptor(batch, outputs);
    let mut out = AdaptorOutput {
        logits: Vec::new(),
        logits_mask: None,
        losses: Vec::new(),
        hidden: None,
        attention: None,
        inputs_mask: None,
        labels: None,
    };
    let mut seen: Vec<&str> = Vec::new();
    for (key, value) in &map.entries {
        if !ADAPTOR_KEYS.contains(&key.as_str()) {
            return Err(DistillError::Contract(format!(
                "adaptor returned unknown key \"{key}\" (expected one of {})",
                ADAPTOR_KEYS.join(", ")
            )));
        }
        if seen.contains(&key.as_str()) {
            return Err(DistillError::Contract(format!("adaptor returned \"{key}\" twice")));
        }
        seen.push(key.as_str());

        let as_list = |v: &AdaptorValue| -> Result<Vec<Tensor>, DistillError> {
            match v {
                AdaptorValue::Tensor(t) => Ok(vec![t.clone()]),
                AdaptorValue::TensorList(ts) => Ok(ts.clone()),
                AdaptorValue::Labels(_) => Err(DistillError::Contract(format!(
                    "adaptor key \"{key}\" expects tensors, got labels"
                ))),
            }
        };
        let as_single = |v: &AdaptorValue| -> Result<Tensor, DistillError> {
            match v {
                AdaptorValue::Tensor(t) => Ok(t.clone()),
                _ => Err(DistillError::Contract(format!(
                    "adaptor key \"{key}\" expects a single tensor"
                ))),
            }
        };
        match key.as_str() {
            "logits" => out.logits = as_list(value)?,
            "losses" => out.losses = as_list(value)?,
            "hidden" => out.hidden = Some(as_list(value)?),
            "attention" => out.attention = Some(as_list(value)?),
            "logits_mask" => out.logits_mask = Some(as_single(value)?),
            "inputs_mask" => out.inputs_mask = Some(as_single(value)?),
            "labels" => match value {
                AdaptorValue::Labels(l) => out.labels = Some(l.clone()),
                _ => {
                    return Err(DistillError::Contract(
                        "adaptor key \"labels\" expects labels".into(),
                    ))
                }
            },
            _ => unreachable!("key membership checked above"),
        }
    }

    if out.logits.is_empty() && out.losses.is_empty() {
        return Err(DistillError::Contract(
            "adaptor must provide at least \"logits\" or \"losses\"".into(),
        ));
    }
    for loss in &out.losses {
        if loss.numel() != 1 {
            return Err(DistillError::Contract(format!(
                "adaptor \"losses\" entries must be scalars, got shape {:?}",
                loss.shape()
            )));
        }
    }
    let (batch_size, len) = (batch.len(), batch.seq_len());
    for (name, mask) in
        [("inputs_mask", &out.inputs_mask), ("logits_mask", &out.logits_mask)]
    {
        if let Some(m) = mask {
            let ok = m.shape() == [batch_size, len] || m.shape() == [batch_size];
            if !ok {
                return Err(DistillError::Contract(format!(
                    "adaptor \"{name}\" has shape {:?}, expected [{batch_size}, {len}] or [{batch_size}]",
                    m.shape()
                )));
            }
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(DistillError::Contract(format!(
                    "adaptor \"{name}\" entries must be 0 or 1"
                )));
            }
        }
    }
    if let Some(labels) = &out.labels {
        if labels.len() != batch_size {
            return Err(DistillError::Contract(format!(
                "adaptor \"labels\" has {} entries for a batch of {batch_size}",
                labels.len()
            )));
        }
    }
    Ok(out)
}

/// The full-featured adaptor: logits, hidden states, attention matrices,
/// the batch mask and labels, plus a position mask over rank-3 logits.
pub fn standard_adaptor() -> Adaptor {
    Box::new(|batch, outputs| {
        let mask = batch.mask_tensor();
        let mut map = AdaptorMap::new()
            .set("logits", AdaptorValue::TensorList(outputs.logits.clone()))
            .set("hidden", AdaptorValue::TensorList(outputs.hidden.clone()))
            .set("inputs_mask", AdaptorValue::Tensor(mask.clone()))
            .set("labels", AdaptorValue::Labels(batch.targets.clone()));
        if !outputs.attention.is_empty() {
            map = map.set("attention", AdaptorValue::TensorList(outputs.attention.clone()));
        }
        if outputs.logits.iter().any(|l| l.shape().len() == 3) {
            map = map.set("logits_mask", AdaptorValue::Tensor(mask));
        }
        map
    })
}

/// The minimal adaptor: logits only.
pub fn minimal_adaptor() -> Adaptor {
    Box::new(|_, outputs| {
        AdaptorMap::new().set("logits", AdaptorValue::TensorList(outputs.logits.clone()))
    })
}

/// One loss-log line: `step<TAB>name<TAB>value`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLine {
    pub step: u64,
    pub name: String,
    pub value: f64,
}

/// Result of a training run.
pub struct TrainReport {
    pub loss_log: Vec<LogLine>,
    pub checkpoint_steps: Vec<u64>,
    pub callback_steps: Vec<u64>,
    pub saved_files: Vec<PathBuf>,
    pub total_steps: u64,
}

impl TrainReport {
    /// Values logged under `name`, in step order.
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.loss_log.iter().filter(|l| l.name == name).map(|l| l.value).collect()
    }
}

/// Shared training-loop support: the loss log (memory + `train.log`),
/// checkpoint saving, and callback dispatch.
pub(crate) struct LoopSupport {
    pub report: TrainReport,
    checkpoint_steps: Vec<u64>,
    output_dir: PathBuf,
    log_file: File,
}

impl LoopSupport {
    pub fn new(
        training: &TrainingConfig,
        steps_per_epoch: usize,
        num_epochs: usize,
    ) -> Result<LoopSupport, DistillError> {
        let checkpoint_steps = compute_checkpoint_steps_with_epoch_frequency(
            steps_per_epoch,
            num_epochs,
            training.ckpt_frequency,
            training.ckpt_epoch_frequency,
        )?;
        let log_dir = Path::new(&training.log_dir);
        let output_dir = Path::new(&training.output_dir);
        std::fs::create_dir_all(log_dir)?;
        std::fs::create_dir_all(output_dir)?;
        let log_file =
            OpenOptions::new().create(true).append(true).open(log_dir.join("train.log"))?;
        Ok(LoopSupport {
            report: TrainReport {
                loss_log: Vec::new(),
                checkpoint_steps: checkpoint_steps.clone(),
                callback_steps: Vec::new(),
                saved_files: Vec::new(),
                total_steps: (steps_per_epoch * num_epochs) as u64,
            },
            checkpoint_steps,
            output_dir: output_dir.to_path_buf(),
            log_file,
        })
    }

    pub fn progress(&self, step: u64) -> f64 {
        step as f64 / self.report.total_steps as f64
    }

    pub fn log(&mut self, step: u64, name: &str, value: f64) -> Result<(), DistillError> {
        writeln!(self.log_file, "{step}\t{name}\t{value}")?;
        self.report.loss_log.push(LogLine { step, name: name.to_string(), value });
        Ok(())
    }

    /// Save the model and invoke the callback when `step` is a checkpoint.
    pub fn maybe_checkpoint(
        &mut self,
        step: u64,
        model: &Model,
        callback: &mut Option<CallbackRef<'_>>,
    ) -> Result<(), DistillError> {
        if !self.checkpoint_steps.contains(&step) {
            return Ok(());
        }
        let path = self.output_dir.join(format!("gs{step}"));
        crate::models::save_weights(model, &path)?;
        self.report.saved_files.push(path);
        if let Some(cb) = callback {
            cb(model, step);
        }
        self.report.callback_steps.push(step);
        Ok(())
    }
}
