//! Distillation losses and schedulers, organized as a name-indexed registry
//! (the "presets") that configuration files reference.
//!
//! Built-in losses: `kd_ce`, `kd_mse`, `hard_label` (final outputs) and
//! `hidden_mse`, `cos`, `attention_mse`, `attention_ce`, `fsp`, `nst`
//! (intermediate features). Built-in schedulers: `constant`, `linear_decay`,
//! `linear_growth` (loss weights) and `constant_temperature`,
//! `flsw_temperature` (temperatures). Custom entries can be registered under
//! new names and are then selectable from configuration.
//!
//! Teacher-side values are treated as constants everywhere: gradients flow
//! only into student logits, student features, and projection parameters.

mod functions;
mod schedulers;

pub use functions::{
    attention_loss, cos_loss, fsp_loss, hard_label_loss, hidden_mse_loss, kd_ce_loss,
    kd_mse_loss, nst_loss, probability_shift, softmax_with_temperature, AttentionLossMode,
};
pub use schedulers::{
    evaluate_temperature_scheduler, evaluate_weight_scheduler, flsw_temperature_with_beta,
};

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use crate::tensor::{Tensor, TensorError};

/// Errors from loss evaluation and registry operations.
#[derive(Debug)]
pub enum LossError {
    /// Bad configuration: non-positive temperature, missing projection, an
    /// unknown registry name, and similar.
    Config(String),
    /// Bad runtime input: out-of-range label, fully masked input.
    Input(String),
    /// Registering a name that already exists.
    DuplicateName(String),
    Tensor(TensorError),
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::Config(msg) => write!(f, "loss configuration error: {msg}"),
            LossError::Input(msg) => write!(f, "loss input error: {msg}"),
            LossError::DuplicateName(name) => {
                write!(f, "name \"{name}\" is already registered")
            }
            LossError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LossError {}

impl From<TensorError> for LossError {
    fn from(e: TensorError) -> Self {
        LossError::Tensor(e)
    }
}

/// Temperature for soft-label losses: one value for the whole batch or one
/// per sample.
#[derive(Debug, Clone)]
pub enum Temperature {
    Scalar(f64),
    PerSample(Vec<f64>),
}

impl Temperature {
    pub fn validate(&self) -> Result<(), LossError> {
        let bad = match self {
            Temperature::Scalar(t) => *t <= 0.0 || !t.is_finite(),
            Temperature::PerSample(ts) => {
                ts.is_empty() || ts.iter().any(|t| *t <= 0.0 || !t.is_finite())
            }
        };
        if bad {
            return Err(LossError::Config("temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// Inputs to a final-output (soft label) loss.
///
/// Logits are `[batch, classes]` or `[batch, positions, classes]`; the
/// teacher side is treated as a constant. `logits_mask` (same shape minus the
/// class axis) excludes rows from the reduction. `gold_labels` holds one
/// optional label per row (row-major over all axes except the class axis) and
/// feeds both the hard-label loss and probability shift.
pub struct SoftLabelInputs {
    pub teacher_logits: Tensor,
    pub student_logits: Tensor,
    pub temperature: Temperature,
    pub gold_labels: Option<Vec<Option<usize>>>,
    pub logits_mask: Option<Tensor>,
    /// Swap the teacher's top probability onto the gold label before the
    /// cross-entropy (`kd_ce` only).
    pub probability_shift: bool,
}

impl SoftLabelInputs {
    pub fn new(teacher_logits: Tensor, student_logits: Tensor, temperature: Temperature) -> Self {
        SoftLabelInputs {
            teacher_logits,
            student_logits,
            temperature,
            gold_labels: None,
            logits_mask: None,
            probability_shift: false,
        }
    }
}

/// Which side of a [`FeaturePair`] a projection maps into the other's space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionSide {
    /// Project the student feature into the teacher's dimension (default:
    /// the trainable party carries the projection).
    Student,
    Teacher,
}

/// A learned linear map aligning mismatched feature dimensions; trained with
/// the student.
#[derive(Clone)]
pub struct Projection {
    pub weight: Tensor,
    pub bias: Tensor,
    pub side: ProjectionSide,
}

impl Projection {
    pub fn apply(&self, feature: &Tensor) -> Result<Tensor, LossError> {
        Ok(feature.matmul(&self.weight)?.add(&self.bias)?)
    }
}

/// One teacher-layer/student-layer feature pairing: `[batch, positions, d]`
/// features, an optional positions mask, and an optional projection.
pub struct FeaturePair {
    pub teacher: Tensor,
    pub student: Tensor,
    /// `[batch, positions]` 0/1; `None` means every position counts.
    pub inputs_mask: Option<Tensor>,
    pub projection: Option<Projection>,
}

impl FeaturePair {
    pub fn new(teacher: Tensor, student: Tensor) -> Self {
        FeaturePair { teacher, student, inputs_mask: None, projection: None }
    }

    pub fn with_mask(mut self, mask: Tensor) -> Self {
        self.inputs_mask = Some(mask);
        self
    }

    pub fn with_projection(mut self, projection: Projection) -> Self {
        self.projection = Some(projection);
        self
    }

    /// Teacher and student features after the optional projection, without
    /// requiring the dimensions to match (NST compares Gram matrices and is
    /// dimension-agnostic).
    pub fn projected(&self) -> Result<(Tensor, Tensor), LossError> {
        let (mut teacher, mut student) = (self.teacher.clone(), self.student.clone());
        if let Some(proj) = &self.projection {
            match proj.side {
                ProjectionSide::Student => student = proj.apply(&student)?,
                ProjectionSide::Teacher => teacher = proj.apply(&teacher)?,
            }
        }
        Ok((teacher, student))
    }

    /// As [`Self::projected`], but the dimensions must agree afterwards.
    pub fn aligned(&self) -> Result<(Tensor, Tensor), LossError> {
        let (teacher, student) = self.projected()?;
        let dt = *teacher.shape().last().expect("rank >= 1");
        let ds = *student.shape().last().expect("rank >= 1");
        if dt != ds {
            return Err(LossError::Config(format!(
                "feature dims differ ({ds} student vs {dt} teacher); set proj: [\"linear\", {ds}, {dt}]"
            )));
        }
        Ok((teacher, student))
    }
}

/// Inputs to an attention-matrix loss: per-layer attention stacks
/// `[batch, heads, positions, positions]`; head counts may differ and are
/// averaged away before comparison.
pub struct AttentionInputs {
    pub teacher: Tensor,
    pub student: Tensor,
    pub inputs_mask: Option<Tensor>,
}

/// A final-output loss: differentiable scalar from soft-label inputs.
pub type FinalLossFn = Rc<dyn Fn(&SoftLabelInputs) -> Result<Tensor, LossError>>;

/// An intermediate loss over one feature pair.
pub type PairLossFn = Rc<dyn Fn(&FeaturePair) -> Result<Tensor, LossError>>;

/// An intermediate loss over attention stacks.
pub type AttentionLossFn = Rc<dyn Fn(&AttentionInputs) -> Result<Tensor, LossError>>;

/// An intermediate loss over two layer pairs (layer-flow losses).
pub type FspLossFn = Rc<dyn Fn(&FeaturePair, &FeaturePair) -> Result<Tensor, LossError>>;

/// The calling convention of a registered intermediate loss.
#[derive(Clone)]
pub enum IntermediateLoss {
    Pair(PairLossFn),
    Attention(AttentionLossFn),
    Fsp(FspLossFn),
}

impl IntermediateLoss {
    pub fn kind_name(&self) -> &'static str {
        match self {
            IntermediateLoss::Pair(_) => "pair",
            IntermediateLoss::Attention(_) => "attention",
            IntermediateLoss::Fsp(_) => "fsp",
        }
    }
}

/// A weight scheduler: `(base_weight, progress in [0,1]) -> weight`.
pub type WeightSchedulerFn = Rc<dyn Fn(f64, f64) -> f64>;

/// A temperature scheduler: `(base_T, teacher_logits, student_logits) ->
/// per-sample temperatures`.
pub type TemperatureSchedulerFn =
    Rc<dyn Fn(f64, &Tensor, &Tensor) -> Result<Vec<f64>, LossError>>;

/// A scheduler being registered (weight and temperature schedulers live in
/// separate namespaces, matching the config fields that reference them).
pub enum SchedulerFn {
    Weight(WeightSchedulerFn),
    Temperature(TemperatureSchedulerFn),
}

/// The preset registry: every loss and scheduler selectable by name from a
/// [`crate::config::DistillationConfig`]. Built once at setup, read-only
/// during training.
#[derive(Clone)]
pub struct Presets {
    final_losses: BTreeMap<String, FinalLossFn>,
    intermediate_losses: BTreeMap<String, IntermediateLoss>,
    weight_schedulers: BTreeMap<String, WeightSchedulerFn>,
    temperature_schedulers: BTreeMap<String, TemperatureSchedulerFn>,
}

impl Default for Presets {
    fn default() -> Self {
        let mut p = Presets {
            final_losses: BTreeMap::new(),
            intermediate_losses: BTreeMap::new(),
            weight_schedulers: BTreeMap::new(),
            temperature_schedulers: BTreeMap::new(),
        };
        p.final_losses.insert("kd_ce".into(), Rc::new(kd_ce_loss) as FinalLossFn);
        p.final_losses.insert("kd_mse".into(), Rc::new(kd_mse_loss) as FinalLossFn);
        p.final_losses.insert(
            "hard_label".into(),
            Rc::new(|inputs: &SoftLabelInputs| {
                let gold = inputs.gold_labels.as_ref().ok_or_else(|| {
                    LossError::Input("hard_label loss requires gold labels".into())
                })?;
                hard_label_loss(&inputs.student_logits, gold, inputs.logits_mask.as_ref())
            }) as FinalLossFn,
        );

        p.intermediate_losses
            .insert("hidden_mse".into(), IntermediateLoss::Pair(Rc::new(hidden_mse_loss)));
        p.intermediate_losses.insert("cos".into(), IntermediateLoss::Pair(Rc::new(cos_loss)));
        p.intermediate_losses.insert(
            "attention_mse".into(),
            IntermediateLoss::Attention(Rc::new(|inputs: &AttentionInputs| {
                attention_loss(inputs, AttentionLossMode::Mse)
            })),
        );
        p.intermediate_losses.insert(
            "attention_ce".into(),
            IntermediateLoss::Attention(Rc::new(|inputs: &AttentionInputs| {
                attention_loss(inputs, AttentionLossMode::Ce)
            })),
        );
        p.intermediate_losses.insert("fsp".into(), IntermediateLoss::Fsp(Rc::new(fsp_loss)));
        p.intermediate_losses.insert("nst".into(), IntermediateLoss::Pair(Rc::new(nst_loss)));

        p.weight_schedulers
            .insert("constant".into(), Rc::new(|base, _| base) as WeightSchedulerFn);
        p.weight_schedulers.insert(
            "linear_decay".into(),
            Rc::new(|base, progress| base * (1.0 - progress)) as WeightSchedulerFn,
        );
        p.weight_schedulers.insert(
            "linear_growth".into(),
            Rc::new(|base, progress| base * progress) as WeightSchedulerFn,
        );

        p.temperature_schedulers.insert(
            "constant_temperature".into(),
            Rc::new(schedulers::constant_temperature) as TemperatureSchedulerFn,
        );
        p.temperature_schedulers.insert(
            "flsw_temperature".into(),
            flsw_temperature_with_beta(1.0),
        );
        p
    }
}

impl Presets {
    fn check_loss_name_free(&self, name: &str) -> Result<(), LossError> {
        if self.final_losses.contains_key(name) || self.intermediate_losses.contains_key(name) {
            return Err(LossError::DuplicateName(name.to_string()));
        }
        Ok(())
    }

    /// Register a custom final-output loss under a new name.
    pub fn register_final_loss(
        &mut self,
        name: &str,
        f: FinalLossFn,
    ) -> Result<(), LossError> {
        self.check_loss_name_free(name)?;
        self.final_losses.insert(name.to_string(), f);
        Ok(())
    }

    /// Register a custom intermediate loss (feature-pair convention) under a
    /// new name.
    pub fn register_intermediate_loss(
        &mut self,
        name: &str,
        f: PairLossFn,
    ) -> Result<(), LossError> {
        self.check_loss_name_free(name)?;
        self.intermediate_losses.insert(name.to_string(), IntermediateLoss::Pair(f));
        Ok(())
    }

    /// Register a custom scheduler under a new name.
    pub fn register_scheduler(&mut self, name: &str, f: SchedulerFn) -> Result<(), LossError> {
        match f {
            SchedulerFn::Weight(f) => {
                if self.weight_schedulers.contains_key(name) {
                    return Err(LossError::DuplicateName(name.to_string()));
                }
                self.weight_schedulers.insert(name.to_string(), f);
            }
            SchedulerFn::Temperature(f) => {
                if self.temperature_schedulers.contains_key(name) {
                    return Err(LossError::DuplicateName(name.to_string()));
                }
                self.temperature_schedulers.insert(name.to_string(), f);
            }
        }
        Ok(())
    }

    pub fn final_loss(&self, name: &str) -> Option<&FinalLossFn> {
        self.final_losses.get(name)
    }

    pub fn intermediate_loss(&self, name: &str) -> Option<&IntermediateLoss> {
        self.intermediate_losses.get(name)
    }

    pub fn weight_scheduler(&self, name: &str) -> Option<&WeightSchedulerFn> {
        self.weight_schedulers.get(name)
    }

    pub fn temperature_scheduler(&self, name: &str) -> Option<&TemperatureSchedulerFn> {
        self.temperature_schedulers.get(name)
    }

    pub fn final_loss_names(&self) -> Vec<&str> {
        self.final_losses.keys().map(String::as_str).collect()
    }

    pub fn intermediate_loss_names(&self) -> Vec<&str> {
        self.intermediate_losses.keys().map(String::as_str).collect()
    }

    pub fn weight_scheduler_names(&self) -> Vec<&str> {
        self.weight_schedulers.keys().map(String::as_str).collect()
    }

    pub fn temperature_scheduler_names(&self) -> Vec<&str> {
        self.temperature_schedulers.keys().map(String::as_str).collect()
    }
}
