//! JSON-backed experiment configuration.
//!
//! Two documents configure a distiller: [`TrainingConfig`] (general run
//! settings) and [`DistillationConfig`] (the distillation method, including
//! intermediate feature matches). Both parse strictly — unknown keys are
//! rejected with a nearest-name suggestion, every violation names its field —
//! and serialize with sorted keys. Defaults live in the two `Default` impls
//! and nowhere else.

use serde_json::{json, Value};
use std::fmt;

use crate::json::{parse_document, to_sorted_string, JsonError, ObjectReader};
use crate::losses::{IntermediateLoss, Presets, ProjectionSide};
use crate::models::{ModelKind, ModelSpec};

/// Configuration parse/validation failure.
#[derive(Debug)]
pub enum ConfigError {
    Json(JsonError),
    /// A referenced loss/scheduler name is not registered.
    UnknownName { field: String, name: String, available: Vec<String> },
    /// Cross-validation against model specs failed; one entry per violation.
    SpecViolations(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Json(e) => write!(f, "{e}"),
            ConfigError::UnknownName { field, name, available } => write!(
                f,
                "field \"{field}\": unknown name \"{name}\" (registered: {})",
                available.join(", ")
            ),
            ConfigError::SpecViolations(violations) => {
                write!(f, "configuration does not fit the model specs:")?;
                for v in violations {
                    write!(f, "\n  - {v}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<JsonError> for ConfigError {
    fn from(e: JsonError) -> Self {
        ConfigError::Json(e)
    }
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Json(JsonError::Invalid { field: field.into(), message: message.into() })
}

/// General training-run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Where loss logs are written.
    pub log_dir: String,
    /// Where student checkpoints are saved.
    pub output_dir: String,
    /// Informational device tag; everything here runs on CPU.
    pub device: String,
    /// Checkpoints (save + callback) per epoch.
    pub ckpt_frequency: usize,
    /// Checkpoint only every n-th epoch.
    pub ckpt_epoch_frequency: usize,
    /// Global-norm gradient clipping threshold, if any.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            log_dir: "logs".into(),
            output_dir: "output".into(),
            device: "cpu".into(),
            ckpt_frequency: 1,
            ckpt_epoch_frequency: 1,
            max_grad_norm: None,
            seed: 42,
        }
    }
}

const TRAINING_KEYS: &[&str] = &[
    "log_dir",
    "output_dir",
    "device",
    "ckpt_frequency",
    "ckpt_epoch_frequency",
    "max_grad_norm",
    "seed",
];

/// Parse a [`TrainingConfig`]; missing fields take their defaults.
pub fn parse_training_config(text: &str) -> Result<TrainingConfig, ConfigError> {
    let doc = parse_document(text)?;
    training_config_from_value(&doc, "")
}

pub fn training_config_from_value(
    value: &Value,
    context: &str,
) -> Result<TrainingConfig, ConfigError> {
    let d = TrainingConfig::default();
    let r = ObjectReader::new(value, context, TRAINING_KEYS)?;
    let cfg = TrainingConfig {
        log_dir: r.string("log_dir", &d.log_dir)?,
        output_dir: r.string("output_dir", &d.output_dir)?,
        device: r.string("device", &d.device)?,
        ckpt_frequency: r.usize_field("ckpt_frequency", d.ckpt_frequency)?,
        ckpt_epoch_frequency: r.usize_field("ckpt_epoch_frequency", d.ckpt_epoch_frequency)?,
        max_grad_norm: match r.get("max_grad_norm") {
            None | Some(Value::Null) => None,
            Some(v) => Some(r.as_f64("max_grad_norm", v)?),
        },
        seed: r.u64_field("seed", d.seed)?,
    };
    if cfg.ckpt_frequency < 1 {
        return Err(invalid("ckpt_frequency", "must be >= 1"));
    }
    if cfg.ckpt_epoch_frequency < 1 {
        return Err(invalid("ckpt_epoch_frequency", "must be >= 1"));
    }
    if let Some(g) = cfg.max_grad_norm {
        if g <= 0.0 || !g.is_finite() {
            return Err(invalid("max_grad_norm", "must be a positive number"));
        }
    }
    Ok(cfg)
}

pub fn serialize_training_config(cfg: &TrainingConfig) -> String {
    let mut obj = json!({
        "log_dir": cfg.log_dir,
        "output_dir": cfg.output_dir,
        "device": cfg.device,
        "ckpt_frequency": cfg.ckpt_frequency,
        "ckpt_epoch_frequency": cfg.ckpt_epoch_frequency,
        "seed": cfg.seed,
    });
    if let Some(g) = cfg.max_grad_norm {
        obj["max_grad_norm"] = json!(g);
    }
    to_sorted_string(&obj)
}

/// One layer index, or a pair of indices for layer-flow (FSP) losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRef {
    Single(usize),
    Pair(usize, usize),
}

impl LayerRef {
    fn to_json(self) -> Value {
        match self {
            LayerRef::Single(i) => json!(i),
            LayerRef::Pair(a, b) => json!([a, b]),
        }
    }

    fn from_json(v: &Value, field: &str) -> Result<LayerRef, ConfigError> {
        match v {
            Value::Number(n) => n
                .as_u64()
                .map(|i| LayerRef::Single(i as usize))
                .ok_or_else(|| invalid(field, "layer index must be a non-negative integer")),
            Value::Array(items) if items.len() == 2 => {
                let mut parsed = [0usize; 2];
                for (slot, item) in parsed.iter_mut().zip(items) {
                    *slot = item
                        .as_u64()
                        .map(|i| i as usize)
                        .ok_or_else(|| invalid(field, "layer pair entries must be integers"))?;
                }
                Ok(LayerRef::Pair(parsed[0], parsed[1]))
            }
            _ => Err(invalid(field, "expected a layer index or a pair [a, b]")),
        }
    }
}

/// Which feature stream a match compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Hidden-state indexing: 0 is the embedding output, k the output of
    /// layer k, so a model with n layers exposes indices 0..=n.
    Hidden,
    /// Attention indexing: k in 1..=n names layer k's attention matrices.
    Attention,
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Hidden => "hidden",
            FeatureKind::Attention => "attention",
        }
    }
}

/// Linear projection declaration: `["linear", in_dim, out_dim]`, with an
/// optional fourth element `"teacher"` to attach it to the teacher side
/// instead of the default student side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub side: ProjectionSide,
}

/// One teacher-layer/student-layer pairing under a named loss and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateMatch {
    pub layer_teacher: LayerRef,
    pub layer_student: LayerRef,
    pub feature: FeatureKind,
    pub loss: String,
    pub weight: f64,
    pub proj: Option<ProjSpec>,
}

const MATCH_KEYS: &[&str] = &["layer_T", "layer_S", "feature", "loss", "weight", "proj"];

impl IntermediateMatch {
    fn to_json(&self) -> Value {
        let mut obj = json!({
            "layer_T": self.layer_teacher.to_json(),
            "layer_S": self.layer_student.to_json(),
            "feature": self.feature.name(),
            "loss": self.loss,
            "weight": self.weight,
        });
        if let Some(p) = self.proj {
            obj["proj"] = match p.side {
                ProjectionSide::Student => json!(["linear", p.in_dim, p.out_dim]),
                ProjectionSide::Teacher => json!(["linear", p.in_dim, p.out_dim, "teacher"]),
            };
        }
        obj
    }

    fn from_json(v: &Value, context: &str, presets: &Presets) -> Result<Self, ConfigError> {
        let r = ObjectReader::new(v, context, MATCH_KEYS)?;
        let loss = r.required_string("loss")?;
        if presets.intermediate_loss(&loss).is_none() {
            return Err(ConfigError::UnknownName {
                field: format!("{context}.loss"),
                name: loss,
                available: presets.intermediate_loss_names().iter().map(|s| s.to_string()).collect(),
            });
        }
        let feature = match r.required_string("feature")?.as_str() {
            "hidden" => FeatureKind::Hidden,
            "attention" => FeatureKind::Attention,
            other => {
                return Err(invalid(
                    &format!("{context}.feature"),
                    format!("unknown feature \"{other}\" (hidden, attention)"),
                ))
            }
        };
        let weight = r.f64_field("weight", 1.0)?;
        if weight < 0.0 || !weight.is_finite() {
            return Err(invalid(&format!("{context}.weight"), "must be >= 0"));
        }
        let proj = match r.get("proj") {
            None | Some(Value::Null) => None,
            Some(Value::Array(items)) => {
                let field = format!("{context}.proj");
                if items.len() != 3 && items.len() != 4 {
                    return Err(invalid(
                        &field,
                        "expected [\"linear\", in_dim, out_dim] with optional \"teacher\"",
                    ));
                }
                match items[0].as_str() {
                    Some("linear") => {}
                    _ => return Err(invalid(&field, "projection kind must be \"linear\"")),
                }
                let dim = |v: &Value| -> Result<usize, ConfigError> {
                    v.as_u64()
                        .filter(|&d| d >= 1)
                        .map(|d| d as usize)
                        .ok_or_else(|| invalid(&field, "dims must be integers >= 1"))
                };
                let side = match items.get(3) {
                    None => ProjectionSide::Student,
                    Some(v) => match v.as_str() {
                        Some("student") => ProjectionSide::Student,
                        Some("teacher") => ProjectionSide::Teacher,
                        _ => {
                            return Err(invalid(&field, "side must be \"student\" or \"teacher\""))
                        }
                    },
                };
                Some(ProjSpec { in_dim: dim(&items[1])?, out_dim: dim(&items[2])?, side })
            }
            Some(_) => {
                return Err(invalid(
                    &format!("{context}.proj"),
                    "expected [\"linear\", in_dim, out_dim]",
                ))
            }
        };
        Ok(IntermediateMatch {
            layer_teacher: LayerRef::from_json(r.require("layer_T")?, &format!("{context}.layer_T"))?,
            layer_student: LayerRef::from_json(r.require("layer_S")?, &format!("{context}.layer_S"))?,
            feature,
            loss,
            weight,
            proj,
        })
    }
}

/// Distillation method settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillationConfig {
    /// "ce", "mse", or the name of a registered custom final loss.
    pub kd_loss_type: String,
    pub temperature: f64,
    pub temperature_scheduler: String,
    pub kd_loss_weight: f64,
    pub hard_label_weight: f64,
    pub kd_loss_weight_scheduler: String,
    pub hard_label_weight_scheduler: String,
    pub probability_shift: bool,
    pub intermediate_matches: Vec<IntermediateMatch>,
}

impl Default for DistillationConfig {
    fn default() -> Self {
        DistillationConfig {
            kd_loss_type: "ce".into(),
            temperature: 8.0,
            temperature_scheduler: "constant_temperature".into(),
            kd_loss_weight: 1.0,
            hard_label_weight: 0.0,
            kd_loss_weight_scheduler: "constant".into(),
            hard_label_weight_scheduler: "constant".into(),
            probability_shift: false,
            intermediate_matches: Vec::new(),
        }
    }
}

const DISTILLATION_KEYS: &[&str] = &[
    "kd_loss_type",
    "temperature",
    "temperature_scheduler",
    "kd_loss_weight",
    "hard_label_weight",
    "kd_loss_weight_scheduler",
    "hard_label_weight_scheduler",
    "probability_shift",
    "intermediate_matches",
];

impl DistillationConfig {
    /// The registry name of the configured KD loss.
    pub fn kd_loss_name(&self) -> String {
        match self.kd_loss_type.as_str() {
            "ce" => "kd_ce".into(),
            "mse" => "kd_mse".into(),
            custom => custom.into(),
        }
    }
}

/// Parse a [`DistillationConfig`], resolving every referenced loss and
/// scheduler name against the presets.
pub fn parse_distillation_config(
    text: &str,
    presets: &Presets,
) -> Result<DistillationConfig, ConfigError> {
    let doc = parse_document(text)?;
    distillation_config_from_value(&doc, "", presets)
}

pub fn distillation_config_from_value(
    value: &Value,
    context: &str,
    presets: &Presets,
) -> Result<DistillationConfig, ConfigError> {
    let d = DistillationConfig::default();
    let r = ObjectReader::new(value, context, DISTILLATION_KEYS)?;
    let mut cfg = DistillationConfig {
        kd_loss_type: r.string("kd_loss_type", &d.kd_loss_type)?,
        temperature: r.f64_field("temperature", d.temperature)?,
        temperature_scheduler: r.string("temperature_scheduler", &d.temperature_scheduler)?,
        kd_loss_weight: r.f64_field("kd_loss_weight", d.kd_loss_weight)?,
        hard_label_weight: r.f64_field("hard_label_weight", d.hard_label_weight)?,
        kd_loss_weight_scheduler: r.string("kd_loss_weight_scheduler", &d.kd_loss_weight_scheduler)?,
        hard_label_weight_scheduler: r
            .string("hard_label_weight_scheduler", &d.hard_label_weight_scheduler)?,
        probability_shift: r.bool_field("probability_shift", d.probability_shift)?,
        intermediate_matches: Vec::new(),
    };

    if cfg.temperature <= 0.0 || !cfg.temperature.is_finite() {
        return Err(invalid("temperature", "must be > 0"));
    }
    for (field, w) in
        [("kd_loss_weight", cfg.kd_loss_weight), ("hard_label_weight", cfg.hard_label_weight)]
    {
        if w < 0.0 || !w.is_finite() {
            return Err(invalid(field, "must be >= 0"));
        }
    }
    if cfg.kd_loss_weight + cfg.hard_label_weight <= 0.0 {
        return Err(invalid(
            "kd_loss_weight",
            "kd_loss_weight + hard_label_weight must be > 0",
        ));
    }
    let kd_name = cfg.kd_loss_name();
    if presets.final_loss(&kd_name).is_none() {
        let mut available = vec!["ce".to_string(), "mse".to_string()];
        available.extend(presets.final_loss_names().iter().map(|s| s.to_string()));
        return Err(ConfigError::UnknownName {
            field: "kd_loss_type".into(),
            name: cfg.kd_loss_type,
            available,
        });
    }
    if presets.temperature_scheduler(&cfg.temperature_scheduler).is_none() {
        return Err(ConfigError::UnknownName {
            field: "temperature_scheduler".into(),
            name: cfg.temperature_scheduler,
            available: presets.temperature_scheduler_names().iter().map(|s| s.to_string()).collect(),
        });
    }
    for (field, name) in [
        ("kd_loss_weight_scheduler", &cfg.kd_loss_weight_scheduler),
        ("hard_label_weight_scheduler", &cfg.hard_label_weight_scheduler),
    ] {
        if presets.weight_scheduler(name).is_none() {
            return Err(ConfigError::UnknownName {
                field: field.into(),
                name: name.clone(),
                available: presets.weight_scheduler_names().iter().map(|s| s.to_string()).collect(),
            });
        }
    }

    if let Some(v) = r.get("intermediate_matches") {
        let items = v.as_array().ok_or_else(|| {
            invalid("intermediate_matches", "expected an array of match objects")
        })?;
        for (i, item) in items.iter().enumerate() {
            let ctx = if context.is_empty() {
                format!("intermediate_matches[{i}]")
            } else {
                format!("{context}.intermediate_matches[{i}]")
            };
            cfg.intermediate_matches.push(IntermediateMatch::from_json(item, &ctx, presets)?);
        }
    }
    Ok(cfg)
}

pub fn serialize_distillation_config(cfg: &DistillationConfig) -> String {
    to_sorted_string(&distillation_config_to_value(cfg))
}

pub fn distillation_config_to_value(cfg: &DistillationConfig) -> Value {
    json!({
        "kd_loss_type": cfg.kd_loss_type,
        "temperature": cfg.temperature,
        "temperature_scheduler": cfg.temperature_scheduler,
        "kd_loss_weight": cfg.kd_loss_weight,
        "hard_label_weight": cfg.hard_label_weight,
        "kd_loss_weight_scheduler": cfg.kd_loss_weight_scheduler,
        "hard_label_weight_scheduler": cfg.hard_label_weight_scheduler,
        "probability_shift": cfg.probability_shift,
        "intermediate_matches": cfg.intermediate_matches.iter().map(|m| m.to_json()).collect::<Vec<_>>(),
    })
}

/// Width of the hidden-state feature at `index` (0 = embeddings).
fn hidden_width(spec: &ModelSpec, index: usize) -> usize {
    match spec.kind {
        ModelKind::TransformerEncoder => spec.hidden_size,
        // The bidirectional layer concatenates both directions.
        ModelKind::Bigru => {
            if index == 0 {
                spec.hidden_size
            } else {
                2 * spec.hidden_size
            }
        }
    }
}

/// Cross-validate every intermediate match against the teacher and student
/// architectures: layer indices in range, loss kind compatible with the
/// feature, and projections present (with the right dims) wherever hidden
/// dimensions differ. All violations are collected and reported together.
pub fn validate_against_specs(
    cfg: &DistillationConfig,
    teacher_spec: &ModelSpec,
    student_spec: &ModelSpec,
    presets: &Presets,
) -> Result<(), ConfigError> {
    let mut violations = Vec::new();
    for (i, m) in cfg.intermediate_matches.iter().enumerate() {
        let mut complain = |msg: String| violations.push(format!("match {i}: {msg}"));
        let kind = match presets.intermediate_loss(&m.loss) {
            Some(k) => k,
            None => {
                complain(format!("loss \"{}\" is not registered", m.loss));
                continue;
            }
        };

        // Feature/loss-kind compatibility.
        match (m.feature, kind) {
            (FeatureKind::Attention, IntermediateLoss::Attention(_)) => {}
            (FeatureKind::Attention, other) => {
                complain(format!(
                    "loss \"{}\" ({} kind) cannot apply to the attention feature",
                    m.loss,
                    other.kind_name()
                ));
                continue;
            }
            (FeatureKind::Hidden, IntermediateLoss::Attention(_)) => {
                complain(format!("loss \"{}\" requires feature \"attention\"", m.loss));
                continue;
            }
            (FeatureKind::Hidden, _) => {}
        }

        let is_fsp = matches!(kind, IntermediateLoss::Fsp(_));
        let index_range = |spec: &ModelSpec, feature: FeatureKind| -> (usize, usize) {
            match feature {
                FeatureKind::Hidden => (0, spec.num_layers),
                FeatureKind::Attention => (1, spec.num_layers),
            }
        };
        let mut indices = |side: &str, spec: &ModelSpec, layer: LayerRef| -> Option<Vec<usize>> {
            let (lo, hi) = index_range(spec, m.feature);
            let list = match (is_fsp, layer) {
                (true, LayerRef::Pair(a, b)) => vec![a, b],
                (true, LayerRef::Single(_)) => {
                    complain(format!("fsp requires layer index pairs on {side}"));
                    return None;
                }
                (false, LayerRef::Single(a)) => vec![a],
                (false, LayerRef::Pair(..)) => {
                    complain(format!("loss \"{}\" takes a single layer index on {side}", m.loss));
                    return None;
                }
            };
            for &idx in &list {
                if idx < lo || idx > hi {
                    complain(format!(
                        "{side} {} index {idx} out of range [{lo}, {hi}] for a {}-layer {}",
                        m.feature.name(),
                        spec.num_layers,
                        spec.kind.name()
                    ));
                    return None;
                }
            }
            Some(list)
        };
        let teacher_idx = indices("layer_T", teacher_spec, m.layer_teacher);
        let student_idx = indices("layer_S", student_spec, m.layer_student);
        let (Some(teacher_idx), Some(student_idx)) = (teacher_idx, student_idx) else {
            continue;
        };

        if m.feature == FeatureKind::Attention {
            for (side, spec) in [("teacher", teacher_spec), ("student", student_spec)] {
                if spec.kind == ModelKind::Bigru {
                    complain(format!("{side} is a bigru and exposes no attention matrices"));
                }
            }
            continue;
        }

        // Hidden-dimension compatibility. NST compares Gram matrices and is
        // exempt; custom pair losses check at run time.
        let needs_alignment = matches!(m.loss.as_str(), "hidden_mse" | "cos" | "fsp");
        if !needs_alignment {
            continue;
        }
        let t_widths: Vec<usize> =
            teacher_idx.iter().map(|&i| hidden_width(teacher_spec, i)).collect();
        let s_widths: Vec<usize> =
            student_idx.iter().map(|&i| hidden_width(student_spec, i)).collect();
        if is_fsp && (t_widths[0] != t_widths[1] || s_widths[0] != s_widths[1]) {
            complain("fsp requires equal hidden widths within each model's layer pair".into());
            continue;
        }
        let (s_width, t_width) = (s_widths[0], t_widths[0]);
        match m.proj {
            None => {
                if s_width != t_width {
                    complain(format!(
                        "hidden dims differ ({s_width} student vs {t_width} teacher) for loss \"{}\"; set proj: [\"linear\", {s_width}, {t_width}]",
                        m.loss
                    ));
                }
            }
            Some(p) => {
                let (expect_in, expect_out) = match p.side {
                    ProjectionSide::Student => (s_width, t_width),
                    ProjectionSide::Teacher => (t_width, s_width),
                };
                if p.in_dim != expect_in || p.out_dim != expect_out {
                    complain(format!(
                        "proj dims [{}, {}] do not map the {} width {expect_in} to {expect_out}",
                        p.in_dim,
                        p.out_dim,
                        match p.side {
                            ProjectionSide::Student => "student",
                            ProjectionSide::Teacher => "teacher",
                        }
                    ));
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::SpecViolations(violations))
    }
}
