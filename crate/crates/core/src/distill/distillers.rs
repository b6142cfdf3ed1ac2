//! The five training engines. All expose the same `train` entry:
//! `train(optimizer, num_epochs, callback)`; data loaders and models are
//! supplied at construction, so the engines are interchangeable.

use super::{
    clip_global_norm, run_adaptor, Adam, Adaptor, AdaptorOutput, Batch, CallbackRef,
    DataLoader, DistillError, LoopSupport, TrainReport,
};
use crate::config::{DistillationConfig, FeatureKind, IntermediateMatch, LayerRef, TrainingConfig};
use crate::losses::{
    evaluate_temperature_scheduler, evaluate_weight_scheduler, hard_label_loss, AttentionInputs,
    FeaturePair, IntermediateLoss, Presets, Projection, SoftLabelInputs, Temperature,
};
use crate::models::Model;
use crate::rng::Rng;
use crate::tasks::Target;
use crate::tensor::{Init, Tensor};

/// The uniform training interface of every engine.
pub trait Distiller {
    /// Run `num_epochs` of training. The student (and any projection
    /// parameters) must be optimized by `optimizer`; the callback fires at
    /// every checkpoint step after the corresponding save.
    fn train(
        &mut self,
        optimizer: &mut Adam,
        num_epochs: usize,
        callback: Option<CallbackRef<'_>>,
    ) -> Result<TrainReport, DistillError>;
}

/// Per-row gold labels for the `index`-th logits tensor, derived from the
/// batch targets: class labels for one `[batch, classes]` tensor, start/end
/// positions for span logit pairs, per-position tags for rank-3 logits.
fn gold_rows_for_logits(
    labels: &[Option<Target>],
    index: usize,
    logits_count: usize,
    logits: &Tensor,
) -> Result<Vec<Option<usize>>, DistillError> {
    let shape = logits.shape();
    let batch = shape[0];
    if labels.len() != batch {
        return Err(DistillError::Contract(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    match shape.len() {
        2 => {
            let mut rows = Vec::with_capacity(batch);
            for target in labels {
                rows.push(match target {
                    None => None,
                    Some(Target::Class(c)) => Some(*c),
                    Some(Target::Span(s, e)) => {
                        if logits_count != 2 || index > 1 {
                            return Err(DistillError::Contract(
                                "span labels expect exactly two logits tensors (start, end)"
                                    .into(),
                            ));
                        }
                        Some(if index == 0 { *s } else { *e })
                    }
                    Some(Target::Tags(_)) => {
                        return Err(DistillError::Contract(
                            "per-position tags cannot label [batch, classes] logits".into(),
                        ))
                    }
                });
            }
            Ok(rows)
        }
        3 => {
            let len = shape[1];
            let mut rows = Vec::with_capacity(batch * len);
            for target in labels {
                match target {
                    None => rows.extend(std::iter::repeat_n(None, len)),
                    Some(Target::Tags(tags)) => {
                        if tags.len() != len {
                            return Err(DistillError::Contract(format!(
                                "{} tags for {len} positions",
                                tags.len()
                            )));
                        }
                        rows.extend(tags.iter().map(|&t| Some(t)));
                    }
                    Some(_) => {
                        return Err(DistillError::Contract(
                            "rank-3 logits require per-position tag labels".into(),
                        ))
                    }
                }
            }
            Ok(rows)
        }
        other => Err(DistillError::Contract(format!(
            "logits must be rank 2 or 3, got rank {other}"
        ))),
    }
}

/// An intermediate match resolved against the presets, with its projection
/// parameters instantiated.
struct PreparedMatch {
    config: IntermediateMatch,
    loss: IntermediateLoss,
    projection: Option<Projection>,
    log_name: String,
}

fn prepare_matches(
    cfg: &DistillationConfig,
    presets: &Presets,
    seed: u64,
) -> Result<Vec<PreparedMatch>, DistillError> {
    let mut out = Vec::with_capacity(cfg.intermediate_matches.len());
    for (i, m) in cfg.intermediate_matches.iter().enumerate() {
        let loss = presets
            .intermediate_loss(&m.loss)
            .ok_or_else(|| {
                DistillError::Validation(format!("loss \"{}\" is not registered", m.loss))
            })?
            .clone();
        let projection = match m.proj {
            None => None,
            Some(p) => {
                let weight_seed = Rng::derive(seed, 0x9407 + i as u64);
                let weight = Tensor::create(
                    &[p.in_dim, p.out_dim],
                    Init::Normal { mean: 0.0, std: 0.02, seed: weight_seed },
                )?
                .requiring_grad();
                let bias = Tensor::zeros(&[p.out_dim])?.requiring_grad();
                Some(Projection { weight, bias, side: p.side })
            }
        };
        out.push(PreparedMatch {
            config: m.clone(),
            loss,
            projection,
            log_name: format!("match{i}_{}", m.loss),
        });
    }
    Ok(out)
}

fn match_projection_params(matches: &[PreparedMatch]) -> Vec<Tensor> {
    matches
        .iter()
        .filter_map(|m| m.projection.as_ref())
        .flat_map(|p| [p.weight.clone(), p.bias.clone()])
        .collect()
}

fn feature_at(
    out: &AdaptorOutput,
    side: &str,
    feature: FeatureKind,
    index: usize,
    match_name: &str,
) -> Result<Tensor, DistillError> {
    let (list, key, pos) = match feature {
        FeatureKind::Hidden => (&out.hidden, "hidden", index),
        FeatureKind::Attention => (&out.attention, "attention", index - 1),
    };
    let list = list.as_ref().ok_or_else(|| {
        DistillError::Contract(format!(
            "{match_name} requires \"{key}\" from the {side} adaptor"
        ))
    })?;
    list.get(pos).cloned().ok_or_else(|| {
        DistillError::Contract(format!(
            "{match_name}: {side} \"{key}\" has {} entries, index {index} out of range",
            list.len()
        ))
    })
}

fn single_index(layer: LayerRef, match_name: &str) -> Result<usize, DistillError> {
    match layer {
        LayerRef::Single(i) => Ok(i),
        LayerRef::Pair(..) => Err(DistillError::Validation(format!(
            "{match_name} takes a single layer index"
        ))),
    }
}

fn pair_index(layer: LayerRef, match_name: &str) -> Result<(usize, usize), DistillError> {
    match layer {
        LayerRef::Pair(a, b) => Ok((a, b)),
        LayerRef::Single(_) => Err(DistillError::Validation(format!(
            "{match_name} requires layer index pairs"
        ))),
    }
}

/// A batch's total loss with its logged components.
struct LossBreakdown {
    total: Tensor,
    components: Vec<(String, f64)>,
}

/// Assemble the distillation loss for one batch:
/// `w_kd(progress) * kd + w_hl(progress) * hard + sum_m w_m * loss_m`.
fn distill_batch_loss(
    teacher_out: &AdaptorOutput,
    student_out: &AdaptorOutput,
    cfg: &DistillationConfig,
    presets: &Presets,
    matches: &[PreparedMatch],
    progress: f64,
) -> Result<LossBreakdown, DistillError> {
    if teacher_out.logits.len() != student_out.logits.len() {
        return Err(DistillError::Contract(format!(
            "teacher produced {} logits tensors, student {}",
            teacher_out.logits.len(),
            student_out.logits.len()
        )));
    }
    let w_kd =
        evaluate_weight_scheduler(presets, &cfg.kd_loss_weight_scheduler, cfg.kd_loss_weight, progress)?;
    let w_hl = evaluate_weight_scheduler(
        presets,
        &cfg.hard_label_weight_scheduler,
        cfg.hard_label_weight,
        progress,
    )?;
    let temperatures = evaluate_temperature_scheduler(
        presets,
        &cfg.temperature_scheduler,
        cfg.temperature,
        &teacher_out.logits[0],
        &student_out.logits[0],
    )?;
    let kd_fn = presets.final_loss(&cfg.kd_loss_name()).ok_or_else(|| {
        DistillError::Validation(format!("KD loss \"{}\" is not registered", cfg.kd_loss_name()))
    })?;

    let mut components = Vec::new();
    let scale = 1.0 / teacher_out.logits.len() as f64;

    // Soft-label term, averaged over the logits list.
    let mut kd_term: Option<Tensor> = None;
    for (i, (z_t, z_s)) in teacher_out.logits.iter().zip(&student_out.logits).enumerate() {
        let gold = match &student_out.labels {
            Some(labels) => {
                Some(gold_rows_for_logits(labels, i, student_out.logits.len(), z_s)?)
            }
            None => None,
        };
        let inputs = SoftLabelInputs {
            teacher_logits: z_t.clone(),
            student_logits: z_s.clone(),
            temperature: Temperature::PerSample(temperatures.clone()),
            gold_labels: gold,
            logits_mask: student_out.logits_mask.clone(),
            probability_shift: cfg.probability_shift,
        };
        let term = kd_fn(&inputs)?.mul_scalar(scale);
        kd_term = Some(match kd_term {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    let kd_term = kd_term.expect("at least one logits tensor");
    components.push(("kd".to_string(), kd_term.item()));
    let mut total = kd_term.mul_scalar(w_kd);

    // Hard-label term.
    if cfg.hard_label_weight > 0.0 {
        let labels = student_out.labels.as_ref().ok_or_else(|| {
            DistillError::Contract(
                "hard_label_weight > 0 but the student adaptor provided no labels".into(),
            )
        })?;
        let mut hard_term: Option<Tensor> = None;
        for (i, z_s) in student_out.logits.iter().enumerate() {
            let gold = gold_rows_for_logits(labels, i, student_out.logits.len(), z_s)?;
            let term = hard_label_loss(z_s, &gold, student_out.logits_mask.as_ref())?
                .mul_scalar(scale);
            hard_term = Some(match hard_term {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
        let hard_term = hard_term.expect("at least one logits tensor");
        components.push(("hard_label".to_string(), hard_term.item()));
        total = total.add(&hard_term.mul_scalar(w_hl))?;
    }

    // Intermediate matches.
    for m in matches {
        let name = &m.log_name;
        let value = match &m.loss {
            IntermediateLoss::Pair(f) => {
                let t_idx = single_index(m.config.layer_teacher, name)?;
                let s_idx = single_index(m.config.layer_student, name)?;
                let mut pair = FeaturePair::new(
                    feature_at(teacher_out, "teacher", m.config.feature, t_idx, name)?,
                    feature_at(student_out, "student", m.config.feature, s_idx, name)?,
                );
                if let Some(mask) = &student_out.inputs_mask {
                    pair = pair.with_mask(mask.clone());
                }
                if let Some(p) = &m.projection {
                    pair = pair.with_projection(p.clone());
                }
                f(&pair)?
            }
            IntermediateLoss::Attention(f) => {
                let t_idx = single_index(m.config.layer_teacher, name)?;
                let s_idx = single_index(m.config.layer_student, name)?;
                let inputs = AttentionInputs {
                    teacher: feature_at(teacher_out, "teacher", FeatureKind::Attention, t_idx, name)?,
                    student: feature_at(student_out, "student", FeatureKind::Attention, s_idx, name)?,
                    inputs_mask: student_out.inputs_mask.clone(),
                };
                f(&inputs)?
            }
            IntermediateLoss::Fsp(f) => {
                let (t_a, t_b) = pair_index(m.config.layer_teacher, name)?;
                let (s_a, s_b) = pair_index(m.config.layer_student, name)?;
                let build = |t_idx: usize, s_idx: usize| -> Result<FeaturePair, DistillError> {
                    let mut pair = FeaturePair::new(
                        feature_at(teacher_out, "teacher", FeatureKind::Hidden, t_idx, name)?,
                        feature_at(student_out, "student", FeatureKind::Hidden, s_idx, name)?,
                    );
                    if let Some(mask) = &student_out.inputs_mask {
                        pair = pair.with_mask(mask.clone());
                    }
                    if let Some(p) = &m.projection {
                        pair = pair.with_projection(p.clone());
                    }
                    Ok(pair)
                };
                f(&build(t_a, s_a)?, &build(t_b, s_b)?)?
            }
        };
        components.push((name.clone(), value.item()));
        total = total.add(&value.mul_scalar(m.config.weight))?;
    }

    components.insert(0, ("total".to_string(), total.item()));
    components.push(("kd_weight".to_string(), w_kd));
    components.push(("hard_label_weight".to_string(), w_hl));
    Ok(LossBreakdown { total, components })
}

/// The single-task training loop shared by the trainer and the single- and
/// multi-teacher distillers.
fn run_single_loader_loop<F>(
    model: &Model,
    loader: &DataLoader,
    training: &TrainingConfig,
    optimizer: &mut Adam,
    num_epochs: usize,
    mut callback: Option<CallbackRef<'_>>,
    mut batch_loss: F,
) -> Result<TrainReport, DistillError>
where
    F: FnMut(&Batch, f64) -> Result<LossBreakdown, DistillError>,
{
    if num_epochs == 0 {
        return Err(DistillError::Validation("num_epochs must be >= 1".into()));
    }
    let steps_per_epoch = loader.batches_per_epoch();
    let mut support = LoopSupport::new(training, steps_per_epoch, num_epochs)?;
    let mut step: u64 = 0;
    for epoch in 1..=num_epochs {
        for batch in loader.epoch_batches(epoch) {
            step += 1;
            let breakdown = batch_loss(&batch, support.progress(step))?;
            breakdown.total.backward()?;
            if let Some(max_norm) = training.max_grad_norm {
                clip_global_norm(optimizer.params(), max_norm);
            }
            optimizer.step()?;
            for (name, value) in &breakdown.components {
                support.log(step, name, *value)?;
            }
            support.maybe_checkpoint(step, model, &mut callback)?;
        }
    }
    Ok(support.report)
}

/// Supervised training on labeled data; unifies the teacher-training and
/// distillation workflows.
pub struct BasicTrainer {
    model: Model,
    adaptor: Adaptor,
    loader: DataLoader,
    training: TrainingConfig,
}

impl BasicTrainer {
    pub fn new(
        model: Model,
        adaptor: Adaptor,
        loader: DataLoader,
        training: TrainingConfig,
    ) -> BasicTrainer {
        BasicTrainer { model, adaptor, loader, training }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

impl Distiller for BasicTrainer {
    fn train(
        &mut self,
        optimizer: &mut Adam,
        num_epochs: usize,
        callback: Option<CallbackRef<'_>>,
    ) -> Result<TrainReport, DistillError> {
        let model = &self.model;
        let adaptor = &self.adaptor;
        run_single_loader_loop(
            model,
            &self.loader,
            &self.training,
            optimizer,
            num_epochs,
            callback,
            |batch, _progress| {
                let outputs = model.forward(&batch.token_ids, &batch.inputs_mask)?;
                let out = run_adaptor(adaptor, batch, &outputs)?;
                let loss = if !out.losses.is_empty() {
                    let mut acc = out.losses[0].clone();
                    for l in &out.losses[1..] {
                        acc = acc.add(l)?;
                    }
                    acc.mul_scalar(1.0 / out.losses.len() as f64)
                } else {
                    let labels = out.labels.as_ref().ok_or_else(|| {
                        DistillError::Contract(
                            "trainer adaptor must provide \"losses\" or logits with \"labels\""
                                .into(),
                        )
                    })?;
                    let mut acc: Option<Tensor> = None;
                    for (i, z) in out.logits.iter().enumerate() {
                        let gold = gold_rows_for_logits(labels, i, out.logits.len(), z)?;
                        let term = hard_label_loss(z, &gold, out.logits_mask.as_ref())?
                            .mul_scalar(1.0 / out.logits.len() as f64);
                        acc = Some(match acc {
                            None => term,
                            Some(a) => a.add(&term)?,
                        });
                    }
                    acc.ok_or_else(|| {
                        DistillError::Contract("trainer adaptor provided no logits".into())
                    })?
                };
                let value = loss.item();
                Ok(LossBreakdown { total: loss, components: vec![("task".to_string(), value)] })
            },
        )
    }
}

/// Single-task single-teacher distillation with soft-label and hard-label
/// losses only.
pub struct BasicDistiller {
    core: DistillCore,
}

/// Shared state of the teacher-student engines.
struct DistillCore {
    teacher: Model,
    student: Model,
    adaptor_teacher: Adaptor,
    adaptor_student: Adaptor,
    loader: DataLoader,
    training: TrainingConfig,
    distill: DistillationConfig,
    presets: Presets,
    matches: Vec<PreparedMatch>,
}

impl DistillCore {
    fn teacher_output(&self, batch: &Batch) -> Result<AdaptorOutput, DistillError> {
        let raw = self.teacher.forward(&batch.token_ids, &batch.inputs_mask)?;
        run_adaptor(&self.adaptor_teacher, batch, &raw)
    }

    fn run(
        &self,
        optimizer: &mut Adam,
        num_epochs: usize,
        callback: Option<CallbackRef<'_>>,
    ) -> Result<TrainReport, DistillError> {
        optimizer.add_params(&match_projection_params(&self.matches));
        run_single_loader_loop(
            &self.student,
            &self.loader,
            &self.training,
            optimizer,
            num_epochs,
            callback,
            |batch, progress| {
                let teacher_out = self.teacher_output(batch)?;
                let raw = self.student.forward(&batch.token_ids, &batch.inputs_mask)?;
                let student_out = run_adaptor(&self.adaptor_student, batch, &raw)?;
                distill_batch_loss(
                    &teacher_out,
                    &student_out,
                    &self.distill,
                    &self.presets,
                    &self.matches,
                    progress,
                )
            },
        )
    }
}

impl BasicDistiller {
    /// The teacher is frozen on construction and stays bit-identical through
    /// training.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mut teacher: Model,
        student: Model,
        adaptor_teacher: Adaptor,
        adaptor_student: Adaptor,
        loader: DataLoader,
        training: TrainingConfig,
        distill: DistillationConfig,
        presets: Presets,
    ) -> Result<BasicDistiller, DistillError> {
        if !distill.intermediate_matches.is_empty() {
            return Err(DistillError::Validation(
                "BasicDistiller does not support intermediate_matches; use GeneralDistiller"
                    .into(),
            ));
        }
        teacher.freeze();
        Ok(BasicDistiller {
            core: DistillCore {
                teacher,
                student,
                adaptor_teacher,
                adaptor_student,
                loader,
                training,
                distill,
                presets,
                matches: Vec::new(),
            },
        })
    }

    pub fn student(&self) -> &Model {
        &self.core.student
    }

    pub fn teacher(&self) -> &Model {
        &self.core.teacher
    }

    pub fn into_student(self) -> Model {
        self.core.student
    }
}

impl Distiller for BasicDistiller {
    fn train(
        &mut self,
        optimizer: &mut Adam,
        num_epochs: usize,
        callback: Option<CallbackRef<'_>>,
    ) -> Result<TrainReport, DistillError> {
        self.core.run(optimizer, num_epochs, callback)
    }
}

/// Distillation with intermediate feature matches (hidden, attention, FSP,
/// NST, and custom losses); projection parameters are created per match and
/// trained together with the student.
pub struct GeneralDistiller {
    core: DistillCore,
}

impl GeneralDistiller {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mut teacher: Model,
        student: Model,
        adaptor_teacher: Adaptor,
        adaptor_student: Adaptor,
        loader: DataLoader,
        training: TrainingConfig,
        distill: DistillationConfig,
        presets: Presets,
    ) -> Result<GeneralDistiller, DistillError> {
        crate::config::validate_against_specs(&distill, teacher.spec(), student.spec(), &presets)?;
        let matches = prepare_matches(&distill, &presets, training.seed)?;
        teacher.freeze();
        Ok(GeneralDistiller {
            core: DistillCore {
                teacher,
                student,
                adaptor_teacher,
                adaptor_student,
                loader,
                training,
                distill,
                presets,
                matches,
            },
        })
    }

    pub fn student(&self) -> &Model {
        &self.core.student
    }

    pub fn teacher(&self) -> &Model {
        &self.core.teacher
    }

    pub fn into_student(self) -> Model {
        self.core.student
    }

    /// The projection parameters created for the configured matches.
    pub fn projection_params(&self) -> Vec<Tensor> {
        match_projection_params(&self.core.matches)
    }
}

impl Distiller for GeneralDistiller {
    fn train(
        &mut self,
        optimizer: &mut Adam,
        num_epochs: usize,
        callback: Option<CallbackRef<'_>>,
    ) -> Result<TrainReport, DistillError> {
        self.core.run(optimizer, num_epochs, callback)
    }
}

/// Distills an ensemble of teachers into one student by averaging their
/// logits before temperature softening. Intermediate matches are not
/// supported: cross-teacher feature alignment is ill-defined.
pub struct MultiTeacherDistiller {
    teachers: Vec<Model>,
    student: Model,
    adaptor_teacher: Adaptor,
    adaptor_student: Adaptor,
    loader: DataLoader,
    training: TrainingConfig,
    distill: DistillationConfig,
    presets: Presets,
}

impl MultiTeacherDistiller {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        teachers: Vec<Model>,
        student: Model,
        adaptor_teacher: Adaptor,
        adaptor_student: Adaptor,
        loader: DataLoader,
        training: TrainingConfig,
        distill: DistillationConfig,
        presets: Presets,
    ) -> Result<MultiTeacherDistiller, DistillError> {
        if teachers.is_empty() {
            return Err(DistillError::Validation("at least one teacher is required".into()));
        }
        if !distill.intermediate_matches.is_empty() {
            return Err(DistillError::Validation(
                "MultiTeacherDistiller does not support intermediate_matches".into(),
            ));
        }
        let mut teachers = teachers;
        for t in &mut teachers {
            t.freeze();
        }
        Ok(MultiTeacherDistiller {
            teachers,
            student,
            adaptor_teacher,
            adaptor_student,
            loader,
            training,
            distill,
            presets,
        })
    }

    pub fn student(&self) -> &Model {
        &self.student
    }

    pub fn teachers(&self) -> &[Model] {
        &self.teachers
    }

    pub fn into_student(self) -> Model {
        self.student
    }

    /// Mean of the teachers' logits, list entry by list entry.
    fn averaged_teacher_output(&self, batch: &Batch) -> Result<AdaptorOutput, DistillError> {
        let scale = 1.0 / self.teachers.len() as f64;
        let mut merged: Option<AdaptorOutput> = None;
        for teacher in &self.teachers {
            let raw = teacher.forward(&batch.token_ids, &batch.inputs_mask)?;
            let out = run_adaptor(&self.adaptor_teacher, batch, &raw)?;
            merged = Some(match merged {
                None => out,
                Some(acc) => {
                    if acc.logits.len() != out.logits.len() {
                        return Err(DistillError::Contract(
                            "teachers produced differing logits lists".into(),
                        ));
                    }
                    let mut logits = Vec::with_capacity(acc.logits.len());
                    for (a, b) in acc.logits.iter().zip(&out.logits) {
                        if a.shape() != b.shape() {
                            return Err(DistillError::Contract(format!(
                                "teacher logits shapes differ: {:?} vs {:?}",
                                a.shape(),
                                b.shape()
                            )));
                        }
                        logits.push(a.add(b)?);
                    }
                    AdaptorOutput { logits, ..acc }
                }
            });
        }
        let mut merged = merged.expect("at least one teacher");
        merged.logits = merged.logits.iter().map(|l| l.mul_scalar(scale)).collect();
        Ok(merged)
    }
}

impl Distiller for MultiTeacherDistiller {
    fn train(
        &mut self,
        optimizer: &mut Adam,
        num_epochs: usize,
        callback: Option<CallbackRef<'_>>,
    ) -> Result<TrainReport, DistillError> {
        run_single_loader_loop(
            &self.student,
            &self.loader,
            &self.training,
            optimizer,
            num_epochs,
            callback,
            |batch, progress| {
                let teacher_out = self.averaged_teacher_output(batch)?;
                let raw = self.student.forward(&batch.token_ids, &batch.inputs_mask)?;
                let student_out = run_adaptor(&self.adaptor_student, batch, &raw)?;
                distill_batch_loss(
                    &teacher_out,
                    &student_out,
                    &self.distill,
                    &self.presets,
                    &[],
                    progress,
                )
            },
        )
    }
}

/// One task of a multi-task distillation: its teacher, adaptors, data, and
/// the student head it trains.
pub struct TaskSlot {
    pub name: String,
    pub teacher: Model,
    pub adaptor_teacher: Adaptor,
    pub adaptor_student: Adaptor,
    pub loader: DataLoader,
    pub head_slot: usize,
}

/// Deterministic sampler drawing task indices proportionally to dataset
/// sizes.
pub fn task_sampler(sizes: &[usize], seed: u64) -> impl FnMut() -> usize {
    let total: usize = sizes.iter().sum();
    let cumulative: Vec<usize> = sizes
        .iter()
        .scan(0usize, |acc, &s| {
            *acc += s;
            Some(*acc)
        })
        .collect();
    let mut rng = Rng::new(Rng::derive(seed, 0x7a5c));
    move || {
        let draw = rng.below(total);
        cumulative.iter().position(|&c| draw < c).expect("draw below total")
    }
}

/// Distills multiple teachers of different tasks into one multi-task student
/// with a shared encoder and one head per task. Batches are drawn from tasks
/// proportionally to dataset size (or round-robin).
pub struct MultiTaskDistiller {
    student: Model,
    tasks: Vec<TaskSlot>,
    training: TrainingConfig,
    distill: DistillationConfig,
    presets: Presets,
    round_robin: bool,
}

impl MultiTaskDistiller {
    pub fn new(
        tasks: Vec<TaskSlot>,
        student: Model,
        training: TrainingConfig,
        distill: DistillationConfig,
        presets: Presets,
        round_robin: bool,
    ) -> Result<MultiTaskDistiller, DistillError> {
        if tasks.len() < 2 {
            return Err(DistillError::Validation(
                "multi-task distillation requires at least 2 tasks".into(),
            ));
        }
        if !distill.intermediate_matches.is_empty() {
            return Err(DistillError::Validation(
                "MultiTaskDistiller does not support intermediate_matches".into(),
            ));
        }
        let mut seen = Vec::new();
        for t in &tasks {
            if t.head_slot >= student.heads().len() {
                return Err(DistillError::Validation(format!(
                    "task \"{}\" references head slot {} but the student has {}",
                    t.name,
                    t.head_slot,
                    student.heads().len()
                )));
            }
            if seen.contains(&t.head_slot) {
                return Err(DistillError::Validation(format!(
                    "head slot {} is assigned to more than one task",
                    t.head_slot
                )));
            }
            seen.push(t.head_slot);
        }
        let mut tasks = tasks;
        for t in &mut tasks {
            t.teacher.freeze();
        }
        Ok(MultiTaskDistiller { student, tasks, training, distill, presets, round_robin })
    }

    pub fn student(&self) -> &Model {
        &self.student
    }

    pub fn into_student(self) -> Model {
        self.student
    }
}

impl Distiller for MultiTaskDistiller {
    fn train(
        &mut self,
        optimizer: &mut Adam,
        num_epochs: usize,
        callback: Option<CallbackRef<'_>>,
    ) -> Result<TrainReport, DistillError> {
        if num_epochs == 0 {
            return Err(DistillError::Validation("num_epochs must be >= 1".into()));
        }
        let steps_per_epoch: usize =
            self.tasks.iter().map(|t| t.loader.batches_per_epoch()).sum();
        let mut support = LoopSupport::new(&self.training, steps_per_epoch, num_epochs)?;
        let sizes: Vec<usize> = self.tasks.iter().map(|t| t.loader.dataset().len()).collect();
        let mut sample = task_sampler(&sizes, self.training.seed);

        // Per-task batch queues, refilled with fresh shuffles as they drain.
        let mut queues: Vec<Vec<Batch>> = vec![Vec::new(); self.tasks.len()];
        let mut refills: Vec<usize> = vec![0; self.tasks.len()];
        let mut callback = callback;
        let mut step: u64 = 0;
        let total_steps = steps_per_epoch * num_epochs;
        for s in 0..total_steps {
            let k = if self.round_robin { s % self.tasks.len() } else { sample() };
            if queues[k].is_empty() {
                refills[k] += 1;
                let mut batches = self.tasks[k].loader.epoch_batches(refills[k]);
                batches.reverse();
                queues[k] = batches;
            }
            let batch = queues[k].pop().expect("refilled above");
            step += 1;
            let progress = support.progress(step);

            let task = &self.tasks[k];
            let t_raw = task.teacher.forward(&batch.token_ids, &batch.inputs_mask)?;
            let teacher_out = run_adaptor(&task.adaptor_teacher, &batch, &t_raw)?;
            let s_raw =
                self.student.forward_with_head(task.head_slot, &batch.token_ids, &batch.inputs_mask)?;
            let student_out = run_adaptor(&task.adaptor_student, &batch, &s_raw)?;
            let breakdown = distill_batch_loss(
                &teacher_out,
                &student_out,
                &self.distill,
                &self.presets,
                &[],
                progress,
            )?;
            breakdown.total.backward()?;
            if let Some(max_norm) = self.training.max_grad_norm {
                clip_global_norm(optimizer.params(), max_norm);
            }
            // Only the sampled task's head has gradients.
            optimizer.step_partial();
            support.log(step, "task_index", k as f64)?;
            for (name, value) in &breakdown.components {
                support.log(step, name, *value)?;
            }
            support.maybe_checkpoint(step, &self.student, &mut callback)?;
        }
        Ok(support.report)
    }
}
