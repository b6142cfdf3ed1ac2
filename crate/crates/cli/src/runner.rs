//! Execute a resolved experiment: generate data, train (or load) teachers,
//! distill the student with a built-in dev-set evaluation callback, and write
//! `report.json`.

use std::path::Path;

use serde_json::{json, Map, Value};

use distilkit::config::TrainingConfig;
use distilkit::distill::{
    standard_adaptor, Adam, AdamConfig, BasicDistiller, BasicTrainer, DataLoader, Distiller,
    GeneralDistiller, MultiTaskDistiller, MultiTeacherDistiller, TaskSlot, TrainReport,
};
use distilkit::json::to_sorted_string;
use distilkit::losses::Presets;
use distilkit::models::{build_model, load_weights, Model, ModelSpec};
use distilkit::rng::Rng;
use distilkit::tasks::{
    augment_dataset, evaluate, evaluate_with_head, generate_classification, generate_span,
    generate_tagging, ClassificationParams, Dataset, Split, SpanParams, TaggingParams, TaskKind,
    TaskMetrics,
};

use crate::manifest::{DistillerKind, ExperimentManifest, ResolvedExperiment, TaskSpec};
use crate::CliError;

/// Run a manifest end to end; everything is written under `out_dir`.
pub fn run_experiment(
    manifest_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| {
        CliError::Validation(format!("cannot read manifest {manifest_path:?}: {e}"))
    })?;
    let manifest = ExperimentManifest::from_json_str(&text)?;
    let presets = Presets::default();
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut experiment = manifest.resolve(base, &presets)?;
    if let Some(seed) = seed_override {
        experiment.training.seed = seed;
    }

    // Log and output locations resolve under --out so the run never writes
    // outside it.
    let resolve_dir = |dir: &str| -> String {
        let p = Path::new(dir);
        if p.is_absolute() {
            dir.to_string()
        } else {
            out_dir.join(p).to_string_lossy().into_owned()
        }
    };
    experiment.training.log_dir = resolve_dir(&experiment.training.log_dir);
    experiment.training.output_dir = resolve_dir(&experiment.training.output_dir);
    std::fs::create_dir_all(out_dir)?;

    let report = execute(&experiment, &presets)?;
    std::fs::write(out_dir.join("report.json"), to_sorted_string(&report))?;
    Ok(())
}

fn generate(task: &TaskSpec, split: Split) -> Result<Dataset, CliError> {
    generate_with(task, split, task.seed, task.n)
}

fn generate_with(task: &TaskSpec, split: Split, seed: u64, n: usize) -> Result<Dataset, CliError> {
    let n = if split == Split::Dev { task.dev_n } else { n };
    let ds = match task.kind {
        TaskKind::Classification => generate_classification(
            &ClassificationParams {
                seed,
                n,
                num_classes: task.labels,
                vocab_size: task.vocab_size,
                length: task.length,
                noise_rate: task.noise_rate,
            },
            split,
        )?,
        TaskKind::Tagging => generate_tagging(
            &TaggingParams {
                seed,
                n,
                num_tags: task.labels,
                vocab_size: task.vocab_size,
                length: task.length,
            },
            split,
        )?,
        TaskKind::Span => generate_span(
            &SpanParams { seed, n, vocab_size: task.vocab_size, length: task.length },
            split,
        )?,
    };
    Ok(ds)
}

fn metrics_json(metrics: &TaskMetrics) -> Value {
    let mut obj = Map::new();
    for (k, v) in &metrics.values {
        obj.insert(k.clone(), json!(v));
    }
    Value::Object(obj)
}

/// Train a teacher on the labeled train split, or load it from a weights
/// file.
fn obtain_teacher(
    spec: &ModelSpec,
    weights: Option<&Path>,
    train: &Dataset,
    experiment: &ResolvedExperiment,
    seed_tag: u64,
) -> Result<(Model, Value), CliError> {
    if let Some(path) = weights {
        let model = load_weights(spec, path)?;
        return Ok((model, json!({"loaded_from": path.to_string_lossy()})));
    }
    let seed = Rng::derive(experiment.training.seed, seed_tag);
    let model = build_model(spec, seed)?;
    let loader = DataLoader::new(train.clone(), experiment.run.batch_size, seed)?;
    let mut optimizer = Adam::new(
        model.trainable_tensors(),
        AdamConfig {
            learning_rate: experiment.run.teacher_learning_rate,
            ..AdamConfig::default()
        },
    );
    // The teacher phase logs into the same append-only train.log; its
    // checkpoints would collide with the student's, so it runs with a
    // scratch output directory.
    let teacher_training = TrainingConfig {
        output_dir: format!("{}/teacher{seed_tag}", experiment.training.output_dir),
        ckpt_frequency: 1,
        ckpt_epoch_frequency: experiment.run.teacher_epochs,
        ..experiment.training.clone()
    };
    let mut trainer =
        BasicTrainer::new(model, standard_adaptor(), loader, teacher_training);
    trainer.train(&mut optimizer, experiment.run.teacher_epochs, None)?;
    let model = trainer.into_model();
    Ok((model, json!({"trained_epochs": experiment.run.teacher_epochs})))
}

fn distillation_data(
    experiment: &ResolvedExperiment,
    task: &TaskSpec,
    train: &Dataset,
) -> Result<Dataset, CliError> {
    match &experiment.augmentation {
        None => Ok(train.clone()),
        Some(aug) => {
            let aux_seed = aug.seed.unwrap_or(task.seed);
            let aux_n = aug.n.unwrap_or(task.n).max(1);
            let mut aux = generate_with(task, Split::Aux, aux_seed, aux_n)?;
            if !aug.labeled {
                aux = aux.without_labels();
            }
            Ok(augment_dataset(train, &aux, aug.mix_ratio)?)
        }
    }
}

fn execute(experiment: &ResolvedExperiment, presets: &Presets) -> Result<Value, CliError> {
    let run = &experiment.run;
    let training = &experiment.training;
    let student_seed = Rng::derive(training.seed, 0x57);

    let mut report = Map::new();
    report.insert("distiller".into(), json!(experiment.distiller.name()));
    let mut resolved = Map::new();
    resolved.insert("training".into(), serde_json::from_str(
        &distilkit::config::serialize_training_config(training)).expect("valid json"));
    resolved.insert("distillation".into(),
        distilkit::config::distillation_config_to_value(&experiment.distillation));
    resolved.insert("run".into(), run.to_json());
    resolved.insert("student_spec".into(), experiment.student_spec.to_json());
    if let Some(t) = &experiment.teacher_spec {
        resolved.insert("teacher_spec".into(), t.to_json());
    }
    resolved.insert(
        "task".into(),
        Value::Array(experiment.tasks.iter().map(|t| t.to_json()).collect()),
    );
    if let Some(aug) = &experiment.augmentation {
        resolved.insert("augmentation".into(), aug.to_json());
    }
    report.insert("resolved".into(), Value::Object(resolved));

    match experiment.distiller {
        DistillerKind::BasicTrainer => {
            let task = &experiment.tasks[0];
            let train = generate(task, Split::Train)?;
            let dev = generate(task, Split::Dev)?;
            let model = build_model(&experiment.student_spec, student_seed)?;
            let loader = DataLoader::new(train, run.batch_size, training.seed)?;
            let mut optimizer = Adam::new(
                model.trainable_tensors(),
                AdamConfig { learning_rate: run.learning_rate, ..AdamConfig::default() },
            );
            let mut trainer =
                BasicTrainer::new(model, standard_adaptor(), loader, training.clone());
            let mut checkpoints: Vec<Value> = Vec::new();
            let mut callback = |m: &Model, step: u64| {
                let metrics = evaluate(m, &dev).expect("dev evaluation");
                checkpoints.push(json!({"step": step, "metrics": metrics_json(&metrics)}));
            };
            let train_report = trainer.train(&mut optimizer, run.num_epochs, Some(&mut callback))?;
            finish_report(&mut report, checkpoints, &train_report);
            let final_metrics = evaluate(trainer.model(), &dev)?;
            report.insert("final".into(), metrics_json(&final_metrics));
        }
        DistillerKind::Basic | DistillerKind::General => {
            let task = &experiment.tasks[0];
            let teacher_spec = experiment.teacher_spec.as_ref().expect("validated");
            let train = generate(task, Split::Train)?;
            let dev = generate(task, Split::Dev)?;
            let (teacher, teacher_info) = obtain_teacher(
                teacher_spec,
                experiment.teacher_weights.first().map(|p| p.as_path()),
                &train,
                experiment,
                1,
            )?;
            let teacher_metrics = evaluate(&teacher, &dev)?;
            report.insert(
                "teacher".into(),
                json!({"metrics": metrics_json(&teacher_metrics), "source": teacher_info}),
            );

            let distill_train = distillation_data(experiment, task, &train)?;
            let student = build_model(&experiment.student_spec, student_seed)?;
            let loader = DataLoader::new(distill_train, run.batch_size, training.seed)?;
            let mut optimizer = Adam::new(
                student.trainable_tensors(),
                AdamConfig { learning_rate: run.learning_rate, ..AdamConfig::default() },
            );
            let mut checkpoints: Vec<Value> = Vec::new();
            let mut callback = |m: &Model, step: u64| {
                let metrics = evaluate(m, &dev).expect("dev evaluation");
                checkpoints.push(json!({"step": step, "metrics": metrics_json(&metrics)}));
            };
            let (train_report, student) = if experiment.distiller == DistillerKind::Basic {
                let mut d = BasicDistiller::new(
                    teacher,
                    student,
                    standard_adaptor(),
                    standard_adaptor(),
                    loader,
                    training.clone(),
                    experiment.distillation.clone(),
                    presets.clone(),
                )?;
                let r = d.train(&mut optimizer, run.num_epochs, Some(&mut callback))?;
                (r, d.into_student())
            } else {
                let mut d = GeneralDistiller::new(
                    teacher,
                    student,
                    standard_adaptor(),
                    standard_adaptor(),
                    loader,
                    training.clone(),
                    experiment.distillation.clone(),
                    presets.clone(),
                )?;
                let r = d.train(&mut optimizer, run.num_epochs, Some(&mut callback))?;
                (r, d.into_student())
            };
            finish_report(&mut report, checkpoints, &train_report);
            let final_metrics = evaluate(&student, &dev)?;
            report.insert("final".into(), metrics_json(&final_metrics));
        }
        DistillerKind::MultiTeacher => {
            let task = &experiment.tasks[0];
            let teacher_spec = experiment.teacher_spec.as_ref().expect("validated");
            let train = generate(task, Split::Train)?;
            let dev = generate(task, Split::Dev)?;
            let mut teachers = Vec::with_capacity(run.num_teachers);
            let mut teacher_infos = Vec::new();
            for k in 0..run.num_teachers {
                let weights = experiment.teacher_weights.get(k).map(|p| p.as_path());
                let (teacher, info) =
                    obtain_teacher(teacher_spec, weights, &train, experiment, 1 + k as u64)?;
                let metrics = evaluate(&teacher, &dev)?;
                teacher_infos
                    .push(json!({"metrics": metrics_json(&metrics), "source": info}));
                teachers.push(teacher);
            }
            report.insert("teachers".into(), Value::Array(teacher_infos));

            let distill_train = distillation_data(experiment, task, &train)?;
            let student = build_model(&experiment.student_spec, student_seed)?;
            let loader = DataLoader::new(distill_train, run.batch_size, training.seed)?;
            let mut optimizer = Adam::new(
                student.trainable_tensors(),
                AdamConfig { learning_rate: run.learning_rate, ..AdamConfig::default() },
            );
            let mut checkpoints: Vec<Value> = Vec::new();
            let mut callback = |m: &Model, step: u64| {
                let metrics = evaluate(m, &dev).expect("dev evaluation");
                checkpoints.push(json!({"step": step, "metrics": metrics_json(&metrics)}));
            };
            let mut d = MultiTeacherDistiller::new(
                teachers,
                student,
                standard_adaptor(),
                standard_adaptor(),
                loader,
                training.clone(),
                experiment.distillation.clone(),
                presets.clone(),
            )?;
            let train_report = d.train(&mut optimizer, run.num_epochs, Some(&mut callback))?;
            finish_report(&mut report, checkpoints, &train_report);
            let final_metrics = evaluate(d.student(), &dev)?;
            report.insert("final".into(), metrics_json(&final_metrics));
        }
        DistillerKind::MultiTask => {
            let teacher_spec = experiment.teacher_spec.as_ref().expect("validated");
            let mut student = build_model(&experiment.student_spec, student_seed)?;
            let mut devs = Vec::new();
            let mut slots = Vec::new();
            let mut teacher_infos = Vec::new();
            for (k, task) in experiment.tasks.iter().enumerate() {
                let head_slot = if k == 0 {
                    0
                } else {
                    student.add_head(task.head(), Rng::derive(student_seed, k as u64))?
                };
                let train = generate(task, Split::Train)?;
                let dev = generate(task, Split::Dev)?;
                let mut per_task_spec = teacher_spec.clone();
                per_task_spec.head = task.head();
                let weights = experiment.teacher_weights.get(k).map(|p| p.as_path());
                let (teacher, info) =
                    obtain_teacher(&per_task_spec, weights, &train, experiment, 1 + k as u64)?;
                let metrics = evaluate(&teacher, &dev)?;
                teacher_infos.push(json!({
                    "task": k,
                    "metrics": metrics_json(&metrics),
                    "source": info,
                }));
                slots.push(TaskSlot {
                    name: format!("task{k}"),
                    teacher,
                    adaptor_teacher: standard_adaptor(),
                    adaptor_student: standard_adaptor(),
                    loader: DataLoader::new(train, run.batch_size, training.seed)?,
                    head_slot,
                });
                devs.push(dev);
            }
            report.insert("teachers".into(), Value::Array(teacher_infos));

            let mut optimizer = Adam::new(
                student.trainable_tensors(),
                AdamConfig { learning_rate: run.learning_rate, ..AdamConfig::default() },
            );
            let mut checkpoints: Vec<Value> = Vec::new();
            let devs_ref = &devs;
            let mut callback = |m: &Model, step: u64| {
                let mut per_task = Map::new();
                for (k, dev) in devs_ref.iter().enumerate() {
                    let metrics = evaluate_with_head(m, k, dev).expect("dev evaluation");
                    per_task.insert(format!("task{k}"), metrics_json(&metrics));
                }
                checkpoints.push(json!({"step": step, "metrics": Value::Object(per_task)}));
            };
            let mut d = MultiTaskDistiller::new(
                slots,
                student,
                training.clone(),
                experiment.distillation.clone(),
                presets.clone(),
                run.round_robin,
            )?;
            let train_report = d.train(&mut optimizer, run.num_epochs, Some(&mut callback))?;
            finish_report(&mut report, checkpoints, &train_report);
            let student = d.into_student();
            let mut per_task = Map::new();
            for (k, dev) in devs.iter().enumerate() {
                let metrics = evaluate_with_head(&student, k, dev)?;
                per_task.insert(format!("task{k}"), metrics_json(&metrics));
            }
            report.insert("final".into(), Value::Object(per_task));
        }
    }
    Ok(Value::Object(report))
}

fn finish_report(report: &mut Map<String, Value>, checkpoints: Vec<Value>, train: &TrainReport) {
    report.insert("checkpoints".into(), Value::Array(checkpoints));
    report.insert(
        "checkpoint_steps".into(),
        Value::Array(train.checkpoint_steps.iter().map(|&s| json!(s)).collect()),
    );
    report.insert("total_steps".into(), json!(train.total_steps));
}
