//! End-to-end behavior of the training engines: checkpoint scheduling,
//! determinism, teacher immutability, engine interchangeability, and the
//! multi-task machinery.

use std::path::PathBuf;

use distilkit::config::{
    parse_distillation_config, DistillationConfig, TrainingConfig,
};
use distilkit::distill::{
    minimal_adaptor, run_adaptor, standard_adaptor, task_sampler, Adam, AdamConfig,
    AdaptorMap, AdaptorValue, BasicDistiller, BasicTrainer, DataLoader, Distiller, DistillError,
    GeneralDistiller, MultiTaskDistiller, MultiTeacherDistiller, TaskSlot,
};
use distilkit::losses::Presets;
use distilkit::models::{build_model, HeadSpec, Model, ModelSpec};
use distilkit::oracles;
use distilkit::tasks::{generate_classification, ClassificationParams, Split};

fn unique_dirs(name: &str) -> TrainingConfig {
    let base = std::env::temp_dir().join(format!("distilkit-train-{}-{name}", std::process::id()));
    TrainingConfig {
        log_dir: base.join("logs").to_string_lossy().into_owned(),
        output_dir: base.join("out").to_string_lossy().into_owned(),
        ..TrainingConfig::default()
    }
}

fn cleanup(cfg: &TrainingConfig) {
    for d in [&cfg.log_dir, &cfg.output_dir] {
        let p = PathBuf::from(d);
        if let Some(parent) = p.parent() {
            std::fs::remove_dir_all(parent).ok();
        }
    }
}

fn small_dataset(seed: u64, n: usize) -> distilkit::tasks::Dataset {
    generate_classification(
        &ClassificationParams {
            seed,
            n,
            num_classes: 3,
            vocab_size: 24,
            length: 10,
            noise_rate: 0.0,
        },
        Split::Train,
    )
    .unwrap()
}

fn teacher_spec() -> ModelSpec {
    ModelSpec::transformer(2, 16, 32, 2, 24, 10, HeadSpec::Classification { num_labels: 3 })
}

fn student_spec() -> ModelSpec {
    ModelSpec::transformer(1, 8, 16, 2, 24, 10, HeadSpec::Classification { num_labels: 3 })
}

fn kd_only_config() -> DistillationConfig {
    DistillationConfig { temperature: 8.0, ..DistillationConfig::default() }
}

#[test]
fn trainer_checkpoints_and_callbacks_follow_the_schedule() {
    let mut cfg = unique_dirs("trainer-schedule");
    cfg.ckpt_frequency = 2;
    let model = build_model(&teacher_spec(), 1).unwrap();
    let loader = DataLoader::new(small_dataset(5, 20), 2, cfg.seed).unwrap();
    let mut optimizer = Adam::new(model.trainable_tensors(), AdamConfig::default());
    let mut trainer = BasicTrainer::new(model, standard_adaptor(), loader, cfg.clone());

    let mut seen: Vec<u64> = Vec::new();
    let mut callback = |_m: &Model, step: u64| seen.push(step);
    let report = trainer.train(&mut optimizer, 1, Some(&mut callback)).unwrap();

    assert_eq!(report.checkpoint_steps, vec![5, 10]);
    assert_eq!(seen, vec![5, 10]);
    assert_eq!(report.callback_steps, seen);
    assert_eq!(report.saved_files.len(), 2);
    for (path, step) in report.saved_files.iter().zip([5u64, 10]) {
        assert!(path.ends_with(format!("gs{step}")), "{path:?}");
        assert!(path.exists());
    }
    cleanup(&cfg);
}

#[test]
fn fixed_seed_reproduces_the_loss_log_bit_for_bit() {
    let run = |tag: &str| {
        let cfg = unique_dirs(tag);
        let model = build_model(&teacher_spec(), 3).unwrap();
        let loader = DataLoader::new(small_dataset(6, 24), 4, cfg.seed).unwrap();
        let mut optimizer = Adam::new(model.trainable_tensors(), AdamConfig::default());
        let mut trainer = BasicTrainer::new(model, standard_adaptor(), loader, cfg.clone());
        let report = trainer.train(&mut optimizer, 2, None).unwrap();
        cleanup(&cfg);
        report.series("task")
    };
    let a = run("det-a");
    let b = run("det-b");
    assert_eq!(a, b);
}

#[test]
fn trainer_fits_the_planted_rule() {
    let cfg = unique_dirs("trainer-fit");
    let dataset = small_dataset(7, 240);
    let model = build_model(&teacher_spec(), 2).unwrap();
    let loader = DataLoader::new(dataset.clone(), 8, cfg.seed).unwrap();
    let mut optimizer = Adam::new(
        model.trainable_tensors(),
        AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
    );
    let mut trainer = BasicTrainer::new(model, standard_adaptor(), loader, cfg.clone());
    // Budget pinned after calibration: 6 epochs at lr 3e-3.
    trainer.train(&mut optimizer, 6, None).unwrap();
    let metrics = distilkit::tasks::evaluate(trainer.model(), &dataset).unwrap();
    assert!(metrics.primary >= 97.0, "train accuracy {}", metrics.primary);
    cleanup(&cfg);
}

fn distill_once(tag: &str, general: bool, seed: u64) -> Vec<f64> {
    let mut cfg = unique_dirs(tag);
    cfg.seed = seed;
    let teacher = build_model(&teacher_spec(), 11).unwrap();
    let student = build_model(&student_spec(), 12).unwrap();
    let loader = DataLoader::new(small_dataset(8, 40), 4, cfg.seed).unwrap();
    let dcfg = kd_only_config();
    let presets = Presets::default();
    let mut optimizer = Adam::new(student.trainable_tensors(), AdamConfig::default());
    let report = if general {
        let mut d = GeneralDistiller::new(
            teacher,
            student,
            standard_adaptor(),
            standard_adaptor(),
            loader,
            cfg.clone(),
            dcfg,
            presets,
        )
        .unwrap();
        d.train(&mut optimizer, 1, None).unwrap()
    } else {
        let mut d = BasicDistiller::new(
            teacher,
            student,
            standard_adaptor(),
            standard_adaptor(),
            loader,
            cfg.clone(),
            dcfg,
            presets,
        )
        .unwrap();
        d.train(&mut optimizer, 1, None).unwrap()
    };
    cleanup(&cfg);
    report.series("total")
}

#[test]
fn general_with_zero_matches_reduces_to_basic() {
    let basic = distill_once("swap-basic", false, 21);
    let general = distill_once("swap-general", true, 21);
    assert_eq!(basic.len(), general.len());
    for (a, b) in basic.iter().zip(&general) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn teacher_parameters_are_bit_identical_after_distillation() {
    let cfg = unique_dirs("teacher-frozen");
    let teacher = build_model(&teacher_spec(), 31).unwrap();
    let fingerprint_before = teacher.fingerprint();
    let student = build_model(&student_spec(), 32).unwrap();
    let loader = DataLoader::new(small_dataset(9, 24), 4, cfg.seed).unwrap();
    let mut optimizer = Adam::new(student.trainable_tensors(), AdamConfig::default());
    let mut d = BasicDistiller::new(
        teacher,
        student,
        standard_adaptor(),
        standard_adaptor(),
        loader,
        cfg.clone(),
        kd_only_config(),
        Presets::default(),
    )
    .unwrap();
    d.train(&mut optimizer, 2, None).unwrap();
    assert_eq!(d.teacher().fingerprint(), fingerprint_before);
    cleanup(&cfg);
}

#[test]
fn student_initialized_as_teacher_starts_at_softened_entropy() {
    let cfg = unique_dirs("entropy-start");
    let spec = teacher_spec();
    let teacher = build_model(&spec, 41).unwrap();
    let student = build_model(&spec, 41).unwrap();
    let loader = DataLoader::new(small_dataset(10, 16), 4, cfg.seed).unwrap();

    // Expected: mean over the first batch of the entropy of softmax(z_t / 8).
    let first = &loader.epoch_batches(1)[0];
    let out = teacher.forward(&first.token_ids, &first.inputs_mask).unwrap();
    let logits = out.logits[0].to_vec();
    let classes = out.logits[0].shape()[1];
    let mut expected = 0.0;
    for row in logits.chunks(classes) {
        let scaled: Vec<f64> = row.iter().map(|v| v / 8.0).collect();
        let p = oracles::softmax_row(&scaled);
        expected -= p.iter().map(|q| q * q.ln()).sum::<f64>();
    }
    expected /= (logits.len() / classes) as f64;

    let mut optimizer = Adam::new(student.trainable_tensors(), AdamConfig::default());
    let mut d = BasicDistiller::new(
        teacher,
        student,
        standard_adaptor(),
        standard_adaptor(),
        loader,
        cfg.clone(),
        kd_only_config(),
        Presets::default(),
    )
    .unwrap();
    let report = d.train(&mut optimizer, 1, None).unwrap();
    let first_kd = report.series("kd")[0];
    assert!((first_kd - expected).abs() <= 1e-12, "{first_kd} vs {expected}");
    cleanup(&cfg);
}

#[test]
fn projection_adds_exactly_its_parameter_count() {
    let cfg = unique_dirs("proj-count");
    let teacher =
        build_model(&ModelSpec::transformer(2, 32, 64, 2, 24, 10, HeadSpec::Classification { num_labels: 3 }), 51)
            .unwrap();
    let student =
        build_model(&ModelSpec::transformer(1, 16, 32, 2, 24, 10, HeadSpec::Classification { num_labels: 3 }), 52)
            .unwrap();
    let dcfg = parse_distillation_config(
        r#"{"intermediate_matches": [
            {"feature": "hidden", "loss": "hidden_mse", "layer_T": 2, "layer_S": 1,
             "weight": 1, "proj": ["linear", 16, 32]}
        ]}"#,
        &Presets::default(),
    )
    .unwrap();
    let loader = DataLoader::new(small_dataset(11, 8), 4, cfg.seed).unwrap();
    let d = GeneralDistiller::new(
        teacher,
        student,
        standard_adaptor(),
        standard_adaptor(),
        loader,
        cfg.clone(),
        dcfg,
        Presets::default(),
    )
    .unwrap();
    let extra: usize = d.projection_params().iter().map(|t| t.numel()).sum();
    assert_eq!(extra, 16 * 32 + 32);
    assert!(d.projection_params().iter().all(|t| t.requires_grad()));
    cleanup(&cfg);
}

#[test]
fn general_distiller_trains_with_matches_and_loss_decreases() {
    let cfg = unique_dirs("general-matches");
    let teacher = build_model(&teacher_spec(), 61).unwrap();
    let student = build_model(&student_spec(), 62).unwrap();
    let dcfg = parse_distillation_config(
        r#"{"temperature": 8,
            "intermediate_matches": [
              {"feature": "hidden", "loss": "hidden_mse", "layer_T": 2, "layer_S": 1,
               "weight": 1, "proj": ["linear", 8, 16]},
              {"feature": "hidden", "loss": "nst", "layer_T": 1, "layer_S": 1, "weight": 1}
            ]}"#,
        &Presets::default(),
    )
    .unwrap();
    let loader = DataLoader::new(small_dataset(12, 80), 8, cfg.seed).unwrap();
    let mut optimizer = Adam::new(
        student.trainable_tensors(),
        AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
    );
    let mut d = GeneralDistiller::new(
        teacher,
        student,
        standard_adaptor(),
        standard_adaptor(),
        loader,
        cfg.clone(),
        dcfg,
        Presets::default(),
    )
    .unwrap();
    let report = d.train(&mut optimizer, 4, None).unwrap();
    let totals = report.series("total");
    let first_quarter: f64 =
        totals[..totals.len() / 4].iter().sum::<f64>() / (totals.len() / 4) as f64;
    let last_quarter: f64 = totals[3 * totals.len() / 4..].iter().sum::<f64>()
        / (totals.len() - 3 * totals.len() / 4) as f64;
    assert!(
        last_quarter < first_quarter,
        "smoothed loss did not decrease: {first_quarter} -> {last_quarter}"
    );
    cleanup(&cfg);
}

#[test]
fn identical_teachers_reduce_multi_teacher_to_basic() {
    let run_basic = |tag: &str| {
        let cfg = unique_dirs(tag);
        let teacher = build_model(&teacher_spec(), 71).unwrap();
        let student = build_model(&student_spec(), 72).unwrap();
        let loader = DataLoader::new(small_dataset(13, 40), 4, cfg.seed).unwrap();
        let mut optimizer = Adam::new(student.trainable_tensors(), AdamConfig::default());
        let mut d = BasicDistiller::new(
            teacher,
            student,
            standard_adaptor(),
            standard_adaptor(),
            loader,
            cfg.clone(),
            kd_only_config(),
            Presets::default(),
        )
        .unwrap();
        let r = d.train(&mut optimizer, 1, None).unwrap();
        cleanup(&cfg);
        r
    };
    let run_multi = |tag: &str| {
        let cfg = unique_dirs(tag);
        let teachers: Vec<Model> =
            (0..3).map(|_| build_model(&teacher_spec(), 71).unwrap()).collect();
        let student = build_model(&student_spec(), 72).unwrap();
        let loader = DataLoader::new(small_dataset(13, 40), 4, cfg.seed).unwrap();
        let mut optimizer = Adam::new(student.trainable_tensors(), AdamConfig::default());
        let mut d = MultiTeacherDistiller::new(
            teachers,
            student,
            standard_adaptor(),
            standard_adaptor(),
            loader,
            cfg.clone(),
            kd_only_config(),
            Presets::default(),
        )
        .unwrap();
        let r = d.train(&mut optimizer, 1, None).unwrap();
        cleanup(&cfg);
        r
    };
    let basic = run_basic("mt-basic").series("total");
    let multi = run_multi("mt-multi").series("total");
    assert_eq!(basic.len(), multi.len());
    for (a, b) in basic.iter().zip(&multi) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn logged_weights_match_the_schedulers() {
    let cfg = unique_dirs("sched-weights");
    let teacher = build_model(&teacher_spec(), 81).unwrap();
    let student = build_model(&student_spec(), 82).unwrap();
    let loader = DataLoader::new(small_dataset(14, 24), 4, cfg.seed).unwrap();
    let dcfg = DistillationConfig {
        kd_loss_weight: 1.0,
        hard_label_weight: 0.5,
        kd_loss_weight_scheduler: "linear_decay".into(),
        hard_label_weight_scheduler: "linear_growth".into(),
        ..kd_only_config()
    };
    let mut optimizer = Adam::new(student.trainable_tensors(), AdamConfig::default());
    let mut d = BasicDistiller::new(
        teacher,
        student,
        standard_adaptor(),
        standard_adaptor(),
        loader,
        cfg.clone(),
        dcfg,
        Presets::default(),
    )
    .unwrap();
    let report = d.train(&mut optimizer, 2, None).unwrap();
    let kd_weights = report.series("kd_weight");
    let hl_weights = report.series("hard_label_weight");
    let total = report.total_steps as f64;
    for (i, (kd_w, hl_w)) in kd_weights.iter().zip(&hl_weights).enumerate() {
        let progress = (i + 1) as f64 / total;
        assert!((kd_w - (1.0 - progress)).abs() <= 1e-12);
        assert!((hl_w - 0.5 * progress).abs() <= 1e-12);
    }
    cleanup(&cfg);
}

#[test]
fn task_sampler_matches_dataset_size_ratios() {
    let sizes = [100usize, 300, 600];
    let mut sample = task_sampler(&sizes, 99);
    let mut counts = [0usize; 3];
    let draws = 10_000;
    for _ in 0..draws {
        counts[sample()] += 1;
    }
    for (k, &c) in counts.iter().enumerate() {
        let got = c as f64 / draws as f64;
        let expected = sizes[k] as f64 / 1000.0;
        assert!((got - expected).abs() <= 0.02, "task {k}: {got} vs {expected}");
    }
}

fn multitask_setup(tag: &str) -> (TrainingConfig, MultiTaskDistiller) {
    let cfg = unique_dirs(tag);
    let t_spec = teacher_spec();
    let mut student = build_model(&student_spec(), 91).unwrap();
    let second = student.add_head(HeadSpec::Classification { num_labels: 3 }, 92).unwrap();
    assert_eq!(second, 1);
    let tasks = vec![
        TaskSlot {
            name: "a".into(),
            teacher: build_model(&t_spec, 93).unwrap(),
            adaptor_teacher: standard_adaptor(),
            adaptor_student: standard_adaptor(),
            loader: DataLoader::new(small_dataset(15, 24), 4, cfg.seed).unwrap(),
            head_slot: 0,
        },
        TaskSlot {
            name: "b".into(),
            teacher: build_model(&t_spec, 94).unwrap(),
            adaptor_teacher: standard_adaptor(),
            adaptor_student: standard_adaptor(),
            loader: DataLoader::new(small_dataset(16, 12), 4, cfg.seed).unwrap(),
            head_slot: 1,
        },
    ];
    let d = MultiTaskDistiller::new(
        tasks,
        student,
        cfg.clone(),
        kd_only_config(),
        Presets::default(),
        false,
    )
    .unwrap();
    (cfg, d)
}

#[test]
fn multi_task_trains_and_head_collisions_are_rejected() {
    let (cfg, mut d) = multitask_setup("multitask-run");
    let mut optimizer = Adam::new(d.student().trainable_tensors(), AdamConfig::default());
    let report = d.train(&mut optimizer, 1, None).unwrap();
    // 6 + 3 batches per epoch.
    assert_eq!(report.total_steps, 9);
    let task_indices = report.series("task_index");
    assert!(task_indices.contains(&0.0));
    assert!(task_indices.contains(&1.0));
    cleanup(&cfg);

    // Head collision.
    let cfg2 = unique_dirs("multitask-collision");
    let student = build_model(&student_spec(), 95).unwrap();
    let tasks: Vec<TaskSlot> = (0..2)
        .map(|i| TaskSlot {
            name: format!("t{i}"),
            teacher: build_model(&teacher_spec(), 96).unwrap(),
            adaptor_teacher: standard_adaptor(),
            adaptor_student: standard_adaptor(),
            loader: DataLoader::new(small_dataset(17, 8), 4, cfg2.seed).unwrap(),
            head_slot: 0,
        })
        .collect();
    match MultiTaskDistiller::new(tasks, student, cfg2.clone(), kd_only_config(), Presets::default(), false) {
        Err(DistillError::Validation(msg)) => assert!(msg.contains("head slot"), "{msg}"),
        other => panic!("expected validation error, got {:?}", other.err().map(|e| e.to_string())),
    }
    cleanup(&cfg2);
}

#[test]
fn two_identical_tasks_behave_like_doubled_single_task_data() {
    // The multi-task engine over two copies of one task should show the same
    // loss statistics as the basic engine over the doubled dataset, up to
    // sampling noise; compared via mean total loss over the final half of
    // training, averaged across 3 seeds.
    let ds = small_dataset(31, 32);
    let mut doubled = ds.clone();
    doubled.examples.extend(ds.examples.iter().cloned());

    let mut multi_mean = 0.0;
    let mut single_mean = 0.0;
    for seed in [1u64, 2, 3] {
        let mut cfg = unique_dirs(&format!("ident-m{seed}"));
        cfg.seed = seed;
        let mut student = build_model(&student_spec(), 200 + seed).unwrap();
        student.add_head(HeadSpec::Classification { num_labels: 3 }, 300 + seed).unwrap();
        let tasks = vec![
            TaskSlot {
                name: "a".into(),
                teacher: build_model(&teacher_spec(), 400).unwrap(),
                adaptor_teacher: standard_adaptor(),
                adaptor_student: standard_adaptor(),
                loader: DataLoader::new(ds.clone(), 4, seed).unwrap(),
                head_slot: 0,
            },
            TaskSlot {
                name: "b".into(),
                teacher: build_model(&teacher_spec(), 400).unwrap(),
                adaptor_teacher: standard_adaptor(),
                adaptor_student: standard_adaptor(),
                loader: DataLoader::new(ds.clone(), 4, seed + 50).unwrap(),
                head_slot: 1,
            },
        ];
        let mut d =
            MultiTaskDistiller::new(tasks, student, cfg.clone(), kd_only_config(), Presets::default(), false)
                .unwrap();
        let mut optimizer = Adam::new(d.student().trainable_tensors(), AdamConfig::default());
        let report = d.train(&mut optimizer, 2, None).unwrap();
        let totals = report.series("total");
        multi_mean +=
            totals[totals.len() / 2..].iter().sum::<f64>() / (totals.len() / 2) as f64 / 3.0;
        cleanup(&cfg);

        let mut cfg = unique_dirs(&format!("ident-s{seed}"));
        cfg.seed = seed;
        let student = build_model(&student_spec(), 200 + seed).unwrap();
        let mut optimizer = Adam::new(student.trainable_tensors(), AdamConfig::default());
        let mut d = BasicDistiller::new(
            build_model(&teacher_spec(), 400).unwrap(),
            student,
            standard_adaptor(),
            standard_adaptor(),
            DataLoader::new(doubled.clone(), 4, seed).unwrap(),
            cfg.clone(),
            kd_only_config(),
            Presets::default(),
        )
        .unwrap();
        let report = d.train(&mut optimizer, 2, None).unwrap();
        let totals = report.series("total");
        single_mean +=
            totals[totals.len() / 2..].iter().sum::<f64>() / (totals.len() / 2) as f64 / 3.0;
        cleanup(&cfg);
    }
    let rel = (multi_mean - single_mean).abs() / single_mean.max(1e-12);
    assert!(
        rel <= 0.15,
        "multi-task {multi_mean:.4} vs doubled single-task {single_mean:.4} (rel {rel:.3})"
    );
}

#[test]
fn frozen_word_embeddings_receive_no_gradient() {
    let mut model = build_model(&student_spec(), 141).unwrap();
    model.set_parameter_trainable("embeddings.token", false).unwrap();
    let ds = small_dataset(22, 4);
    let loader = DataLoader::sequential(ds, 4).unwrap();
    let batch = &loader.epoch_batches(1)[0];
    let out = model.forward(&batch.token_ids, &batch.inputs_mask).unwrap();
    out.logits[0].sum().backward().unwrap();
    assert!(!model.parameter("embeddings.token").unwrap().has_grad());
    assert!(model.parameter("heads.0.weight").unwrap().has_grad());
}

#[test]
fn task_batches_leave_other_heads_without_gradients() {
    let mut student = build_model(&student_spec(), 101).unwrap();
    student.add_head(HeadSpec::Classification { num_labels: 3 }, 102).unwrap();
    let ds = small_dataset(18, 8);
    let loader = DataLoader::sequential(ds, 4).unwrap();
    let batch = &loader.epoch_batches(1)[0];
    let out = student.forward_with_head(0, &batch.token_ids, &batch.inputs_mask).unwrap();
    let gold: Vec<Option<usize>> = batch
        .targets
        .iter()
        .map(|t| match t {
            Some(distilkit::tasks::Target::Class(c)) => Some(*c),
            _ => None,
        })
        .collect();
    let loss = distilkit::losses::hard_label_loss(&out.logits[0], &gold, None).unwrap();
    loss.backward().unwrap();
    assert!(student.parameter("heads.0.weight").unwrap().has_grad());
    assert!(!student.parameter("heads.1.weight").unwrap().has_grad());
    assert!(student.parameter("embeddings.token").unwrap().has_grad());
}

#[test]
fn adaptor_contract_violations_are_reported() {
    let cfg = unique_dirs("adaptor-contract");
    let model = build_model(&student_spec(), 111).unwrap();
    let loader = DataLoader::sequential(small_dataset(19, 4), 4).unwrap();
    let batch = &loader.epoch_batches(1)[0];
    let outputs = model.forward(&batch.token_ids, &batch.inputs_mask).unwrap();

    // Minimal adaptor passes for kd-only use.
    let out = run_adaptor(&minimal_adaptor(), batch, &outputs).unwrap();
    assert_eq!(out.logits.len(), 1);
    assert!(out.hidden.is_none());

    // Unknown keys are rejected by name.
    let bad: distilkit::distill::Adaptor = Box::new(|_, o| {
        AdaptorMap::new()
            .set("logits", AdaptorValue::TensorList(o.logits.clone()))
            .set("logitz", AdaptorValue::TensorList(o.logits.clone()))
    });
    match run_adaptor(&bad, batch, &outputs) {
        Err(DistillError::Contract(msg)) => assert!(msg.contains("logitz"), "{msg}"),
        other => panic!("expected contract error, got {:?}", other.err().map(|e| e.to_string())),
    }

    // Mis-shaped inputs_mask.
    let bad_mask: distilkit::distill::Adaptor = Box::new(|_, o| {
        AdaptorMap::new()
            .set("logits", AdaptorValue::TensorList(o.logits.clone()))
            .set(
                "inputs_mask",
                AdaptorValue::Tensor(distilkit::tensor::Tensor::zeros(&[2, 3]).unwrap()),
            )
    });
    match run_adaptor(&bad_mask, batch, &outputs) {
        Err(DistillError::Contract(msg)) => assert!(msg.contains("inputs_mask"), "{msg}"),
        other => panic!("expected contract error, got {:?}", other.err().map(|e| e.to_string())),
    }

    // Neither logits nor losses.
    let empty: distilkit::distill::Adaptor = Box::new(|_, _| AdaptorMap::new());
    assert!(matches!(run_adaptor(&empty, batch, &outputs), Err(DistillError::Contract(_))));
    cleanup(&cfg);
}

#[test]
fn hidden_match_requires_hidden_from_the_adaptor() {
    let cfg = unique_dirs("missing-hidden");
    let teacher = build_model(&teacher_spec(), 121).unwrap();
    let student = build_model(&student_spec(), 122).unwrap();
    let dcfg = parse_distillation_config(
        r#"{"intermediate_matches": [
            {"feature": "hidden", "loss": "nst", "layer_T": 2, "layer_S": 1, "weight": 1}
        ]}"#,
        &Presets::default(),
    )
    .unwrap();
    let loader = DataLoader::new(small_dataset(20, 8), 4, cfg.seed).unwrap();
    let mut optimizer = Adam::new(student.trainable_tensors(), AdamConfig::default());
    // The minimal adaptor omits "hidden".
    let mut d = GeneralDistiller::new(
        teacher,
        student,
        minimal_adaptor(),
        minimal_adaptor(),
        loader,
        cfg.clone(),
        dcfg,
        Presets::default(),
    )
    .unwrap();
    match d.train(&mut optimizer, 1, None) {
        Err(DistillError::Contract(msg)) => assert!(msg.contains("hidden"), "{msg}"),
        other => panic!("expected contract error, got {:?}", other.err().map(|e| e.to_string())),
    }
    cleanup(&cfg);
}

#[test]
fn hard_label_weight_without_labels_is_a_contract_error() {
    let cfg = unique_dirs("no-labels");
    let teacher = build_model(&teacher_spec(), 131).unwrap();
    let student = build_model(&student_spec(), 132).unwrap();
    let dcfg = DistillationConfig { hard_label_weight: 1.0, ..kd_only_config() };
    let loader = DataLoader::new(small_dataset(21, 8), 4, cfg.seed).unwrap();
    let mut optimizer = Adam::new(student.trainable_tensors(), AdamConfig::default());
    let mut d = BasicDistiller::new(
        teacher,
        student,
        minimal_adaptor(),
        minimal_adaptor(),
        loader,
        cfg.clone(),
        dcfg,
        Presets::default(),
    )
    .unwrap();
    match d.train(&mut optimizer, 1, None) {
        Err(DistillError::Contract(msg)) => assert!(msg.contains("labels"), "{msg}"),
        other => panic!("expected contract error, got {:?}", other.err().map(|e| e.to_string())),
    }
    cleanup(&cfg);
}
