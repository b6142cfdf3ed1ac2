//! Evaluation metrics: accuracy, tag-level micro-F1, and span EM/F1.

use std::collections::BTreeMap;

use super::{Dataset, TaskError, TaskKind, Target};
use crate::models::{HeadSpec, Model};

/// A model's prediction for one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prediction {
    Class(usize),
    Tags(Vec<usize>),
    Span(usize, usize),
}

/// Metric values in [0, 100]; `primary` is the headline number (accuracy or
/// F1) used for comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub primary: f64,
    pub values: BTreeMap<String, f64>,
}

fn head_matches(head: &HeadSpec, kind: TaskKind) -> bool {
    matches!(
        (head, kind),
        (HeadSpec::Classification { .. }, TaskKind::Classification)
            | (HeadSpec::Tagging { .. }, TaskKind::Tagging)
            | (HeadSpec::SpanExtraction, TaskKind::Span)
    )
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Run the model over the dataset (primary head) and compute its metrics.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<TaskMetrics, TaskError> {
    evaluate_with_head(model, 0, dataset)
}

/// As [`evaluate`], through the head in `head_slot`.
pub fn evaluate_with_head(
    model: &Model,
    head_slot: usize,
    dataset: &Dataset,
) -> Result<TaskMetrics, TaskError> {
    let head = model.heads().get(head_slot).ok_or_else(|| {
        TaskError::Input(format!("model has no head slot {head_slot}"))
    })?;
    if !head_matches(head, dataset.task_kind) {
        return Err(TaskError::Input(format!(
            "head kind \"{}\" does not evaluate a {} dataset",
            head.kind_name(),
            dataset.task_kind.name()
        )));
    }
    let predictions = predict_with_head(model, head_slot, dataset)?;
    metrics_from_predictions(&predictions, dataset)
}

/// Batched argmax predictions for every example.
pub fn predict_with_head(
    model: &Model,
    head_slot: usize,
    dataset: &Dataset,
) -> Result<Vec<Prediction>, TaskError> {
    const BATCH: usize = 16;
    let mut predictions = Vec::with_capacity(dataset.len());
    for chunk in dataset.examples.chunks(BATCH) {
        let ids: Vec<Vec<usize>> = chunk.iter().map(|e| e.token_ids.clone()).collect();
        let masks: Vec<Vec<u8>> = chunk.iter().map(|e| e.inputs_mask.clone()).collect();
        let out = model.forward_with_head(head_slot, &ids, &masks)?;
        match dataset.task_kind {
            TaskKind::Classification => {
                let logits = out.logits[0].data();
                let classes = out.logits[0].shape()[1];
                for b in 0..chunk.len() {
                    predictions.push(Prediction::Class(argmax(
                        &logits[b * classes..(b + 1) * classes],
                    )));
                }
            }
            TaskKind::Tagging => {
                let logits = out.logits[0].data();
                let [_, len, tags] = out.logits[0].shape() else {
                    return Err(TaskError::Input("tagging logits must be rank 3".into()));
                };
                for (b, ex) in chunk.iter().enumerate() {
                    let row: Vec<usize> = (0..*len)
                        .map(|l| {
                            if ex.inputs_mask[l] == 1 {
                                argmax(&logits[(b * len + l) * tags..(b * len + l + 1) * tags])
                            } else {
                                0
                            }
                        })
                        .collect();
                    predictions.push(Prediction::Tags(row));
                }
            }
            TaskKind::Span => {
                let starts = out.logits[0].data();
                let ends = out.logits[1].data();
                let len = out.logits[0].shape()[1];
                for b in 0..chunk.len() {
                    let s = argmax(&starts[b * len..(b + 1) * len]);
                    let e = argmax(&ends[b * len..(b + 1) * len]);
                    predictions.push(Prediction::Span(s, e));
                }
            }
        }
    }
    Ok(predictions)
}

/// Compute metrics for externally supplied predictions.
///
/// Classification: accuracy. Tagging: micro-F1 over non-background tags at
/// unmasked positions (tag level, not entity level). Span: exact match and
/// token-overlap F1. All values are percentages.
pub fn metrics_from_predictions(
    predictions: &[Prediction],
    dataset: &Dataset,
) -> Result<TaskMetrics, TaskError> {
    if predictions.len() != dataset.len() {
        return Err(TaskError::Input(format!(
            "{} predictions for {} examples",
            predictions.len(),
            dataset.len()
        )));
    }
    let mut values = BTreeMap::new();
    let primary;
    match dataset.task_kind {
        TaskKind::Classification => {
            let mut correct = 0usize;
            let mut total = 0usize;
            for (pred, ex) in predictions.iter().zip(&dataset.examples) {
                let Some(Target::Class(gold)) = &ex.target else {
                    return Err(TaskError::Input(format!(
                        "example {} has no class label",
                        ex.id
                    )));
                };
                let Prediction::Class(p) = pred else {
                    return Err(TaskError::Input("prediction kind mismatch".into()));
                };
                total += 1;
                if p == gold {
                    correct += 1;
                }
            }
            primary = 100.0 * correct as f64 / total as f64;
            values.insert("accuracy".into(), primary);
        }
        TaskKind::Tagging => {
            let (mut tp, mut fp, mut fal_n) = (0usize, 0usize, 0usize);
            for (pred, ex) in predictions.iter().zip(&dataset.examples) {
                let Some(Target::Tags(gold)) = &ex.target else {
                    return Err(TaskError::Input(format!("example {} has no tags", ex.id)));
                };
                let Prediction::Tags(p) = pred else {
                    return Err(TaskError::Input("prediction kind mismatch".into()));
                };
                for l in 0..gold.len() {
                    if ex.inputs_mask[l] == 0 {
                        continue;
                    }
                    let (g, q) = (gold[l], p[l]);
                    if q != 0 && q == g {
                        tp += 1;
                    }
                    if q != 0 && q != g {
                        fp += 1;
                    }
                    if g != 0 && q != g {
                        fal_n += 1;
                    }
                }
            }
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fal_n == 0 { 0.0 } else { tp as f64 / (tp + fal_n) as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            primary = 100.0 * f1;
            values.insert("f1".into(), primary);
            values.insert("precision".into(), 100.0 * precision);
            values.insert("recall".into(), 100.0 * recall);
        }
        TaskKind::Span => {
            let mut em_sum = 0.0;
            let mut f1_sum = 0.0;
            let n = predictions.len() as f64;
            for (pred, ex) in predictions.iter().zip(&dataset.examples) {
                let Some(Target::Span(gs, ge)) = &ex.target else {
                    return Err(TaskError::Input(format!("example {} has no span", ex.id)));
                };
                let Prediction::Span(ps, pe) = pred else {
                    return Err(TaskError::Input("prediction kind mismatch".into()));
                };
                if ps == gs && pe == ge {
                    em_sum += 1.0;
                }
                f1_sum += span_overlap_f1(*ps, *pe, *gs, *ge);
            }
            let em = 100.0 * em_sum / n;
            let f1 = 100.0 * f1_sum / n;
            primary = f1;
            values.insert("em".into(), em);
            values.insert("f1".into(), f1);
        }
    }
    Ok(TaskMetrics { primary, values })
}

/// Token-overlap F1 between two inclusive spans; an inverted prediction
/// counts as empty.
pub fn span_overlap_f1(ps: usize, pe: usize, gs: usize, ge: usize) -> f64 {
    if pe < ps {
        return 0.0;
    }
    let lo = ps.max(gs);
    let hi = pe.min(ge);
    if hi < lo {
        return 0.0;
    }
    let overlap = (hi - lo + 1) as f64;
    let precision = overlap / (pe - ps + 1) as f64;
    let recall = overlap / (ge - gs + 1) as f64;
    2.0 * precision * recall / (precision + recall)
}
