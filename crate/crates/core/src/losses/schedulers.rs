//! Loss-weight and temperature schedulers.

use std::rc::Rc;

use super::{LossError, Presets, TemperatureSchedulerFn};
use crate::tensor::Tensor;

/// Evaluate a registered weight scheduler at a training progress in [0, 1].
pub fn evaluate_weight_scheduler(
    presets: &Presets,
    name: &str,
    base_weight: f64,
    progress: f64,
) -> Result<f64, LossError> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(LossError::Config(format!("progress {progress} outside [0, 1]")));
    }
    let f = presets.weight_scheduler(name).ok_or_else(|| {
        LossError::Config(format!(
            "unknown weight scheduler \"{name}\" (registered: {})",
            presets.weight_scheduler_names().join(", ")
        ))
    })?;
    Ok(f(base_weight, progress))
}

/// Evaluate a registered temperature scheduler, producing one temperature per
/// sample.
pub fn evaluate_temperature_scheduler(
    presets: &Presets,
    name: &str,
    base_temperature: f64,
    teacher_logits: &Tensor,
    student_logits: &Tensor,
) -> Result<Vec<f64>, LossError> {
    if base_temperature <= 0.0 {
        return Err(LossError::Config("base temperature must be > 0".into()));
    }
    let f = presets.temperature_scheduler(name).ok_or_else(|| {
        LossError::Config(format!(
            "unknown temperature scheduler \"{name}\" (registered: {})",
            presets.temperature_scheduler_names().join(", ")
        ))
    })?;
    let out = f(base_temperature, teacher_logits, student_logits)?;
    if out.iter().any(|t| *t <= 0.0 || !t.is_finite()) {
        return Err(LossError::Config(format!(
            "temperature scheduler \"{name}\" produced a non-positive temperature"
        )));
    }
    Ok(out)
}

pub(super) fn constant_temperature(
    base: f64,
    teacher_logits: &Tensor,
    _student_logits: &Tensor,
) -> Result<Vec<f64>, LossError> {
    Ok(vec![base; teacher_logits.shape()[0]])
}

/// Cosine-divergence temperature: `T_i = base * (1 + beta * (1 - cos(z_t_i,
/// z_s_i)))`, clamped to `[base, 2 * base]`. Each sample's logits are
/// flattened across every non-batch axis before the cosine.
pub fn flsw_temperature_with_beta(beta: f64) -> TemperatureSchedulerFn {
    Rc::new(move |base: f64, z_t: &Tensor, z_s: &Tensor| {
        if z_t.shape() != z_s.shape() {
            return Err(LossError::Config(format!(
                "flsw_temperature requires matching logits, got {:?} and {:?}",
                z_t.shape(),
                z_s.shape()
            )));
        }
        let batch = z_t.shape()[0];
        let per = z_t.numel() / batch;
        let td = z_t.to_vec();
        let sd = z_s.to_vec();
        let mut out = Vec::with_capacity(batch);
        for b in 0..batch {
            let t_row = &td[b * per..(b + 1) * per];
            let s_row = &sd[b * per..(b + 1) * per];
            let dot: f64 = t_row.iter().zip(s_row).map(|(a, b)| a * b).sum();
            let tn: f64 = t_row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let sn: f64 = s_row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos = dot / (tn * sn + 1e-12);
            let t = base * (1.0 + beta * (1.0 - cos));
            out.push(t.clamp(base, 2.0 * base));
        }
        Ok(out)
    })
}
