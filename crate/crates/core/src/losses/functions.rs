//! The built-in loss functions.
//!
//! Conventions shared by every loss here:
//! - the teacher side is detached (constants; no gradient flows into it);
//! - masked rows/positions are excluded from every reduction;
//! - results are differentiable scalars in the student's graph.

use super::{AttentionInputs, FeaturePair, LossError, SoftLabelInputs, Temperature};
use crate::tensor::{Tensor, TensorError};

/// Guard inside square roots so that zero vectors normalize to zero instead
/// of producing NaN gradients.
const NORM_GUARD: f64 = 1e-24;
/// Guard inside logarithms and denominators.
const EPS: f64 = 1e-12;

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> LossError {
    LossError::Tensor(TensorError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    })
}

/// Constant tensor of `1/T` in the shape of `logits`. Per-sample
/// temperatures broadcast across everything but the batch axis.
fn recip_temperature(temp: &Temperature, logits: &Tensor) -> Result<Tensor, LossError> {
    temp.validate()?;
    match temp {
        Temperature::Scalar(t) => {
            Ok(Tensor::from_vec(vec![1.0 / t; logits.numel()], logits.shape())
                .expect("shape is valid"))
        }
        Temperature::PerSample(ts) => {
            let batch = logits.shape()[0];
            if ts.len() != batch {
                return Err(LossError::Config(format!(
                    "per-sample temperature has {} entries for batch {batch}",
                    ts.len()
                )));
            }
            let recip: Vec<f64> = ts.iter().map(|t| 1.0 / t).collect();
            let t = Tensor::from_vec(recip, &[batch]).expect("batch >= 1");
            if logits.shape().len() == 1 {
                Ok(t)
            } else {
                Ok(t.expand_trailing(&logits.shape()[1..])?)
            }
        }
    }
}

/// Validate an optional 0/1 mask against an expected shape; returns its data.
fn mask_data(mask: Option<&Tensor>, expected: &[usize], op: &'static str) -> Result<Option<Vec<f64>>, LossError> {
    match mask {
        None => Ok(None),
        Some(m) => {
            if m.shape() != expected {
                return Err(LossError::Tensor(TensorError::ShapeMismatch {
                    op,
                    lhs: expected.to_vec(),
                    rhs: m.shape().to_vec(),
                }));
            }
            let data = m.to_vec();
            if data.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(LossError::Input(format!("{op}: mask entries must be 0 or 1")));
            }
            Ok(Some(data))
        }
    }
}

/// Mean of `values` over rows where `mask` is 1 (mean over everything when
/// there is no mask).
fn masked_mean(values: &Tensor, mask: Option<&Tensor>, op: &'static str) -> Result<Tensor, LossError> {
    match mask_data(mask, values.shape(), op)? {
        None => Ok(values.mean()),
        Some(data) => {
            let count: f64 = data.iter().sum();
            if count == 0.0 {
                return Err(LossError::Input(format!("{op}: every position is masked")));
            }
            let m = mask.expect("checked above");
            Ok(values.mul(m)?.sum().mul_scalar(1.0 / count))
        }
    }
}

/// Softmax of `z / T` along the class (last) axis.
pub fn softmax_with_temperature(z: &Tensor, temperature: &Temperature) -> Result<Tensor, LossError> {
    let recip = recip_temperature(temperature, z)?;
    let last = z.shape().len() - 1;
    Ok(z.mul(&recip)?.softmax(last)?)
}

fn check_soft_label_shapes(inputs: &SoftLabelInputs) -> Result<(), LossError> {
    let (t, s) = (&inputs.teacher_logits, &inputs.student_logits);
    if t.shape() != s.shape() {
        return Err(shape_err("kd_loss", t, s));
    }
    if t.shape().len() < 2 {
        return Err(LossError::Config(format!(
            "logits must be [batch, classes] or [batch, positions, classes], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Cross-entropy between the temperature-softened teacher distribution
/// (constant) and the student's softened distribution, averaged over the
/// batch and unmasked positions. No `T^2` rescaling is applied: the relative
/// magnitude of this term is governed entirely by the configured KD weight.
pub fn kd_ce_loss(inputs: &SoftLabelInputs) -> Result<Tensor, LossError> {
    check_soft_label_shapes(inputs)?;
    let z_t = inputs.teacher_logits.detached();
    let recip = recip_temperature(&inputs.temperature, &z_t)?;
    let last = z_t.shape().len() - 1;

    let mut teacher_probs = z_t.mul(&recip)?.softmax(last)?;
    if inputs.probability_shift {
        if let Some(gold) = &inputs.gold_labels {
            teacher_probs = probability_shift(&teacher_probs, gold)?;
        }
    }
    let log_student = inputs.student_logits.mul(&recip)?.log_softmax(last)?;
    let ce_rows = teacher_probs.mul(&log_student)?.sum_axis(last)?.neg();
    masked_mean(&ce_rows, inputs.logits_mask.as_ref(), "kd_ce")
}

/// Mean squared error between `z_t / T` and `z_s / T` over unmasked entries.
pub fn kd_mse_loss(inputs: &SoftLabelInputs) -> Result<Tensor, LossError> {
    check_soft_label_shapes(inputs)?;
    let z_t = inputs.teacher_logits.detached();
    let recip = recip_temperature(&inputs.temperature, &z_t)?;
    let diff = z_t.sub(&inputs.student_logits)?.mul(&recip)?;
    let sq = diff.mul(&diff)?;
    let classes = *sq.shape().last().expect("rank >= 2");
    match mask_data(inputs.logits_mask.as_ref(), &sq.shape()[..sq.shape().len() - 1], "kd_mse")? {
        None => Ok(sq.mean()),
        Some(data) => {
            let count: f64 = data.iter().sum();
            if count == 0.0 {
                return Err(LossError::Input("kd_mse: every position is masked".into()));
            }
            let mask = inputs.logits_mask.as_ref().expect("checked above");
            let expanded = mask.expand_trailing(&[classes])?;
            Ok(sq.mul(&expanded)?.sum().mul_scalar(1.0 / (count * classes as f64)))
        }
    }
}

/// Mean cross-entropy against one-hot gold labels over unmasked, labeled
/// rows. Raw logits: the temperature never applies to the hard-label loss.
/// A batch with no labeled rows contributes zero.
pub fn hard_label_loss(
    student_logits: &Tensor,
    gold: &[Option<usize>],
    logits_mask: Option<&Tensor>,
) -> Result<Tensor, LossError> {
    let shape = student_logits.shape();
    if shape.len() < 2 {
        return Err(LossError::Config(format!(
            "hard_label expects at least [batch, classes] logits, got {shape:?}"
        )));
    }
    let classes = *shape.last().expect("rank >= 2");
    let rows = student_logits.numel() / classes;
    if gold.len() != rows {
        return Err(LossError::Input(format!(
            "hard_label got {} labels for {rows} rows",
            gold.len()
        )));
    }
    let row_shape = &shape[..shape.len() - 1];
    let mask = mask_data(logits_mask, row_shape, "hard_label")?;

    let mut one_hot = vec![0.0; rows * classes];
    let mut weights = vec![0.0; rows];
    for (r, label) in gold.iter().enumerate() {
        let unmasked = mask.as_ref().is_none_or(|m| m[r] == 1.0);
        if !unmasked {
            continue;
        }
        if let Some(g) = label {
            if *g >= classes {
                return Err(LossError::Input(format!(
                    "gold label {g} out of range for {classes} classes at row {r}"
                )));
            }
            one_hot[r * classes + g] = 1.0;
            weights[r] = 1.0;
        }
    }
    let labeled: f64 = weights.iter().sum();
    if labeled == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    let one_hot = Tensor::from_vec(one_hot, shape).expect("shape is valid");
    let weights = Tensor::from_vec(weights, row_shape).expect("shape is valid");
    let last = shape.len() - 1;
    let picked = student_logits.log_softmax(last)?.mul(&one_hot)?.sum_axis(last)?.neg();
    Ok(picked.mul(&weights)?.sum().mul_scalar(1.0 / labeled))
}

/// Swap the probability at the argmax position with the probability at the
/// gold position, per row, so the result's argmax is the gold label. Ties
/// break toward the lowest-index maximum. Rows without a gold label pass
/// through unchanged. The result is a constant (teacher-side) tensor.
pub fn probability_shift(probs: &Tensor, gold: &[Option<usize>]) -> Result<Tensor, LossError> {
    let shape = probs.shape();
    let classes = *shape.last().ok_or_else(|| {
        LossError::Config("probability_shift expects at least rank 1".into())
    })?;
    let rows = probs.numel() / classes;
    if gold.len() != rows {
        return Err(LossError::Input(format!(
            "probability_shift got {} labels for {rows} rows",
            gold.len()
        )));
    }
    let mut data = probs.to_vec();
    for (r, label) in gold.iter().enumerate() {
        let Some(g) = label else { continue };
        if *g >= classes {
            return Err(LossError::Input(format!(
                "gold label {g} out of range for {classes} classes at row {r}"
            )));
        }
        let row = &mut data[r * classes..(r + 1) * classes];
        let mut argmax = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[argmax] {
                argmax = j;
            }
        }
        row.swap(argmax, *g);
    }
    Ok(Tensor::from_vec(data, shape).expect("shape is valid"))
}

/// Mean squared error between aligned hidden features over unmasked
/// positions and all feature dimensions.
pub fn hidden_mse_loss(pair: &FeaturePair) -> Result<Tensor, LossError> {
    let (teacher, student) = pair.aligned()?;
    let teacher = teacher.detached();
    if teacher.shape() != student.shape() {
        return Err(shape_err("hidden_mse", &teacher, &student));
    }
    let d = *teacher.shape().last().expect("rank >= 1");
    let diff = teacher.sub(&student)?;
    let sq = diff.mul(&diff)?;
    let row_shape = &teacher.shape()[..teacher.shape().len() - 1];
    match mask_data(pair.inputs_mask.as_ref(), row_shape, "hidden_mse")? {
        None => Ok(sq.mean()),
        Some(data) => {
            let count: f64 = data.iter().sum();
            if count == 0.0 {
                return Err(LossError::Input("hidden_mse: every position is masked".into()));
            }
            let mask = pair.inputs_mask.as_ref().expect("checked above");
            let expanded = mask.expand_trailing(&[d])?;
            Ok(sq.mul(&expanded)?.sum().mul_scalar(1.0 / (count * d as f64)))
        }
    }
}

/// Mean over unmasked positions of `1 - cosine(teacher, student)` per
/// position. Zero vectors have similarity 0 via the denominator guard, and
/// the loss is invariant under positive per-position scaling of either side.
pub fn cos_loss(pair: &FeaturePair) -> Result<Tensor, LossError> {
    let (teacher, student) = pair.aligned()?;
    let teacher = teacher.detached();
    if teacher.shape() != student.shape() {
        return Err(shape_err("cos", &teacher, &student));
    }
    let last = teacher.shape().len() - 1;
    let dot = teacher.mul(&student)?.sum_axis(last)?;
    let t_norm = teacher.mul(&teacher)?.sum_axis(last)?.add_scalar(NORM_GUARD).sqrt();
    let s_norm = student.mul(&student)?.sum_axis(last)?.add_scalar(NORM_GUARD).sqrt();
    let denom = t_norm.mul(&s_norm)?.add_scalar(EPS);
    let sim = dot.div(&denom)?;
    let per_position = sim.neg().add_scalar(1.0);
    masked_mean(&per_position, pair.inputs_mask.as_ref(), "cos")
}

/// How head-averaged attention matrices are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionLossMode {
    /// Mean squared error over unmasked query/key cells.
    Mse,
    /// Mean KL divergence of student rows from teacher rows at unmasked
    /// queries, restricted to unmasked keys (zero when the rows coincide).
    Ce,
}

/// Compare attention stacks after averaging heads away (head counts may
/// differ between teacher and student).
pub fn attention_loss(inputs: &AttentionInputs, mode: AttentionLossMode) -> Result<Tensor, LossError> {
    let (t, s) = (&inputs.teacher, &inputs.student);
    if t.shape().len() != 4 || s.shape().len() != 4 {
        return Err(LossError::Config(format!(
            "attention losses expect [batch, heads, positions, positions], got {:?} and {:?}",
            t.shape(),
            s.shape()
        )));
    }
    let (b, len) = (t.shape()[0], t.shape()[2]);
    if s.shape()[0] != b || s.shape()[2] != len || t.shape()[3] != len || s.shape()[3] != len {
        return Err(shape_err("attention_loss", t, s));
    }
    let t_avg = t.detached().mean_axis(1)?;
    let s_avg = s.mean_axis(1)?;

    let mask = mask_data(inputs.inputs_mask.as_ref(), &[b, len], "attention_loss")?;
    let (cell_mask, q_counts): (Vec<f64>, Vec<f64>) = match &mask {
        None => (vec![1.0; b * len * len], vec![len as f64; b]),
        Some(m) => {
            let mut cells = vec![0.0; b * len * len];
            let mut counts = vec![0.0; b];
            for bi in 0..b {
                for q in 0..len {
                    let mq = m[bi * len + q];
                    counts[bi] += mq;
                    for k in 0..len {
                        cells[(bi * len + q) * len + k] = mq * m[bi * len + k];
                    }
                }
            }
            (cells, counts)
        }
    };
    let total_cells: f64 = cell_mask.iter().sum();
    if total_cells == 0.0 {
        return Err(LossError::Input("attention_loss: every position is masked".into()));
    }
    let cell_mask = Tensor::from_vec(cell_mask, &[b, len, len]).expect("shape is valid");

    match mode {
        AttentionLossMode::Mse => {
            let diff = t_avg.sub(&s_avg)?;
            let sq = diff.mul(&diff)?;
            Ok(sq.mul(&cell_mask)?.sum().mul_scalar(1.0 / total_cells))
        }
        AttentionLossMode::Ce => {
            let log_t = t_avg.add_scalar(EPS).log();
            let log_s = s_avg.add_scalar(EPS).log();
            let terms = t_avg.mul(&log_t.sub(&log_s)?)?;
            let row_kl = terms.mul(&cell_mask)?.sum_axis(2)?;
            let total_rows: f64 = q_counts.iter().sum();
            // row_kl is already zero at masked queries via the cell mask.
            Ok(row_kl.sum().mul_scalar(1.0 / total_rows))
        }
    }
}

/// Per-sample unmasked-position counts, or the full length when unmasked.
fn position_counts(
    mask: Option<&Tensor>,
    batch: usize,
    len: usize,
    op: &'static str,
) -> Result<Vec<f64>, LossError> {
    match mask_data(mask, &[batch, len], op)? {
        None => Ok(vec![len as f64; batch]),
        Some(data) => {
            let counts: Vec<f64> =
                (0..batch).map(|b| data[b * len..(b + 1) * len].iter().sum()).collect();
            if counts.contains(&0.0) {
                return Err(LossError::Input(format!("{op}: a sample has every position masked")));
            }
            Ok(counts)
        }
    }
}

fn apply_position_mask(feature: &Tensor, mask: Option<&Tensor>) -> Result<Tensor, LossError> {
    match mask {
        None => Ok(feature.clone()),
        Some(m) => {
            let d = *feature.shape().last().expect("rank >= 1");
            Ok(feature.mul(&m.expand_trailing(&[d])?)?)
        }
    }
}

/// Layer-flow loss: per sample, the Gram matrix between two layers' features
/// is `G = F_A^T F_B / L_unmasked`; the loss is the mean over the batch of
/// `||G_teacher - G_student||_F^2 / (d_A * d_B)`. Projections align student
/// dimensions with the teacher's. The position mask is taken from `pair_a`.
pub fn fsp_loss(pair_a: &FeaturePair, pair_b: &FeaturePair) -> Result<Tensor, LossError> {
    let (ta, sa) = pair_a.aligned()?;
    let (tb, sb) = pair_b.aligned()?;
    let (batch, len) = (ta.shape()[0], ta.shape()[1]);
    for f in [&ta, &sa, &tb, &sb] {
        if f.shape().len() != 3 || f.shape()[0] != batch || f.shape()[1] != len {
            return Err(shape_err("fsp", &ta, f));
        }
    }
    let mask = pair_a.inputs_mask.as_ref();
    let counts = position_counts(mask, batch, len, "fsp")?;
    let d_a = ta.shape()[2];
    let d_b = tb.shape()[2];

    let gram = |f_a: &Tensor, f_b: &Tensor| -> Result<Tensor, LossError> {
        let a_m = apply_position_mask(f_a, mask)?;
        let b_m = apply_position_mask(f_b, mask)?;
        let g = a_m.transpose(1, 2)?.matmul(&b_m)?;
        let recip: Vec<f64> = counts.iter().map(|c| 1.0 / c).collect();
        let scale =
            Tensor::from_vec(recip, &[batch]).expect("batch >= 1").expand_trailing(&[d_a, d_b])?;
        Ok(g.mul(&scale)?)
    };

    let g_t = gram(&ta.detached(), &tb.detached())?;
    let g_s = gram(&sa, &sb)?;
    let diff = g_t.sub(&g_s)?;
    Ok(diff.mul(&diff)?.sum().mul_scalar(1.0 / (batch * d_a * d_b) as f64))
}

/// Neuron selectivity transfer with a linear kernel: each side's per-neuron
/// activation patterns over unmasked positions are L2-normalized and averaged
/// into `G = sum_j f_j f_j^T / d` (positions x positions); the loss is the
/// mean over the batch of `||G_t - G_s||_F^2 / L^2`. Dimension-agnostic: no
/// projection is required (one is applied if configured).
pub fn nst_loss(pair: &FeaturePair) -> Result<Tensor, LossError> {
    let (teacher, student) = pair.projected()?;
    let teacher = teacher.detached();
    let (batch, len) = (teacher.shape()[0], teacher.shape()[1]);
    if student.shape().len() != 3 || teacher.shape().len() != 3
        || student.shape()[0] != batch || student.shape()[1] != len
    {
        return Err(shape_err("nst", &teacher, &student));
    }
    let mask = pair.inputs_mask.as_ref();
    let counts = position_counts(mask, batch, len, "nst")?;

    let gram = |f: &Tensor| -> Result<Tensor, LossError> {
        let d = *f.shape().last().expect("rank 3");
        let masked = apply_position_mask(f, mask)?;
        // [batch, d, len]: rows are per-neuron activation patterns.
        let by_neuron = masked.transpose(1, 2)?;
        let norms = by_neuron
            .mul(&by_neuron)?
            .sum_axis(2)?
            .add_scalar(NORM_GUARD)
            .sqrt()
            .expand_trailing(&[len])?;
        let unit = by_neuron.div(&norms)?;
        Ok(unit.transpose(1, 2)?.matmul(&unit)?.mul_scalar(1.0 / d as f64))
    };

    let g_t = gram(&teacher)?;
    let g_s = gram(&student)?;
    let diff = g_t.sub(&g_s)?;
    let sq = diff.mul(&diff)?;
    let recip_sq: Vec<f64> = counts.iter().map(|c| 1.0 / (c * c)).collect();
    let scale = Tensor::from_vec(recip_sq, &[batch])
        .expect("batch >= 1")
        .expand_trailing(&[len, len])?;
    Ok(sq.mul(&scale)?.sum().mul_scalar(1.0 / batch as f64))
}
