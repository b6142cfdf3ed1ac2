//! Checkpoint step scheduling.

use super::DistillError;

/// Global steps at which the student is saved and the callback invoked:
/// within each epoch `e` (1-based), steps `(e-1)*S + floor(S*j/f)` for
/// `j = 1..=f`. The last training step is always included.
pub fn compute_checkpoint_steps(
    steps_per_epoch: usize,
    num_epochs: usize,
    ckpt_frequency: usize,
) -> Result<Vec<u64>, DistillError> {
    compute_checkpoint_steps_with_epoch_frequency(steps_per_epoch, num_epochs, ckpt_frequency, 1)
}

/// As [`compute_checkpoint_steps`], checkpointing only every
/// `ckpt_epoch_frequency`-th epoch.
pub fn compute_checkpoint_steps_with_epoch_frequency(
    steps_per_epoch: usize,
    num_epochs: usize,
    ckpt_frequency: usize,
    ckpt_epoch_frequency: usize,
) -> Result<Vec<u64>, DistillError> {
    let (s, e, f) = (steps_per_epoch, num_epochs, ckpt_frequency);
    if s < 1 || e < 1 || f < 1 || ckpt_epoch_frequency < 1 {
        return Err(DistillError::Validation(
            "steps_per_epoch, num_epochs, ckpt_frequency and ckpt_epoch_frequency must be >= 1"
                .into(),
        ));
    }
    if f > s {
        return Err(DistillError::Validation(format!(
            "ckpt_frequency ({f}) cannot exceed steps_per_epoch ({s})"
        )));
    }
    let mut steps = Vec::new();
    for epoch in 1..=e {
        if epoch % ckpt_epoch_frequency != 0 {
            continue;
        }
        for j in 1..=f {
            steps.push(((epoch - 1) * s + s * j / f) as u64);
        }
    }
    let last = (e * s) as u64;
    if steps.last() != Some(&last) {
        steps.push(last);
    }
    steps.dedup();
    Ok(steps)
}
