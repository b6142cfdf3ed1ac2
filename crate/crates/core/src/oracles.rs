//! Naive loop-based reference implementations used as test oracles.
//!
//! Everything here works on plain slices with explicit dimensions and never
//! touches [`crate::tensor`], so these functions stay independent of the
//! implementation paths they are used to check. They are written for clarity,
//! not speed, and are only intended for small inputs.

/// Stable softmax of one row.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Row-by-row KD cross-entropy with per-row temperatures, averaged over
/// unmasked rows.
pub fn kd_ce(
    teacher: &[f64],
    student: &[f64],
    rows: usize,
    classes: usize,
    temperature: &[f64],
    mask: Option<&[f64]>,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..rows {
        let w = mask.map_or(1.0, |m| m[r]);
        if w == 0.0 {
            continue;
        }
        let t_row: Vec<f64> =
            teacher[r * classes..(r + 1) * classes].iter().map(|v| v / temperature[r]).collect();
        let s_row: Vec<f64> =
            student[r * classes..(r + 1) * classes].iter().map(|v| v / temperature[r]).collect();
        let p_t = softmax_row(&t_row);
        let p_s = softmax_row(&s_row);
        let mut ce = 0.0;
        for c in 0..classes {
            ce -= p_t[c] * p_s[c].ln();
        }
        total += ce;
        count += 1.0;
    }
    total / count
}

/// Mean squared error between temperature-scaled logits over unmasked rows.
pub fn kd_mse(
    teacher: &[f64],
    student: &[f64],
    rows: usize,
    classes: usize,
    temperature: &[f64],
    mask: Option<&[f64]>,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..rows {
        let w = mask.map_or(1.0, |m| m[r]);
        if w == 0.0 {
            continue;
        }
        for c in 0..classes {
            let d = (teacher[r * classes + c] - student[r * classes + c]) / temperature[r];
            total += d * d;
        }
        count += classes as f64;
    }
    total / count
}

/// Mean one-hot cross-entropy over unmasked labeled rows.
pub fn hard_label(
    student: &[f64],
    rows: usize,
    classes: usize,
    gold: &[Option<usize>],
    mask: Option<&[f64]>,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..rows {
        let w = mask.map_or(1.0, |m| m[r]);
        let Some(g) = gold[r] else { continue };
        if w == 0.0 {
            continue;
        }
        let p = softmax_row(&student[r * classes..(r + 1) * classes]);
        total -= p[g].ln();
        count += 1.0;
    }
    if count == 0.0 {
        0.0
    } else {
        total / count
    }
}

/// MSE between `[batch, len, d]` features over unmasked positions.
pub fn hidden_mse(
    teacher: &[f64],
    student: &[f64],
    batch: usize,
    len: usize,
    d: usize,
    mask: Option<&[f64]>,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for b in 0..batch {
        for l in 0..len {
            let w = mask.map_or(1.0, |m| m[b * len + l]);
            if w == 0.0 {
                continue;
            }
            for j in 0..d {
                let idx = (b * len + l) * d + j;
                let diff = teacher[idx] - student[idx];
                total += diff * diff;
            }
            count += d as f64;
        }
    }
    total / count
}

/// Attention-loss oracle over `[batch, heads, len, len]` stacks: averages
/// heads, then either MSE over unmasked query/key cells or mean row KL at
/// unmasked queries restricted to unmasked keys.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    teacher: &[f64],
    student: &[f64],
    batch: usize,
    teacher_heads: usize,
    student_heads: usize,
    len: usize,
    mask: Option<&[f64]>,
    ce_mode: bool,
) -> f64 {
    let avg = |data: &[f64], heads: usize, b: usize, q: usize, k: usize| -> f64 {
        (0..heads)
            .map(|h| data[((b * heads + h) * len + q) * len + k])
            .sum::<f64>()
            / heads as f64
    };
    let m = |b: usize, p: usize| mask.map_or(1.0, |m| m[b * len + p]);

    if ce_mode {
        let mut total = 0.0;
        let mut rows = 0.0;
        for b in 0..batch {
            for q in 0..len {
                if m(b, q) == 0.0 {
                    continue;
                }
                let mut kl = 0.0;
                for k in 0..len {
                    if m(b, k) == 0.0 {
                        continue;
                    }
                    let t = avg(teacher, teacher_heads, b, q, k);
                    let s = avg(student, student_heads, b, q, k);
                    kl += t * ((t + 1e-12).ln() - (s + 1e-12).ln());
                }
                total += kl;
                rows += 1.0;
            }
        }
        total / rows
    } else {
        let mut total = 0.0;
        let mut cells = 0.0;
        for b in 0..batch {
            for q in 0..len {
                for k in 0..len {
                    if m(b, q) == 0.0 || m(b, k) == 0.0 {
                        continue;
                    }
                    let diff = avg(teacher, teacher_heads, b, q, k)
                        - avg(student, student_heads, b, q, k);
                    total += diff * diff;
                    cells += 1.0;
                }
            }
        }
        total / cells
    }
}

/// Apply a linear projection `[d_in, d_out]` (+ bias) to `[batch, len, d_in]`
/// features.
pub fn project(
    features: &[f64],
    batch: usize,
    len: usize,
    d_in: usize,
    weight: &[f64],
    bias: &[f64],
    d_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * len * d_out];
    for r in 0..batch * len {
        for j in 0..d_out {
            let mut s = bias[j];
            for i in 0..d_in {
                s += features[r * d_in + i] * weight[i * d_out + j];
            }
            out[r * d_out + j] = s;
        }
    }
    out
}

/// FSP-loss oracle: per sample, `G = F_A^T F_B / count` over unmasked
/// positions; result is the batch mean of `||G_t - G_s||_F^2 / (d_a * d_b)`.
/// Inputs are already projected to common dimensions.
#[allow(clippy::too_many_arguments)]
pub fn fsp(
    teacher_a: &[f64],
    teacher_b: &[f64],
    student_a: &[f64],
    student_b: &[f64],
    batch: usize,
    len: usize,
    d_a: usize,
    d_b: usize,
    mask: Option<&[f64]>,
) -> f64 {
    let gram = |fa: &[f64], fb: &[f64], b: usize| -> Vec<f64> {
        let mut g = vec![0.0; d_a * d_b];
        let mut count = 0.0;
        for l in 0..len {
            let w = mask.map_or(1.0, |m| m[b * len + l]);
            if w == 0.0 {
                continue;
            }
            count += 1.0;
            for i in 0..d_a {
                for j in 0..d_b {
                    g[i * d_b + j] +=
                        fa[(b * len + l) * d_a + i] * fb[(b * len + l) * d_b + j];
                }
            }
        }
        for v in g.iter_mut() {
            *v /= count;
        }
        g
    };
    let mut total = 0.0;
    for b in 0..batch {
        let g_t = gram(teacher_a, teacher_b, b);
        let g_s = gram(student_a, student_b, b);
        let fro: f64 = g_t.iter().zip(&g_s).map(|(t, s)| (t - s) * (t - s)).sum();
        total += fro / (d_a * d_b) as f64;
    }
    total / batch as f64
}

/// Reference accuracy in percent: exact pairwise comparison.
pub fn ref_accuracy(predictions: &[usize], gold: &[usize]) -> f64 {
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    100.0 * correct as f64 / gold.len() as f64
}

/// Reference tag-level micro-F1 in percent over non-background (nonzero)
/// tags; `mask` selects the positions that count.
pub fn ref_tagging_f1(predictions: &[Vec<usize>], gold: &[Vec<usize>], mask: &[Vec<u8>]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0f64, 0f64, 0f64);
    for ((p_row, g_row), m_row) in predictions.iter().zip(gold).zip(mask) {
        for ((&p, &g), &m) in p_row.iter().zip(g_row).zip(m_row) {
            if m == 0 {
                continue;
            }
            if p != 0 && p == g {
                tp += 1.0;
            }
            if p != 0 && p != g {
                fp += 1.0;
            }
            if g != 0 && p != g {
                fn_ += 1.0;
            }
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    let f1 = 2.0 * precision * recall / (precision + recall);
    100.0 * f1
}

/// Reference span exact-match and token-overlap F1, both in percent.
pub fn ref_span_em_f1(predictions: &[(usize, usize)], gold: &[(usize, usize)]) -> (f64, f64) {
    let mut em = 0.0;
    let mut f1 = 0.0;
    for (&(ps, pe), &(gs, ge)) in predictions.iter().zip(gold) {
        if ps == gs && pe == ge {
            em += 1.0;
        }
        if pe >= ps {
            let lo = ps.max(gs);
            let hi = pe.min(ge);
            if hi >= lo {
                let overlap = (hi - lo + 1) as f64;
                let p = overlap / (pe - ps + 1) as f64;
                let r = overlap / (ge - gs + 1) as f64;
                f1 += 2.0 * p * r / (p + r);
            }
        }
    }
    let n = gold.len() as f64;
    (100.0 * em / n, 100.0 * f1 / n)
}

/// NST-loss oracle: per sample and side, L2-normalize each neuron's
/// activation pattern over unmasked positions, average their outer products
/// into `G` (positions x positions), and compare with `||G_t - G_s||_F^2 /
/// count^2`, averaged over the batch.
pub fn nst(
    teacher: &[f64],
    student: &[f64],
    batch: usize,
    len: usize,
    d_teacher: usize,
    d_student: usize,
    mask: Option<&[f64]>,
) -> f64 {
    let gram = |f: &[f64], d: usize, b: usize| -> Vec<f64> {
        let mut g = vec![0.0; len * len];
        for j in 0..d {
            let col: Vec<f64> = (0..len)
                .map(|l| {
                    let w = mask.map_or(1.0, |m| m[b * len + l]);
                    w * f[(b * len + l) * d + j]
                })
                .collect();
            let norm = (col.iter().map(|v| v * v).sum::<f64>() + 1e-24).sqrt();
            for p in 0..len {
                for q in 0..len {
                    g[p * len + q] += (col[p] / norm) * (col[q] / norm);
                }
            }
        }
        for v in g.iter_mut() {
            *v /= d as f64;
        }
        g
    };
    let mut total = 0.0;
    for b in 0..batch {
        let count = mask.map_or(len as f64, |m| m[b * len..(b + 1) * len].iter().sum());
        let g_t = gram(teacher, d_teacher, b);
        let g_s = gram(student, d_student, b);
        let fro: f64 = g_t.iter().zip(&g_s).map(|(t, s)| (t - s) * (t - s)).sum();
        total += fro / (count * count);
    }
    total / batch as f64
}
