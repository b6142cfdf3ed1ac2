//! Finite-difference gradient checks across tensor operations, losses, and
//! model blocks.

use distilkit::losses::{
    attention_loss, cos_loss, fsp_loss, hard_label_loss, hidden_mse_loss, kd_ce_loss,
    kd_mse_loss, nst_loss, AttentionInputs, AttentionLossMode, FeaturePair, LossError,
    Projection, ProjectionSide, SoftLabelInputs, Temperature,
};
use distilkit::models::{build_model, HeadSpec, Model, ModelSpec};
use distilkit::rng::Rng;
use distilkit::tensor::{finite_diff_check, Init, Tensor, TensorError};

const H: f64 = 1e-5;
const OP_TOL: f64 = 1e-5;
const MODEL_TOL: f64 = 1e-4;

fn rand(shape: &[usize], seed: u64) -> Tensor {
    Tensor::create(shape, Init::Uniform { lo: -1.5, hi: 1.5, seed }).unwrap()
}

fn unwrap_loss(e: LossError) -> TensorError {
    match e {
        LossError::Tensor(t) => t,
        other => panic!("unexpected loss error: {other}"),
    }
}

#[test]
fn elementwise_and_reduction_ops_pass_finite_differences() {
    let shapes: [&[usize]; 3] = [&[4], &[3, 5], &[4, 6, 8]];
    for (i, shape) in shapes.iter().enumerate() {
        let seed = 100 + i as u64;
        let x = rand(shape, seed);
        let other = rand(shape, seed + 50);
        let positive = Tensor::create(shape, Init::Uniform { lo: 0.2, hi: 2.0, seed: seed + 99 })
            .unwrap();

        type Case<'a> = (&'a str, Box<dyn Fn(&Tensor) -> Result<Tensor, TensorError>>, &'a Tensor);
        let cases: Vec<Case> = vec![
            ("add", Box::new({ let o = other.clone(); move |t| Ok(t.add(&o)?.sum()) }), &x),
            ("sub", Box::new({ let o = other.clone(); move |t| Ok(t.sub(&o)?.sum()) }), &x),
            ("mul", Box::new({ let o = other.clone(); move |t| Ok(t.mul(&o)?.sum()) }), &x),
            ("div", Box::new({ let o = positive.clone(); move |t| Ok(t.div(&o)?.sum()) }), &x),
            ("div_denominator", Box::new({ let o = other.clone(); move |t| Ok(o.div(t)?.sum()) }), &positive),
            ("neg", Box::new(|t: &Tensor| Ok(t.neg().sum())), &x),
            ("exp", Box::new(|t: &Tensor| Ok(t.exp().sum())), &x),
            ("log", Box::new(|t: &Tensor| Ok(t.log().sum())), &positive),
            ("tanh", Box::new(|t: &Tensor| Ok(t.tanh().sum())), &x),
            ("sigmoid", Box::new(|t: &Tensor| Ok(t.sigmoid().sum())), &x),
            ("sqrt", Box::new(|t: &Tensor| Ok(t.sqrt().sum())), &positive),
            ("gelu", Box::new(|t: &Tensor| Ok(t.gelu().sum())), &x),
            ("mean", Box::new(|t: &Tensor| Ok(t.mean())), &x),
            ("sum_axis", Box::new(|t: &Tensor| Ok(t.sum_axis(0)?.mul(&t.sum_axis(0)?)?.sum())), &x),
            ("reshape", Box::new(|t: &Tensor| {
                let n = t.numel();
                Ok(t.reshape(&[n])?.mul(&t.reshape(&[n])?)?.sum())
            }), &x),
            ("softmax", Box::new(|t: &Tensor| {
                let last = t.shape().len() - 1;
                let w = Tensor::create(t.shape(), Init::Uniform { lo: -1.0, hi: 1.0, seed: 7 }).unwrap();
                Ok(t.softmax(last)?.mul(&w)?.sum())
            }), &x),
            ("log_softmax", Box::new(|t: &Tensor| {
                let last = t.shape().len() - 1;
                let w = Tensor::create(t.shape(), Init::Uniform { lo: -1.0, hi: 1.0, seed: 8 }).unwrap();
                Ok(t.log_softmax(last)?.mul(&w)?.sum())
            }), &x),
        ];
        for (name, f, input) in cases {
            let err = finite_diff_check(|t| f(t), input, H).unwrap();
            assert!(err <= OP_TOL, "{name} on {shape:?}: fd error {err}");
        }
    }
}

#[test]
fn structural_ops_pass_finite_differences() {
    let x = rand(&[3, 4], 201);
    // matmul, both sides.
    let w = rand(&[4, 5], 202);
    let err = finite_diff_check(|t| Ok(t.matmul(&w)?.sum()), &x, H).unwrap();
    assert!(err <= OP_TOL, "matmul lhs: {err}");
    let err = finite_diff_check(|t| Ok(x.matmul(t)?.sum()), &w, H).unwrap();
    assert!(err <= OP_TOL, "matmul rhs: {err}");

    // Batched matmul with a shared rhs.
    let xb = rand(&[2, 3, 4], 203);
    let err = finite_diff_check(|t| Ok(xb.matmul(t)?.mul(&xb.matmul(t)?)?.sum()), &w, H).unwrap();
    assert!(err <= OP_TOL, "batched matmul shared rhs: {err}");

    // transpose / concat / slice / lookup / expand_trailing.
    let err = finite_diff_check(|t| Ok(t.transpose(0, 1)?.matmul(&x)?.sum()), &x, H).unwrap();
    assert!(err <= OP_TOL, "transpose: {err}");
    let other = rand(&[3, 4], 204);
    let err = finite_diff_check(
        |t| {
            let c = Tensor::concat(&[t.clone(), other.clone()], 1)?;
            Ok(c.mul(&c)?.sum())
        },
        &x,
        H,
    )
    .unwrap();
    assert!(err <= OP_TOL, "concat: {err}");
    let err = finite_diff_check(
        |t| {
            let s = t.slice(1, 1, 3)?;
            Ok(s.mul(&s)?.sum())
        },
        &x,
        H,
    )
    .unwrap();
    assert!(err <= OP_TOL, "slice: {err}");
    let table = rand(&[6, 4], 205);
    let err = finite_diff_check(
        |t| {
            let rows = t.lookup(&[2, 0, 5, 2], &[4])?;
            Ok(rows.mul(&rows)?.sum())
        },
        &table,
        H,
    )
    .unwrap();
    assert!(err <= OP_TOL, "lookup: {err}");
    let small = rand(&[3], 206);
    let err = finite_diff_check(
        |t| {
            let e = t.expand_trailing(&[4])?;
            Ok(e.mul(&e)?.sum())
        },
        &small,
        H,
    )
    .unwrap();
    assert!(err <= OP_TOL, "expand_trailing: {err}");
}

#[test]
fn layer_norm_passes_finite_differences_on_all_inputs() {
    let x = rand(&[3, 6], 211);
    let gain = Tensor::create(&[6], Init::Uniform { lo: 0.5, hi: 1.5, seed: 212 }).unwrap();
    let bias = rand(&[6], 213);
    let err = finite_diff_check(|t| Ok(t.layer_norm(&gain, &bias, 1e-6)?.mul(&x)?.sum()), &x, H)
        .unwrap();
    assert!(err <= OP_TOL, "layer_norm input: {err}");
    let err = finite_diff_check(|t| Ok(x.layer_norm(t, &bias, 1e-6)?.mul(&x)?.sum()), &gain, H)
        .unwrap();
    assert!(err <= OP_TOL, "layer_norm gain: {err}");
    let err = finite_diff_check(|t| Ok(x.layer_norm(&gain, t, 1e-6)?.mul(&x)?.sum()), &bias, H)
        .unwrap();
    assert!(err <= OP_TOL, "layer_norm bias: {err}");
}

#[test]
fn every_builtin_loss_passes_finite_differences() {
    for seed in [1u64, 2, 3] {
        let z_t = rand(&[3, 4], 300 + seed);
        let z_s0 = rand(&[3, 4], 310 + seed);
        let temps = [
            Temperature::Scalar(8.0),
            Temperature::PerSample(vec![1.5, 8.0, 3.0]),
        ];
        for temperature in temps {
            let t = temperature.clone();
            let z_t2 = z_t.clone();
            let err = finite_diff_check(
                |z| {
                    let inputs = SoftLabelInputs::new(z_t2.clone(), z.clone(), t.clone());
                    kd_ce_loss(&inputs).map_err(unwrap_loss)
                },
                &z_s0,
                H,
            )
            .unwrap();
            assert!(err <= OP_TOL, "kd_ce (seed {seed}): {err}");

            let t = temperature.clone();
            let z_t2 = z_t.clone();
            let err = finite_diff_check(
                |z| {
                    let inputs = SoftLabelInputs::new(z_t2.clone(), z.clone(), t.clone());
                    kd_mse_loss(&inputs).map_err(unwrap_loss)
                },
                &z_s0,
                H,
            )
            .unwrap();
            assert!(err <= OP_TOL, "kd_mse (seed {seed}): {err}");
        }

        let gold = vec![Some(1), Some(3), Some(0)];
        let err = finite_diff_check(
            |z| hard_label_loss(z, &gold, None).map_err(unwrap_loss),
            &z_s0,
            H,
        )
        .unwrap();
        assert!(err <= OP_TOL, "hard_label (seed {seed}): {err}");

        // Feature losses with a mask; gradients flow through the student
        // feature and through the projection parameters.
        let (b, l, dt, ds) = (2, 4, 5, 3);
        let f_t = rand(&[b, l, dt], 320 + seed);
        let f_s = rand(&[b, l, ds], 330 + seed);
        let mask =
            Tensor::from_vec(vec![1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0], &[b, l]).unwrap();
        let proj_w = rand(&[ds, dt], 340 + seed);
        let proj_b = rand(&[dt], 350 + seed);

        let make_pair = |student: &Tensor, w: &Tensor, bias: &Tensor| {
            FeaturePair::new(f_t.clone(), student.clone())
                .with_mask(mask.clone())
                .with_projection(Projection {
                    weight: w.clone(),
                    bias: bias.clone(),
                    side: ProjectionSide::Student,
                })
        };

        type PairLoss = fn(&FeaturePair) -> Result<Tensor, LossError>;
        for (name, f) in
            [("hidden_mse", hidden_mse_loss as PairLoss), ("cos", cos_loss), ("nst", nst_loss)]
        {
            let err = finite_diff_check(
                |s| f(&make_pair(s, &proj_w, &proj_b)).map_err(unwrap_loss),
                &f_s,
                H,
            )
            .unwrap();
            assert!(err <= OP_TOL, "{name} wrt student (seed {seed}): {err}");
            let err = finite_diff_check(
                |w| f(&make_pair(&f_s, w, &proj_b)).map_err(unwrap_loss),
                &proj_w,
                H,
            )
            .unwrap();
            assert!(err <= OP_TOL, "{name} wrt projection (seed {seed}): {err}");
        }

        // FSP over two layer pairs.
        let f_tb = rand(&[b, l, dt], 360 + seed);
        let f_sb = rand(&[b, l, ds], 370 + seed);
        let err = finite_diff_check(
            |s| {
                fsp_loss(&make_pair(s, &proj_w, &proj_b), &make_pair(&f_sb, &proj_w, &proj_b))
                    .map_err(unwrap_loss)
            },
            &f_s,
            H,
        )
        .unwrap();
        assert!(err <= OP_TOL, "fsp (seed {seed}): {err}");
        let _ = f_tb;

        // Attention losses on row-stochastic inputs.
        let t_attn = rand(&[b, 2, l, l], 380 + seed).softmax(3).unwrap().detached();
        let s_attn0 = rand(&[b, 3, l, l], 390 + seed);
        for (name, mode) in
            [("attention_mse", AttentionLossMode::Mse), ("attention_ce", AttentionLossMode::Ce)]
        {
            let err = finite_diff_check(
                |raw| {
                    let inputs = AttentionInputs {
                        teacher: t_attn.clone(),
                        student: raw.softmax(3).map_err(LossError::Tensor).map_err(unwrap_loss)?,
                        inputs_mask: Some(mask.clone()),
                    };
                    attention_loss(&inputs, mode).map_err(unwrap_loss)
                },
                &s_attn0,
                H,
            )
            .unwrap();
            assert!(err <= OP_TOL, "{name} (seed {seed}): {err}");
        }
    }
}

/// Analytic and central-difference gradients of one model parameter entry,
/// using the mean hard-label loss as the probe.
fn model_param_fd(model: &Model, ids: &[Vec<usize>], mask: &[Vec<u8>], gold: &[Option<usize>], name: &str, entry: usize) -> (f64, f64) {
    let loss_value = |m: &Model| -> f64 {
        let out = m.forward(ids, mask).unwrap();
        hard_label_loss(&out.logits[0], gold, None).unwrap().item()
    };
    let out = model.forward(ids, mask).unwrap();
    let loss = hard_label_loss(&out.logits[0], gold, None).unwrap();
    loss.backward().unwrap();
    let param = model.parameter(name).unwrap();
    let analytic = param.grad().map(|g| g[entry]).unwrap_or(0.0);
    model.clear_grads();

    let h = 1e-5;
    param.update_data(|d| d[entry] += h);
    let plus = loss_value(model);
    param.update_data(|d| d[entry] -= 2.0 * h);
    let minus = loss_value(model);
    param.update_data(|d| d[entry] += h);
    let central = (plus - minus) / (2.0 * h);
    (analytic, central)
}

fn check_model(spec: &ModelSpec, seed: u64) {
    let model = build_model(spec, seed).unwrap();
    let mut rng = Rng::new(900 + seed);
    // Re-randomize to O(1) scale: the std-0.02 init leaves recurrent-gate
    // gradients below the central-difference noise floor.
    for p in model.parameters() {
        let gain = p.name.ends_with("norm.gain");
        p.tensor.update_data(|data| {
            for v in data.iter_mut() {
                *v = if gain { rng.uniform(0.7, 1.3) } else { rng.uniform(-0.6, 0.6) };
            }
        });
    }
    let batch = 2;
    let len = 5;
    let ids: Vec<Vec<usize>> = (0..batch)
        .map(|_| (0..len).map(|_| rng.below(spec.vocab_size)).collect())
        .collect();
    let mask = vec![vec![1u8, 1, 1, 1, 0], vec![1, 1, 1, 0, 0]];
    let labels = match &spec.head {
        HeadSpec::Classification { num_labels } => {
            (0..batch).map(|_| Some(rng.below(*num_labels))).collect::<Vec<_>>()
        }
        _ => panic!("classification probe only"),
    };

    // A random subset of 20 (parameter, entry) coordinates. Coordinates with
    // near-zero gradients (unused vocab rows, masked positions) are checked
    // for absolute agreement instead: the relative formula is dominated by
    // difference-quotient rounding there.
    let n_params = model.parameters().len();
    for _ in 0..20 {
        let p = &model.parameters()[rng.below(n_params)];
        let entry = rng.below(p.tensor.numel());
        let name = p.name.clone();
        let (analytic, central) = model_param_fd(&model, &ids, &mask, &labels, &name, entry);
        if analytic.abs() < 1e-6 && central.abs() < 1e-6 {
            assert!(
                (analytic - central).abs() <= 1e-7,
                "{} {name}[{entry}]: near-zero gradients disagree: {analytic} vs {central}",
                spec.kind.name()
            );
        } else {
            let err = (analytic - central).abs() / (analytic.abs() + central.abs() + 1e-12);
            assert!(
                err <= MODEL_TOL,
                "{} {name}[{entry}]: fd error {err} ({analytic} vs {central})",
                spec.kind.name()
            );
        }
    }
}

#[test]
fn transformer_forward_backward_passes_finite_differences() {
    let spec = ModelSpec::transformer(2, 8, 16, 2, 13, 8, HeadSpec::Classification { num_labels: 3 });
    check_model(&spec, 5);
}

#[test]
fn bigru_forward_backward_passes_finite_differences() {
    let spec = ModelSpec::bigru(6, 13, 8, HeadSpec::Classification { num_labels: 3 });
    check_model(&spec, 6);
}
