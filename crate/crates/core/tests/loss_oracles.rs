//! Loss/oracle equivalence on random inputs, plus the loss identities:
//! zero at student == teacher, probability-shift permutation properties,
//! NST neuron-permutation invariance, and the masking no-op property.

use distilkit::losses::{
    attention_loss, cos_loss, fsp_loss, hidden_mse_loss, kd_ce_loss, kd_mse_loss, nst_loss,
    probability_shift, AttentionInputs, AttentionLossMode, FeaturePair, Projection,
    ProjectionSide, SoftLabelInputs, Temperature,
};
use distilkit::oracles;
use distilkit::rng::Rng;
use distilkit::tensor::{Init, Tensor};

fn rand(shape: &[usize], rng: &mut Rng) -> Tensor {
    let seed = rng.next_u64();
    Tensor::create(shape, Init::Uniform { lo: -2.0, hi: 2.0, seed }).unwrap()
}

fn rand_mask(rng: &mut Rng, batch: usize, len: usize) -> Tensor {
    // At least one unmasked position per sample.
    let mut data = vec![0.0; batch * len];
    for b in 0..batch {
        let keep = 1 + rng.below(len);
        for l in 0..keep {
            data[b * len + l] = 1.0;
        }
    }
    Tensor::from_vec(data, &[batch, len]).unwrap()
}

#[test]
fn kd_ce_matches_oracle_on_random_inputs() {
    let mut rng = Rng::new(1001);
    for _ in 0..20 {
        let batch = 1 + rng.below(4);
        let classes = 2 + rng.below(5);
        let z_t = rand(&[batch, classes], &mut rng);
        let z_s = rand(&[batch, classes], &mut rng);
        let temps: Vec<f64> = (0..batch).map(|_| rng.uniform(0.5, 10.0)).collect();
        let inputs = SoftLabelInputs::new(
            z_t.clone(),
            z_s.clone(),
            Temperature::PerSample(temps.clone()),
        );
        let loss = kd_ce_loss(&inputs).unwrap().item();
        let expected = oracles::kd_ce(&z_t.to_vec(), &z_s.to_vec(), batch, classes, &temps, None);
        assert!((loss - expected).abs() <= 1e-10, "{loss} vs {expected}");
    }
}

#[test]
fn fsp_matches_oracle_on_random_inputs() {
    let mut rng = Rng::new(1002);
    for _ in 0..20 {
        let batch = 1 + rng.below(3);
        let len = 2 + rng.below(4);
        let d_t = 2 + rng.below(5);
        let d_s = 2 + rng.below(5);
        let t_a = rand(&[batch, len, d_t], &mut rng);
        let t_b = rand(&[batch, len, d_t], &mut rng);
        let s_a = rand(&[batch, len, d_s], &mut rng);
        let s_b = rand(&[batch, len, d_s], &mut rng);
        let w = rand(&[d_s, d_t], &mut rng);
        let b = rand(&[d_t], &mut rng);
        let mask = rand_mask(&mut rng, batch, len);
        let proj = Projection { weight: w.clone(), bias: b.clone(), side: ProjectionSide::Student };
        let pair_a = FeaturePair::new(t_a.clone(), s_a.clone())
            .with_mask(mask.clone())
            .with_projection(proj.clone());
        let pair_b = FeaturePair::new(t_b.clone(), s_b.clone())
            .with_mask(mask.clone())
            .with_projection(proj);
        let loss = fsp_loss(&pair_a, &pair_b).unwrap().item();

        let s_a_p = oracles::project(&s_a.to_vec(), batch, len, d_s, &w.to_vec(), &b.to_vec(), d_t);
        let s_b_p = oracles::project(&s_b.to_vec(), batch, len, d_s, &w.to_vec(), &b.to_vec(), d_t);
        let expected = oracles::fsp(
            &t_a.to_vec(),
            &t_b.to_vec(),
            &s_a_p,
            &s_b_p,
            batch,
            len,
            d_t,
            d_t,
            Some(&mask.to_vec()),
        );
        assert!((loss - expected).abs() <= 1e-10, "{loss} vs {expected}");
    }
}

#[test]
fn nst_matches_oracle_on_random_inputs() {
    let mut rng = Rng::new(1003);
    for _ in 0..20 {
        let batch = 1 + rng.below(3);
        let len = 2 + rng.below(4);
        let d_t = 2 + rng.below(5);
        let d_s = 2 + rng.below(5);
        let t = rand(&[batch, len, d_t], &mut rng);
        let s = rand(&[batch, len, d_s], &mut rng);
        let mask = rand_mask(&mut rng, batch, len);
        let pair = FeaturePair::new(t.clone(), s.clone()).with_mask(mask.clone());
        let loss = nst_loss(&pair).unwrap().item();
        let expected =
            oracles::nst(&t.to_vec(), &s.to_vec(), batch, len, d_t, d_s, Some(&mask.to_vec()));
        assert!((loss - expected).abs() <= 1e-10, "{loss} vs {expected}");
    }
}

#[test]
fn attention_matches_oracle_on_random_inputs() {
    let mut rng = Rng::new(1004);
    for _ in 0..20 {
        let batch = 1 + rng.below(3);
        let len = 2 + rng.below(4);
        let h_t = 1 + rng.below(4);
        let h_s = 1 + rng.below(4);
        let t = rand(&[batch, h_t, len, len], &mut rng).softmax(3).unwrap();
        let s = rand(&[batch, h_s, len, len], &mut rng).softmax(3).unwrap();
        let mask = rand_mask(&mut rng, batch, len);
        for (mode, ce) in [(AttentionLossMode::Mse, false), (AttentionLossMode::Ce, true)] {
            let inputs = AttentionInputs {
                teacher: t.clone(),
                student: s.clone(),
                inputs_mask: Some(mask.clone()),
            };
            let loss = attention_loss(&inputs, mode).unwrap().item();
            let expected = oracles::attention(
                &t.to_vec(),
                &s.to_vec(),
                batch,
                h_t,
                h_s,
                len,
                Some(&mask.to_vec()),
                ce,
            );
            assert!((loss - expected).abs() <= 1e-10, "{mode:?}: {loss} vs {expected}");
        }
    }
}

#[test]
fn every_loss_is_zero_when_student_equals_teacher() {
    let mut rng = Rng::new(1005);
    for _ in 0..5 {
        let z = rand(&[3, 4], &mut rng);
        let inputs = SoftLabelInputs::new(z.clone(), z.clone(), Temperature::Scalar(8.0));
        // kd_ce at equality equals the softened-target entropy, which is its
        // minimum over the student side; kd_mse is exactly zero.
        assert!(kd_mse_loss(&inputs).unwrap().item() <= 1e-10);

        let f = rand(&[2, 3, 4], &mut rng);
        let mask = rand_mask(&mut rng, 2, 3);
        let pair = FeaturePair::new(f.clone(), f.clone()).with_mask(mask.clone());
        assert!(hidden_mse_loss(&pair).unwrap().item() <= 1e-10);
        assert!(cos_loss(&pair).unwrap().item() <= 1e-10);
        assert!(nst_loss(&pair).unwrap().item() <= 1e-10);

        let g = rand(&[2, 3, 4], &mut rng);
        let pair_a = FeaturePair::new(f.clone(), f.clone()).with_mask(mask.clone());
        let pair_b = FeaturePair::new(g.clone(), g.clone()).with_mask(mask.clone());
        assert!(fsp_loss(&pair_a, &pair_b).unwrap().item() <= 1e-10);

        let attn = rand(&[2, 2, 3, 3], &mut rng).softmax(3).unwrap();
        for mode in [AttentionLossMode::Mse, AttentionLossMode::Ce] {
            let inputs = AttentionInputs {
                teacher: attn.clone(),
                student: attn.clone(),
                inputs_mask: Some(mask.clone()),
            };
            assert!(attention_loss(&inputs, mode).unwrap().item() <= 1e-10);
        }
    }
}

#[test]
fn probability_shift_is_a_permutation_with_gold_argmax() {
    let mut rng = Rng::new(1006);
    for _ in 0..1000 {
        let classes = 2 + rng.below(6);
        let logits: Vec<f64> = (0..classes).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let probs = oracles::softmax_row(&logits);
        let gold = rng.below(classes);
        let t = Tensor::from_vec(probs.clone(), &[1, classes]).unwrap();
        let shifted = probability_shift(&t, &[Some(gold)]).unwrap().to_vec();

        // Permutation: same multiset of values.
        let mut a = probs.clone();
        let mut b = shifted.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);

        // Argmax at the gold label.
        let argmax = shifted
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| x.total_cmp(y))
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(shifted[argmax], shifted[gold]);
    }
}

#[test]
fn nst_is_invariant_under_independent_neuron_permutations() {
    let mut rng = Rng::new(1007);
    for _ in 0..10 {
        let (batch, len, d_t, d_s) = (2, 4, 5, 3);
        let t = rand(&[batch, len, d_t], &mut rng);
        let s = rand(&[batch, len, d_s], &mut rng);
        let mask = rand_mask(&mut rng, batch, len);
        let base = nst_loss(&FeaturePair::new(t.clone(), s.clone()).with_mask(mask.clone()))
            .unwrap()
            .item();

        let permute = |f: &Tensor, d: usize, rng: &mut Rng| {
            let mut perm: Vec<usize> = (0..d).collect();
            rng.shuffle(&mut perm);
            let data = f.to_vec();
            let rows = f.numel() / d;
            let mut out = vec![0.0; data.len()];
            for r in 0..rows {
                for (j, &p) in perm.iter().enumerate() {
                    out[r * d + j] = data[r * d + p];
                }
            }
            Tensor::from_vec(out, f.shape()).unwrap()
        };
        let t_p = permute(&t, d_t, &mut rng);
        let s_p = permute(&s, d_s, &mut rng);
        let permuted =
            nst_loss(&FeaturePair::new(t_p, s_p).with_mask(mask.clone())).unwrap().item();
        assert!((base - permuted).abs() <= 1e-12, "{base} vs {permuted}");
    }
}

#[test]
fn cos_loss_is_invariant_under_positive_per_position_scaling() {
    let mut rng = Rng::new(1008);
    for _ in 0..10 {
        let (batch, len, d) = (2, 3, 4);
        let t = rand(&[batch, len, d], &mut rng);
        let s = rand(&[batch, len, d], &mut rng);
        let mask = rand_mask(&mut rng, batch, len);
        let base =
            cos_loss(&FeaturePair::new(t.clone(), s.clone()).with_mask(mask.clone())).unwrap().item();

        // Scale each position of the student by an independent positive factor.
        let scales: Vec<f64> = (0..batch * len).map(|_| rng.uniform(0.1, 10.0)).collect();
        let mut scaled = s.to_vec();
        for r in 0..batch * len {
            for j in 0..d {
                scaled[r * d + j] *= scales[r];
            }
        }
        let s2 = Tensor::from_vec(scaled, &[batch, len, d]).unwrap();
        let scaled_loss =
            cos_loss(&FeaturePair::new(t.clone(), s2).with_mask(mask.clone())).unwrap().item();
        assert!((base - scaled_loss).abs() <= 1e-10, "{base} vs {scaled_loss}");
    }
}

/// Appending masked positions with arbitrary content never changes a loss.
#[test]
fn masking_is_a_no_op_for_every_loss() {
    let mut rng = Rng::new(1009);
    let (batch, len, d) = (2, 3, 4);
    let extra = 2;

    let extend_feature = |f: &Tensor, filler: f64| {
        let data = f.to_vec();
        let mut out = Vec::new();
        for b in 0..batch {
            out.extend_from_slice(&data[b * len * d..(b + 1) * len * d]);
            out.extend(std::iter::repeat_n(filler, extra * d));
        }
        Tensor::from_vec(out, &[batch, len + extra, d]).unwrap()
    };
    let extend_mask = |m: &Tensor| {
        let data = m.to_vec();
        let mut out = Vec::new();
        for b in 0..batch {
            out.extend_from_slice(&data[b * len..(b + 1) * len]);
            out.extend([0.0, 0.0]);
        }
        Tensor::from_vec(out, &[batch, len + extra]).unwrap()
    };

    for _ in 0..10 {
        let mask = rand_mask(&mut rng, batch, len);
        let ext_mask = extend_mask(&mask);

        // Feature losses.
        let t = rand(&[batch, len, d], &mut rng);
        let s = rand(&[batch, len, d], &mut rng);
        let t_ext = extend_feature(&t, rng.uniform(-50.0, 50.0));
        let s_ext = extend_feature(&s, rng.uniform(-50.0, 50.0));
        type PairLoss = fn(&FeaturePair) -> Result<Tensor, distilkit::losses::LossError>;
        for (name, f) in [
            ("hidden_mse", hidden_mse_loss as PairLoss),
            ("cos", cos_loss),
            ("nst", nst_loss),
        ] {
            let base = f(&FeaturePair::new(t.clone(), s.clone()).with_mask(mask.clone()))
                .unwrap()
                .item();
            let ext = f(&FeaturePair::new(t_ext.clone(), s_ext.clone()).with_mask(ext_mask.clone()))
                .unwrap()
                .item();
            assert!((base - ext).abs() <= 1e-10, "{name}: {base} vs {ext}");
        }

        // FSP.
        let tb = rand(&[batch, len, d], &mut rng);
        let sb = rand(&[batch, len, d], &mut rng);
        let base = fsp_loss(
            &FeaturePair::new(t.clone(), s.clone()).with_mask(mask.clone()),
            &FeaturePair::new(tb.clone(), sb.clone()).with_mask(mask.clone()),
        )
        .unwrap()
        .item();
        let ext = fsp_loss(
            &FeaturePair::new(t_ext.clone(), s_ext.clone()).with_mask(ext_mask.clone()),
            &FeaturePair::new(
                extend_feature(&tb, rng.uniform(-50.0, 50.0)),
                extend_feature(&sb, rng.uniform(-50.0, 50.0)),
            )
            .with_mask(ext_mask.clone()),
        )
        .unwrap()
        .item();
        assert!((base - ext).abs() <= 1e-10, "fsp: {base} vs {ext}");

        // KD losses over position-shaped logits.
        let z_t = rand(&[batch, len, 3], &mut rng);
        let z_s = rand(&[batch, len, 3], &mut rng);
        let extend_logits = |z: &Tensor, filler: f64| {
            let data = z.to_vec();
            let mut out = Vec::new();
            for b in 0..batch {
                out.extend_from_slice(&data[b * len * 3..(b + 1) * len * 3]);
                out.extend(std::iter::repeat_n(filler, extra * 3));
            }
            Tensor::from_vec(out, &[batch, len + extra, 3]).unwrap()
        };
        for kd in [kd_ce_loss, kd_mse_loss] {
            let mut inputs =
                SoftLabelInputs::new(z_t.clone(), z_s.clone(), Temperature::Scalar(8.0));
            inputs.logits_mask = Some(mask.clone());
            let base = kd(&inputs).unwrap().item();
            let mut ext_inputs = SoftLabelInputs::new(
                extend_logits(&z_t, rng.uniform(-20.0, 20.0)),
                extend_logits(&z_s, rng.uniform(-20.0, 20.0)),
                Temperature::Scalar(8.0),
            );
            ext_inputs.logits_mask = Some(ext_mask.clone());
            let ext = kd(&ext_inputs).unwrap().item();
            assert!((base - ext).abs() <= 1e-10, "kd: {base} vs {ext}");
        }

        // Attention losses.
        let t_attn = rand(&[batch, 2, len, len], &mut rng).softmax(3).unwrap();
        let s_attn = rand(&[batch, 2, len, len], &mut rng).softmax(3).unwrap();
        let extend_attn = |a: &Tensor, filler: f64| {
            let data = a.to_vec();
            let lp = len + extra;
            let mut out = vec![filler; batch * 2 * lp * lp];
            for b in 0..batch {
                for h in 0..2 {
                    for q in 0..len {
                        for k in 0..len {
                            out[((b * 2 + h) * lp + q) * lp + k] =
                                data[((b * 2 + h) * len + q) * len + k];
                        }
                    }
                }
            }
            Tensor::from_vec(out, &[batch, 2, lp, lp]).unwrap()
        };
        for mode in [AttentionLossMode::Mse, AttentionLossMode::Ce] {
            let base = attention_loss(
                &AttentionInputs {
                    teacher: t_attn.clone(),
                    student: s_attn.clone(),
                    inputs_mask: Some(mask.clone()),
                },
                mode,
            )
            .unwrap()
            .item();
            let ext = attention_loss(
                &AttentionInputs {
                    teacher: extend_attn(&t_attn, 0.4),
                    student: extend_attn(&s_attn, 0.9),
                    inputs_mask: Some(ext_mask.clone()),
                },
                mode,
            )
            .unwrap()
            .item();
            assert!((base - ext).abs() <= 1e-10, "{mode:?}: {base} vs {ext}");
        }
    }
}
