//! Forward passes emitting logits, per-layer hidden states, and attention
//! matrices.
//!
//! Transformer layers are post-norm with residual connections: each sublayer
//! computes `layer_norm(x + sublayer(x))`. Position embeddings are learned.
//! The BiGRU runs one layer per direction and concatenates the outputs.

use super::{HeadSpec, Model, ModelError, ModelKind};
use crate::tensor::Tensor;

/// Everything a forward pass exposes to the distillation losses.
///
/// `hidden` has `num_layers + 1` entries; entry 0 is the embedding output and
/// entry `k` the output of layer `k`. `attention` has one `[batch, heads,
/// positions, positions]` tensor per layer (empty for bigru). `logits` holds
/// one tensor, or two (start, end) for span extraction.
#[derive(Debug)]
pub struct ForwardOutput {
    pub logits: Vec<Tensor>,
    pub hidden: Vec<Tensor>,
    pub attention: Vec<Tensor>,
}

/// Additive score bias excluding masked keys; large enough that masked
/// attention weights underflow to zero after max subtraction.
const MASK_BIAS: f64 = -1e9;

impl Model {
    /// Forward with the primary head (slot 0).
    pub fn forward(
        &self,
        token_ids: &[Vec<usize>],
        inputs_mask: &[Vec<u8>],
    ) -> Result<ForwardOutput, ModelError> {
        self.forward_with_head(0, token_ids, inputs_mask)
    }

    /// Forward through the shared encoder and the head in `head_slot`.
    pub fn forward_with_head(
        &self,
        head_slot: usize,
        token_ids: &[Vec<usize>],
        inputs_mask: &[Vec<u8>],
    ) -> Result<ForwardOutput, ModelError> {
        let (batch, len) = self.check_batch(token_ids, inputs_mask)?;
        let head = self.heads().get(head_slot).ok_or_else(|| {
            ModelError::Config(format!(
                "head slot {head_slot} out of range (model has {})",
                self.heads().len()
            ))
        })?;
        let (features, hidden, attention) = match self.spec().kind {
            ModelKind::TransformerEncoder => self.transformer_encode(token_ids, inputs_mask, batch, len)?,
            ModelKind::Bigru => self.bigru_encode(token_ids, inputs_mask, batch, len)?,
        };
        let logits = self.apply_head(head_slot, head, &features, inputs_mask, batch, len)?;
        Ok(ForwardOutput { logits, hidden, attention })
    }

    fn check_batch(
        &self,
        token_ids: &[Vec<usize>],
        inputs_mask: &[Vec<u8>],
    ) -> Result<(usize, usize), ModelError> {
        if token_ids.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        let len = token_ids[0].len();
        if len == 0 || len > self.spec().max_positions {
            return Err(ModelError::Input(format!(
                "sequence length {len} outside [1, {}]",
                self.spec().max_positions
            )));
        }
        if inputs_mask.len() != token_ids.len() {
            return Err(ModelError::Input(format!(
                "inputs_mask batch {} does not match token batch {}",
                inputs_mask.len(),
                token_ids.len()
            )));
        }
        for (b, (row, mask)) in token_ids.iter().zip(inputs_mask).enumerate() {
            if row.len() != len || mask.len() != len {
                return Err(ModelError::Input(format!(
                    "ragged batch: example {b} has length {} (expected {len})",
                    row.len()
                )));
            }
            for (l, (&id, &m)) in row.iter().zip(mask).enumerate() {
                if id >= self.spec().vocab_size {
                    return Err(ModelError::Input(format!(
                        "token id {id} at (example {b}, position {l}) is outside vocab of {}",
                        self.spec().vocab_size
                    )));
                }
                if m > 1 {
                    return Err(ModelError::Input(format!(
                        "inputs_mask must be 0/1, got {m} at (example {b}, position {l})"
                    )));
                }
            }
        }
        Ok((token_ids.len(), len))
    }

    fn param(&self, name: &str) -> &Tensor {
        self.parameter(name).unwrap_or_else(|| panic!("parameter {name} exists by construction"))
    }

    fn transformer_encode(
        &self,
        token_ids: &[Vec<usize>],
        inputs_mask: &[Vec<u8>],
        batch: usize,
        len: usize,
    ) -> Result<(Tensor, Vec<Tensor>, Vec<Tensor>), ModelError> {
        let spec = self.spec();
        let d = spec.hidden_size;
        let heads = spec.num_heads.expect("validated");
        let dh = d / heads;

        let flat_ids: Vec<usize> = token_ids.iter().flatten().copied().collect();
        let tok = self.param("embeddings.token").lookup(&flat_ids, &[batch, len])?;
        let pos_ids: Vec<usize> = (0..len).collect();
        let pos = self.param("embeddings.position").lookup(&pos_ids, &[len])?;
        // All inputs are segment 0.
        let seg = self.param("embeddings.segment").slice(0, 0, 1)?.reshape(&[d])?;
        let embedded = tok.add(&pos)?.add(&seg)?;
        let x = embedded.layer_norm(
            self.param("embeddings.norm.gain"),
            self.param("embeddings.norm.bias"),
            1e-12,
        )?;

        // Masked keys get MASK_BIAS added to every attention score.
        let mut bias = vec![0.0; batch * heads * len * len];
        for b in 0..batch {
            for k in 0..len {
                if inputs_mask[b][k] == 0 {
                    for h in 0..heads {
                        for q in 0..len {
                            bias[((b * heads + h) * len + q) * len + k] = MASK_BIAS;
                        }
                    }
                }
            }
        }
        let mask_bias = Tensor::from_vec(bias, &[batch, heads, len, len])?;

        let mut hidden = vec![x.clone()];
        let mut attentions = Vec::with_capacity(spec.num_layers);
        let mut x = x;
        for layer in 0..spec.num_layers {
            let p = |s: &str| format!("layers.{layer}.{s}");
            let project = |name: &str, input: &Tensor| -> Result<Tensor, ModelError> {
                let w = self.param(&p(&format!("attention.{name}.weight")));
                let b = self.param(&p(&format!("attention.{name}.bias")));
                let y = input.matmul(w)?.add(b)?;
                Ok(y.reshape(&[batch, len, heads, dh])?.transpose(1, 2)?)
            };
            let q = project("query", &x)?;
            let k = project("key", &x)?;
            let v = project("value", &x)?;
            let scores = q
                .matmul(&k.transpose(2, 3)?)?
                .mul_scalar(1.0 / (dh as f64).sqrt())
                .add(&mask_bias)?;
            let attn = scores.softmax(3)?;
            attentions.push(attn.clone());
            let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape(&[batch, len, d])?;
            let attn_out = ctx
                .matmul(self.param(&p("attention.output.weight")))?
                .add(self.param(&p("attention.output.bias")))?;
            x = x.add(&attn_out)?.layer_norm(
                self.param(&p("attention.norm.gain")),
                self.param(&p("attention.norm.bias")),
                1e-12,
            )?;
            let expanded = x
                .matmul(self.param(&p("ffn.expand.weight")))?
                .add(self.param(&p("ffn.expand.bias")))?
                .gelu();
            let ffn = expanded
                .matmul(self.param(&p("ffn.contract.weight")))?
                .add(self.param(&p("ffn.contract.bias")))?;
            x = x.add(&ffn)?.layer_norm(
                self.param(&p("ffn.norm.gain")),
                self.param(&p("ffn.norm.bias")),
                1e-12,
            )?;
            hidden.push(x.clone());
        }
        Ok((x, hidden, attentions))
    }

    fn bigru_encode(
        &self,
        token_ids: &[Vec<usize>],
        inputs_mask: &[Vec<u8>],
        batch: usize,
        len: usize,
    ) -> Result<(Tensor, Vec<Tensor>, Vec<Tensor>), ModelError> {
        let d = self.spec().hidden_size;
        let flat_ids: Vec<usize> = token_ids.iter().flatten().copied().collect();
        let embedded = self.param("embeddings.token").lookup(&flat_ids, &[batch, len])?;

        let run_direction = |dir: &str, order: Vec<usize>| -> Result<Vec<Tensor>, ModelError> {
            let w_in = self.param(&format!("gru.{dir}.input.weight"));
            let w_rec = self.param(&format!("gru.{dir}.recurrent.weight"));
            let bias = self.param(&format!("gru.{dir}.bias"));
            let mut h = Tensor::zeros(&[batch, d])?;
            let mut outputs: Vec<Option<Tensor>> = vec![None; len];
            for &t in &order {
                let x_t = embedded.slice(1, t, t + 1)?.reshape(&[batch, d])?;
                let gi = x_t.matmul(w_in)?.add(bias)?;
                let gh = h.matmul(w_rec)?;
                let z = gi.slice(1, 0, d)?.add(&gh.slice(1, 0, d)?)?.sigmoid();
                let r = gi.slice(1, d, 2 * d)?.add(&gh.slice(1, d, 2 * d)?)?.sigmoid();
                let n = gi.slice(1, 2 * d, 3 * d)?.add(&r.mul(&gh.slice(1, 2 * d, 3 * d)?)?)?.tanh();
                let one_minus_z = z.neg().add_scalar(1.0);
                let candidate = one_minus_z.mul(&n)?.add(&z.mul(&h)?)?;
                // Masked positions carry the previous state through unchanged.
                let m: Vec<f64> = (0..batch)
                    .flat_map(|b| std::iter::repeat_n(inputs_mask[b][t] as f64, d))
                    .collect();
                let m = Tensor::from_vec(m, &[batch, d])?;
                let keep = m.neg().add_scalar(1.0);
                h = m.mul(&candidate)?.add(&keep.mul(&h)?)?;
                outputs[t] = Some(h.reshape(&[batch, 1, d])?);
            }
            Ok(outputs.into_iter().map(|o| o.expect("all steps ran")).collect())
        };

        let fwd = run_direction("forward", (0..len).collect())?;
        let bwd = run_direction("backward", (0..len).rev().collect())?;
        let fwd_seq = Tensor::concat(&fwd, 1)?;
        let bwd_seq = Tensor::concat(&bwd, 1)?;
        let out = Tensor::concat(&[fwd_seq, bwd_seq], 2)?;
        Ok((out.clone(), vec![embedded, out], Vec::new()))
    }

    fn apply_head(
        &self,
        head_slot: usize,
        head: &HeadSpec,
        features: &Tensor,
        inputs_mask: &[Vec<u8>],
        batch: usize,
        len: usize,
    ) -> Result<Vec<Tensor>, ModelError> {
        let w = self.param(&format!("heads.{head_slot}.weight"));
        let b = self.param(&format!("heads.{head_slot}.bias"));
        let width = w.shape()[0];
        match head {
            HeadSpec::Classification { .. } => {
                let pooled = match self.spec().kind {
                    // First position acts as the aggregate representation.
                    ModelKind::TransformerEncoder => {
                        features.slice(1, 0, 1)?.reshape(&[batch, width])?
                    }
                    // Mean over unmasked positions.
                    ModelKind::Bigru => {
                        let mask: Vec<f64> = inputs_mask
                            .iter()
                            .flat_map(|row| row.iter().map(|&m| m as f64))
                            .collect();
                        let mask = Tensor::from_vec(mask, &[batch, len])?;
                        let masked = features.mul(&mask.expand_trailing(&[width])?)?;
                        let summed = masked.sum_axis(1)?;
                        let counts: Vec<f64> = inputs_mask
                            .iter()
                            .map(|row| row.iter().map(|&m| m as f64).sum::<f64>().max(1.0))
                            .collect();
                        let recip: Vec<f64> = counts.iter().map(|c| 1.0 / c).collect();
                        summed.mul(&Tensor::from_vec(recip, &[batch])?.expand_trailing(&[width])?)?
                    }
                };
                Ok(vec![pooled.matmul(w)?.add(b)?])
            }
            HeadSpec::Tagging { .. } => Ok(vec![features.matmul(w)?.add(b)?]),
            HeadSpec::SpanExtraction => {
                let raw = features.matmul(w)?.add(b)?;
                let bias: Vec<f64> = inputs_mask
                    .iter()
                    .flat_map(|row| row.iter().map(|&m| if m == 1 { 0.0 } else { MASK_BIAS }))
                    .collect();
                let position_bias = Tensor::from_vec(bias, &[batch, len])?;
                let start = raw.slice(2, 0, 1)?.reshape(&[batch, len])?.add(&position_bias)?;
                let end = raw.slice(2, 1, 2)?.reshape(&[batch, len])?.add(&position_bias)?;
                Ok(vec![start, end])
            }
        }
    }
}
