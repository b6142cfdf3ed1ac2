//! Architecture descriptions and closed-form parameter counting.

use serde_json::{json, Value};

use super::ModelError;
use crate::json::{JsonError, ObjectReader};

/// Task head attached to an encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadSpec {
    Classification { num_labels: usize },
    Tagging { num_labels: usize },
    SpanExtraction,
}

impl HeadSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            HeadSpec::Classification { .. } => "classification",
            HeadSpec::Tagging { .. } => "tagging",
            HeadSpec::SpanExtraction => "span_extraction",
        }
    }

    /// Output width of the head's linear layer.
    pub fn output_size(&self) -> usize {
        match self {
            HeadSpec::Classification { num_labels } | HeadSpec::Tagging { num_labels } => {
                *num_labels
            }
            HeadSpec::SpanExtraction => 2,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            HeadSpec::Classification { num_labels } => {
                json!({"kind": "classification", "num_labels": num_labels})
            }
            HeadSpec::Tagging { num_labels } => {
                json!({"kind": "tagging", "num_labels": num_labels})
            }
            HeadSpec::SpanExtraction => json!({"kind": "span_extraction"}),
        }
    }

    pub fn from_json(value: &Value, context: &str) -> Result<HeadSpec, JsonError> {
        let reader = ObjectReader::new(value, context, &["kind", "num_labels"])?;
        let kind = reader.required_string("kind")?;
        match kind.as_str() {
            "classification" | "tagging" => {
                let num_labels = reader.required_usize("num_labels")?;
                if num_labels < 2 {
                    return Err(reader.invalid("num_labels", "must be >= 2"));
                }
                Ok(if kind == "classification" {
                    HeadSpec::Classification { num_labels }
                } else {
                    HeadSpec::Tagging { num_labels }
                })
            }
            "span_extraction" => {
                if reader.has("num_labels") {
                    return Err(reader.invalid("num_labels", "not applicable to span_extraction"));
                }
                Ok(HeadSpec::SpanExtraction)
            }
            other => Err(reader.invalid(
                "kind",
                format!("unknown head kind \"{other}\" (classification, tagging, span_extraction)"),
            )),
        }
    }
}

/// Encoder family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    TransformerEncoder,
    Bigru,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::TransformerEncoder => "transformer_encoder",
            ModelKind::Bigru => "bigru",
        }
    }
}

/// Parameter totals split into embedding and encoder parts. Task heads
/// ("output layers") are never counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub embedding: usize,
    pub non_embedding: usize,
}

/// Architecture description: enough to instantiate a model or count its
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub num_layers: usize,
    pub hidden_size: usize,
    /// Transformer only.
    pub feed_forward_size: Option<usize>,
    /// Transformer only; must divide `hidden_size`.
    pub num_heads: Option<usize>,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub head: HeadSpec,
}

impl ModelSpec {
    pub fn transformer(
        num_layers: usize,
        hidden_size: usize,
        feed_forward_size: usize,
        num_heads: usize,
        vocab_size: usize,
        max_positions: usize,
        head: HeadSpec,
    ) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::TransformerEncoder,
            num_layers,
            hidden_size,
            feed_forward_size: Some(feed_forward_size),
            num_heads: Some(num_heads),
            vocab_size,
            max_positions,
            head,
        }
    }

    pub fn bigru(
        hidden_size: usize,
        vocab_size: usize,
        max_positions: usize,
        head: HeadSpec,
    ) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Bigru,
            num_layers: 1,
            hidden_size,
            feed_forward_size: None,
            num_heads: None,
            vocab_size,
            max_positions,
            head,
        }
    }

    // Full-size reference architectures. The base vocabulary of 30522 tokens
    // with 512 positions and 2 segment types is fixed here; heads are
    // placeholders since they are excluded from counting.
    const BASE_VOCAB: usize = 30522;
    const BASE_POSITIONS: usize = 512;

    pub fn bert_base() -> ModelSpec {
        Self::transformer(12, 768, 3072, 12, Self::BASE_VOCAB, Self::BASE_POSITIONS, HeadSpec::Classification { num_labels: 2 })
    }

    pub fn t6() -> ModelSpec {
        Self::transformer(6, 768, 3072, 12, Self::BASE_VOCAB, Self::BASE_POSITIONS, HeadSpec::Classification { num_labels: 2 })
    }

    pub fn t3() -> ModelSpec {
        Self::transformer(3, 768, 3072, 12, Self::BASE_VOCAB, Self::BASE_POSITIONS, HeadSpec::Classification { num_labels: 2 })
    }

    pub fn t3_small() -> ModelSpec {
        Self::transformer(3, 384, 1536, 12, Self::BASE_VOCAB, Self::BASE_POSITIONS, HeadSpec::Classification { num_labels: 2 })
    }

    pub fn t4_tiny() -> ModelSpec {
        Self::transformer(4, 312, 1200, 12, Self::BASE_VOCAB, Self::BASE_POSITIONS, HeadSpec::Classification { num_labels: 2 })
    }

    pub fn bigru_base() -> ModelSpec {
        Self::bigru(768, Self::BASE_VOCAB, Self::BASE_POSITIONS, HeadSpec::Classification { num_labels: 2 })
    }

    // Desk-scale specs for actual training runs; the full-size specs above
    // exist for parameter counting only.

    /// 4-layer, 32-hidden trainable-in-seconds teacher.
    pub fn nano_teacher(head: HeadSpec) -> ModelSpec {
        Self::transformer(4, 32, 64, 4, 64, 16, head)
    }

    /// 1-layer, 16-hidden student for [`Self::nano_teacher`].
    pub fn nano_student(head: HeadSpec) -> ModelSpec {
        Self::transformer(1, 16, 32, 2, 64, 16, head)
    }

    /// Structural validity. `for_training` additionally requires at least one
    /// layer; zero layers are allowed for counting only.
    pub fn validate(&self, for_training: bool) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.hidden_size < 1 {
            return fail("hidden_size must be >= 1".into());
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be >= 2, got {}", self.vocab_size));
        }
        if self.max_positions < 1 {
            return fail("max_positions must be >= 1".into());
        }
        match self.kind {
            ModelKind::TransformerEncoder => {
                let ff = match self.feed_forward_size {
                    Some(ff) if ff >= 1 => ff,
                    _ => return fail("feed_forward_size must be >= 1 for transformer_encoder".into()),
                };
                let heads = match self.num_heads {
                    Some(h) if h >= 1 => h,
                    _ => return fail("num_heads must be >= 1 for transformer_encoder".into()),
                };
                let _ = ff;
                if !self.hidden_size.is_multiple_of(heads) {
                    return fail(format!(
                        "num_heads ({heads}) must divide hidden_size ({})",
                        self.hidden_size
                    ));
                }
            }
            ModelKind::Bigru => {
                if self.feed_forward_size.is_some() {
                    return fail("feed_forward_size is not applicable to bigru".into());
                }
                if self.num_heads.is_some() {
                    return fail("num_heads is not applicable to bigru".into());
                }
                if self.num_layers > 1 {
                    return fail("bigru supports num_layers <= 1 (single bidirectional layer)".into());
                }
            }
        }
        match &self.head {
            HeadSpec::Classification { num_labels } | HeadSpec::Tagging { num_labels } => {
                if *num_labels < 2 {
                    return fail("head num_labels must be >= 2".into());
                }
            }
            HeadSpec::SpanExtraction => {}
        }
        if for_training && self.num_layers == 0 {
            return fail("num_layers = 0 is allowed for parameter counting only, not training".into());
        }
        Ok(())
    }

    /// Closed-form parameter count of embeddings plus encoder, excluding the
    /// task head.
    ///
    /// Transformer embedding block: `(V + P + 2) * d` table entries (token,
    /// position, two segment types) plus `2d` for the embedding layer norm.
    /// Each layer: `4(d^2 + d)` attention projections, `2(d * ff) + ff + d`
    /// feed-forward, and `4d` for the two layer norms.
    ///
    /// BiGRU: token table `V * d` plus, per direction, gate matrices
    /// `3(d*h + h^2)` and `3h` biases with `h = d`.
    pub fn count_parameters(&self) -> Result<ParamCount, ModelError> {
        self.validate(false)?;
        // u128 arithmetic so hostile spec files cannot overflow the count.
        let d = self.hidden_size as u128;
        let v = self.vocab_size as u128;
        let p = self.max_positions as u128;
        let layers = self.num_layers as u128;
        let (embedding, non_embedding) = match self.kind {
            ModelKind::TransformerEncoder => {
                let ff = self.feed_forward_size.expect("validated") as u128;
                let embedding = (v + p + 2) * d + 2 * d;
                let per_layer = 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d) + 2 * d;
                (embedding, layers * per_layer)
            }
            ModelKind::Bigru => {
                let per_direction = 3 * (d * d + d * d + d);
                (v * d, layers * 2 * per_direction)
            }
        };
        let total = embedding + non_embedding;
        if total > usize::MAX as u128 {
            return Err(ModelError::Config(format!(
                "parameter count {total} exceeds the addressable size"
            )));
        }
        Ok(ParamCount {
            total: total as usize,
            embedding: embedding as usize,
            non_embedding: non_embedding as usize,
        })
    }

    pub fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("kind".into(), json!(self.kind.name()));
        obj.insert("num_layers".into(), json!(self.num_layers));
        obj.insert("hidden_size".into(), json!(self.hidden_size));
        if let Some(ff) = self.feed_forward_size {
            obj.insert("feed_forward_size".into(), json!(ff));
        }
        if let Some(h) = self.num_heads {
            obj.insert("num_heads".into(), json!(h));
        }
        obj.insert("vocab_size".into(), json!(self.vocab_size));
        obj.insert("max_positions".into(), json!(self.max_positions));
        obj.insert("head".into(), self.head.to_json());
        Value::Object(obj)
    }

    pub fn to_json_string(&self) -> String {
        crate::json::to_sorted_string(&self.to_json())
    }

    pub fn from_json(value: &Value, context: &str) -> Result<ModelSpec, JsonError> {
        let reader = ObjectReader::new(
            value,
            context,
            &[
                "kind",
                "num_layers",
                "hidden_size",
                "feed_forward_size",
                "num_heads",
                "vocab_size",
                "max_positions",
                "head",
            ],
        )?;
        let kind = match reader.required_string("kind")?.as_str() {
            "transformer_encoder" => ModelKind::TransformerEncoder,
            "bigru" => ModelKind::Bigru,
            other => {
                return Err(reader.invalid(
                    "kind",
                    format!("unknown model kind \"{other}\" (transformer_encoder, bigru)"),
                ))
            }
        };
        let spec = ModelSpec {
            kind,
            num_layers: reader.required_usize("num_layers")?,
            hidden_size: reader.required_usize("hidden_size")?,
            feed_forward_size: match reader.get("feed_forward_size") {
                Some(v) => Some(reader.as_usize("feed_forward_size", v)?),
                None => None,
            },
            num_heads: match reader.get("num_heads") {
                Some(v) => Some(reader.as_usize("num_heads", v)?),
                None => None,
            },
            vocab_size: reader.required_usize("vocab_size")?,
            max_positions: reader.required_usize("max_positions")?,
            head: HeadSpec::from_json(reader.require("head")?, &prefixed(context, "head"))?,
        };
        Ok(spec)
    }

    pub fn from_json_str(text: &str) -> Result<ModelSpec, JsonError> {
        let value = crate::json::parse_document(text)?;
        ModelSpec::from_json(&value, "")
    }

    /// Name of the first spec field on which the two differ, if any.
    pub fn first_mismatch(&self, other: &ModelSpec) -> Option<&'static str> {
        if self.kind != other.kind {
            return Some("kind");
        }
        if self.num_layers != other.num_layers {
            return Some("num_layers");
        }
        if self.hidden_size != other.hidden_size {
            return Some("hidden_size");
        }
        if self.feed_forward_size != other.feed_forward_size {
            return Some("feed_forward_size");
        }
        if self.num_heads != other.num_heads {
            return Some("num_heads");
        }
        if self.vocab_size != other.vocab_size {
            return Some("vocab_size");
        }
        if self.max_positions != other.max_positions {
            return Some("max_positions");
        }
        if self.head != other.head {
            return Some("head");
        }
        None
    }
}

fn prefixed(context: &str, key: &str) -> String {
    if context.is_empty() {
        key.to_string()
    } else {
        format!("{context}.{key}")
    }
}
