//! Teacher and student architectures: transformer encoders and a single-layer
//! bidirectional GRU, with task heads, parameter counting, and a binary weight
//! file format.

mod forward;
mod io;
mod spec;

pub use forward::ForwardOutput;
pub use io::{
    decode_weights, encode_weights, load_weights, model_from_stored, save_weights, StoredWeights,
    MAGIC, VERSION,
};
pub use spec::{HeadSpec, ModelKind, ModelSpec, ParamCount};

use std::collections::BTreeMap;
use std::fmt;

use crate::json::JsonError;
use crate::rng::Rng;
use crate::tensor::{Init, Tensor, TensorError};

/// Errors from model construction, forward passes, and weight files.
#[derive(Debug)]
pub enum ModelError {
    /// Invalid spec or head configuration; the message lists the violated
    /// constraint.
    Config(String),
    /// Bad runtime input (out-of-vocab id, ragged batch, bad mask).
    Input(String),
    /// Weight file violation; `field` names what mismatched.
    Format { field: String, message: String },
    Io(std::io::Error),
    Tensor(TensorError),
    Json(JsonError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Config(msg) => write!(f, "model configuration error: {msg}"),
            ModelError::Input(msg) => write!(f, "model input error: {msg}"),
            ModelError::Format { field, message } => {
                write!(f, "weight format error ({field}): {message}")
            }
            ModelError::Io(e) => write!(f, "io error: {e}"),
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::Json(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e)
    }
}

impl From<JsonError> for ModelError {
    fn from(e: JsonError) -> Self {
        ModelError::Json(e)
    }
}

/// A named parameter tensor.
#[derive(Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// An instantiated model: spec, named parameters in canonical order, and one
/// or more task heads (index 0 is the spec's own head; extra heads serve
/// multi-task students).
pub struct Model {
    spec: ModelSpec,
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
    heads: Vec<HeadSpec>,
    trainable: bool,
}

/// Incrementally builds the canonical parameter list.
struct ParamBuilder {
    params: Vec<Parameter>,
    seed: u64,
    counter: u64,
}

impl ParamBuilder {
    fn new(seed: u64) -> Self {
        ParamBuilder { params: Vec::new(), seed, counter: 0 }
    }

    fn push(&mut self, name: String, tensor: Tensor) {
        self.params.push(Parameter { name, tensor: tensor.requiring_grad() });
    }

    /// Weight init: normal with std 0.02 from a per-parameter derived stream.
    fn weight(&mut self, name: &str, shape: &[usize]) {
        self.counter += 1;
        let seed = Rng::derive(self.seed, self.counter);
        let t = Tensor::create(shape, Init::Normal { mean: 0.0, std: 0.02, seed })
            .expect("valid parameter shape");
        self.push(name.to_string(), t);
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) {
        let t = Tensor::create(shape, Init::Zeros).expect("valid parameter shape");
        self.push(name.to_string(), t);
    }

    fn ones(&mut self, name: &str, shape: &[usize]) {
        let t = Tensor::create(shape, Init::Constant(1.0)).expect("valid parameter shape");
        self.push(name.to_string(), t);
    }
}

/// Instantiate a model from a spec with deterministic initialization:
/// weights and embeddings are normal with std 0.02, biases zero, layer-norm
/// gains one. The same spec and seed always produce identical parameters.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model, ModelError> {
    spec.validate(true)?;
    let mut b = ParamBuilder::new(seed);
    let d = spec.hidden_size;
    match spec.kind {
        ModelKind::TransformerEncoder => {
            b.weight("embeddings.token", &[spec.vocab_size, d]);
            b.weight("embeddings.position", &[spec.max_positions, d]);
            b.weight("embeddings.segment", &[2, d]);
            b.ones("embeddings.norm.gain", &[d]);
            b.zeros("embeddings.norm.bias", &[d]);
            let ff = spec.feed_forward_size.expect("validated");
            for layer in 0..spec.num_layers {
                let p = |s: &str| format!("layers.{layer}.{s}");
                for proj in ["query", "key", "value", "output"] {
                    b.weight(&p(&format!("attention.{proj}.weight")), &[d, d]);
                    b.zeros(&p(&format!("attention.{proj}.bias")), &[d]);
                }
                b.ones(&p("attention.norm.gain"), &[d]);
                b.zeros(&p("attention.norm.bias"), &[d]);
                b.weight(&p("ffn.expand.weight"), &[d, ff]);
                b.zeros(&p("ffn.expand.bias"), &[ff]);
                b.weight(&p("ffn.contract.weight"), &[ff, d]);
                b.zeros(&p("ffn.contract.bias"), &[d]);
                b.ones(&p("ffn.norm.gain"), &[d]);
                b.zeros(&p("ffn.norm.bias"), &[d]);
            }
        }
        ModelKind::Bigru => {
            b.weight("embeddings.token", &[spec.vocab_size, d]);
            for dir in ["forward", "backward"] {
                b.weight(&format!("gru.{dir}.input.weight"), &[d, 3 * d]);
                b.weight(&format!("gru.{dir}.recurrent.weight"), &[d, 3 * d]);
                b.zeros(&format!("gru.{dir}.bias"), &[3 * d]);
            }
        }
    }
    append_head_params(&mut b, spec, 0, &spec.head);
    let mut model = Model {
        spec: spec.clone(),
        params: b.params,
        index: BTreeMap::new(),
        heads: vec![spec.head.clone()],
        trainable: true,
    };
    model.rebuild_index();
    Ok(model)
}

/// Width of the encoder output feeding the heads.
fn encoder_output_size(spec: &ModelSpec) -> usize {
    match spec.kind {
        ModelKind::TransformerEncoder => spec.hidden_size,
        // Forward and backward direction outputs are concatenated.
        ModelKind::Bigru => 2 * spec.hidden_size,
    }
}

fn append_head_params(b: &mut ParamBuilder, spec: &ModelSpec, slot: usize, head: &HeadSpec) {
    let in_dim = encoder_output_size(spec);
    let out_dim = head.output_size();
    b.weight(&format!("heads.{slot}.weight"), &[in_dim, out_dim]);
    b.zeros(&format!("heads.{slot}.bias"), &[out_dim]);
}

impl Model {
    fn rebuild_index(&mut self) {
        self.index =
            self.params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        debug_assert_eq!(self.index.len(), self.params.len(), "parameter names must be unique");
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn heads(&self) -> &[HeadSpec] {
        &self.heads
    }

    /// Attach another task head; returns its slot index. Used by multi-task
    /// students sharing one encoder.
    pub fn add_head(&mut self, head: HeadSpec, seed: u64) -> Result<usize, ModelError> {
        if let HeadSpec::Classification { num_labels } | HeadSpec::Tagging { num_labels } = &head {
            if *num_labels < 2 {
                return Err(ModelError::Config("head num_labels must be >= 2".into()));
            }
        }
        let slot = self.heads.len();
        let mut b = ParamBuilder::new(seed);
        append_head_params(&mut b, &self.spec, slot, &head);
        for p in b.params {
            if !self.trainable {
                p.tensor.set_requires_grad(false);
            }
            self.params.push(p);
        }
        self.heads.push(head);
        self.rebuild_index();
        Ok(slot)
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].tensor)
    }

    /// Tensors that currently require gradients, in canonical order.
    pub fn trainable_tensors(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .filter(|p| p.tensor.requires_grad())
            .map(|p| p.tensor.clone())
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Parameter count excluding task heads; matches
    /// [`ModelSpec::count_parameters`] exactly.
    pub fn num_encoder_parameters(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.name.starts_with("heads."))
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Freeze all parameters (teacher mode): no gradients are recorded
    /// through this model's forward passes.
    pub fn freeze(&mut self) {
        for p in &self.params {
            p.tensor.set_requires_grad(false);
        }
        self.trainable = false;
    }

    pub fn unfreeze(&mut self) {
        for p in &self.params {
            p.tensor.set_requires_grad(true);
        }
        self.trainable = true;
    }

    /// Freeze or unfreeze one named parameter (e.g. keep word embeddings
    /// fixed during distillation).
    pub fn set_parameter_trainable(&mut self, name: &str, trainable: bool) -> Result<(), ModelError> {
        let tensor = self
            .parameter(name)
            .ok_or_else(|| ModelError::Config(format!("no parameter named \"{name}\"")))?;
        tensor.set_requires_grad(trainable && self.trainable);
        Ok(())
    }

    pub fn clear_grads(&self) {
        for p in &self.params {
            p.tensor.clear_grad();
        }
    }

    /// FNV-1a fingerprint over all parameter bytes in canonical order; used
    /// to assert teacher immutability.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        for p in &self.params {
            for v in p.tensor.data().iter() {
                for byte in v.to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x100000001b3);
                }
            }
        }
        hash
    }
}
