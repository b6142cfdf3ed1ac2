//! Deterministic synthetic tasks: classification, sequence tagging, and span
//! extraction, with evaluation metrics and data augmentation.
//!
//! Every generator is a pure function of its parameters, seed, and split;
//! train/dev/aux splits draw from disjoint id spaces and independent random
//! streams. Labels follow planted rules, so a rule-based oracle scores 100%
//! at zero noise and generated datasets have a known Bayes accuracy.
//!
//! Token layout (shared by all tasks): token 0 pads masked positions and
//! token 1 starts every sequence. Classification plants class-indicator
//! tokens `2..2+num_classes`. Tagging reserves token 2 as the "promoter"
//! whose successor's tag is cyclically shifted (the context rule); other
//! tokens map to tags by pool. Span extraction brackets the answer with
//! tokens 2 and 3.

mod metrics;
mod textio;

pub use metrics::{
    evaluate, evaluate_with_head, metrics_from_predictions, predict_with_head, Prediction,
    TaskMetrics,
};
pub use textio::{parse_dataset_text, write_dataset_text};

use std::fmt;

use crate::models::ModelError;
use crate::rng::Rng;

pub const PAD_TOKEN: usize = 0;
pub const START_TOKEN: usize = 1;
/// Tagging context-rule trigger.
pub const PROMOTER_TOKEN: usize = 2;
/// Fraction of tagging positions that emit the promoter.
pub const PROMOTER_RATE: f64 = 0.08;
/// Span markers.
pub const SPAN_OPEN_TOKEN: usize = 2;
pub const SPAN_CLOSE_TOKEN: usize = 3;

/// Errors from dataset generation, parsing, and evaluation.
#[derive(Debug)]
pub enum TaskError {
    Config(String),
    Input(String),
    Parse { line: usize, message: String },
    Model(ModelError),
}

impl fmt::Display for TaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskError::Config(msg) => write!(f, "task configuration error: {msg}"),
            TaskError::Input(msg) => write!(f, "task input error: {msg}"),
            TaskError::Parse { line, message } => {
                write!(f, "dataset parse error at line {line}: {message}")
            }
            TaskError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TaskError {}

impl From<ModelError> for TaskError {
    fn from(e: ModelError) -> Self {
        TaskError::Model(e)
    }
}

/// The three task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Tagging,
    Span,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Tagging => "tagging",
            TaskKind::Span => "span",
        }
    }
}

/// Gold target of one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    /// One tag per position (masked positions carry the background tag).
    Tags(Vec<usize>),
    /// Inclusive start/end token indices.
    Span(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    pub token_ids: Vec<usize>,
    pub inputs_mask: Vec<u8>,
    pub target: Option<Target>,
}

impl Example {
    pub fn content_len(&self) -> usize {
        self.inputs_mask.iter().map(|&m| m as usize).sum()
    }
}

/// An immutable generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task_kind: TaskKind,
    pub vocab_size: usize,
    /// Padded length of every example.
    pub length: usize,
    /// Label-space size: classes for classification, tags for tagging,
    /// 0 for span extraction.
    pub label_space: usize,
    pub generator_seed: u64,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Copy with every gold target removed (distillation-only data).
    pub fn without_labels(&self) -> Dataset {
        let mut out = self.clone();
        for ex in &mut out.examples {
            ex.target = None;
        }
        out
    }
}

/// Dataset split; each split has its own id space and random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Aux,
}

impl Split {
    fn code(&self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Aux => 2,
        }
    }

    fn stream(&self, seed: u64, index: u64) -> Rng {
        Rng::new(Rng::derive(Rng::derive(seed, 0x5eed_0000 + self.code()), index))
    }

    fn id(&self, index: usize) -> u64 {
        (self.code() << 32) | index as u64
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationParams {
    pub seed: u64,
    pub n: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub length: usize,
    pub noise_rate: f64,
}

fn filler_between(rng: &mut Rng, lo: usize, vocab: usize) -> usize {
    lo + rng.below(vocab - lo)
}

fn content_length(rng: &mut Rng, length: usize) -> usize {
    let lo = (length / 2).max(4);
    lo + rng.below(length - lo + 1)
}

/// Classification with planted class-indicator tokens and label-flip noise;
/// Bayes-optimal accuracy is about `1 - noise_rate`.
pub fn generate_classification(
    params: &ClassificationParams,
    split: Split,
) -> Result<Dataset, TaskError> {
    let p = params;
    if p.num_classes < 2 {
        return Err(TaskError::Config("num_classes must be >= 2".into()));
    }
    if !(0.0..0.5).contains(&p.noise_rate) {
        return Err(TaskError::Config(format!(
            "noise_rate must lie in [0, 0.5), got {}",
            p.noise_rate
        )));
    }
    if p.length < 6 {
        return Err(TaskError::Config("length must be >= 6".into()));
    }
    let filler_lo = 2 + p.num_classes;
    if p.vocab_size < filler_lo + 2 {
        return Err(TaskError::Config(format!(
            "vocab_size must be >= {} for {} classes",
            filler_lo + 2,
            p.num_classes
        )));
    }
    if p.n == 0 {
        return Err(TaskError::Config("n must be >= 1".into()));
    }

    let mut examples = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let mut rng = split.stream(p.seed, i as u64);
        let len = content_length(&mut rng, p.length);
        let true_class = rng.below(p.num_classes);
        let mut tokens = vec![PAD_TOKEN; p.length];
        let mut mask = vec![0u8; p.length];
        tokens[0] = START_TOKEN;
        mask[0] = 1;
        for pos in 1..len {
            tokens[pos] = filler_between(&mut rng, filler_lo, p.vocab_size);
            mask[pos] = 1;
        }
        // Plant 1..=3 indicator tokens of the true class at content positions.
        let indicators = 1 + rng.below(3);
        for _ in 0..indicators {
            let pos = 1 + rng.below(len - 1);
            tokens[pos] = 2 + true_class;
        }
        let label = if p.noise_rate > 0.0 && rng.next_f64() < p.noise_rate {
            // Flip to a uniformly random other class.
            let shift = 1 + rng.below(p.num_classes - 1);
            (true_class + shift) % p.num_classes
        } else {
            true_class
        };
        examples.push(Example {
            id: split.id(i),
            token_ids: tokens,
            inputs_mask: mask,
            target: Some(Target::Class(label)),
        });
    }
    Ok(Dataset {
        task_kind: TaskKind::Classification,
        vocab_size: p.vocab_size,
        length: p.length,
        label_space: p.num_classes,
        generator_seed: p.seed,
        examples,
    })
}

/// Rule-based classifier achieving Bayes accuracy: the class with the most
/// planted indicator tokens.
pub fn oracle_classification(example: &Example, num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for (&t, &m) in example.token_ids.iter().zip(&example.inputs_mask) {
        if m == 1 && (2..2 + num_classes).contains(&t) {
            counts[t - 2] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .max_by_key(|(i, &c)| (c, usize::MAX - i))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct TaggingParams {
    pub seed: u64,
    pub n: usize,
    pub num_tags: usize,
    pub vocab_size: usize,
    pub length: usize,
}

/// Pool tag of a token under the planted token-to-tag mapping (before the
/// promoter context rule). The promoter itself belongs to the background.
pub fn tag_pool_of(token: usize, num_tags: usize) -> usize {
    if token == PROMOTER_TOKEN {
        0
    } else {
        (token - 3) % num_tags
    }
}

/// Sequence tagging: tokens map to tags by pool, except that the token after
/// a promoter has its tag cyclically shifted by one (the context rule).
pub fn generate_tagging(params: &TaggingParams, split: Split) -> Result<Dataset, TaskError> {
    let p = params;
    if p.num_tags < 2 {
        return Err(TaskError::Config("num_tags must be >= 2".into()));
    }
    if p.length < 6 {
        return Err(TaskError::Config("length must be >= 6".into()));
    }
    if p.vocab_size < 3 + 2 * p.num_tags {
        return Err(TaskError::Config(format!(
            "vocab_size must be >= {} for {} tags",
            3 + 2 * p.num_tags,
            p.num_tags
        )));
    }
    if p.n == 0 {
        return Err(TaskError::Config("n must be >= 1".into()));
    }
    let marginals = tagging_tag_marginals(p.num_tags);
    let pool_size = (p.vocab_size - 3) / p.num_tags;

    let mut examples = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let mut rng = split.stream(p.seed, i as u64);
        let len = content_length(&mut rng, p.length);
        let mut tokens = vec![PAD_TOKEN; p.length];
        let mut mask = vec![0u8; p.length];
        tokens[0] = START_TOKEN;
        mask[0] = 1;
        for pos in 1..len {
            mask[pos] = 1;
            if rng.next_f64() < PROMOTER_RATE {
                tokens[pos] = PROMOTER_TOKEN;
                continue;
            }
            // Sample a pool tag from the marginals, then a token of that pool.
            let u = rng.next_f64();
            let mut tag = 0;
            let mut acc = 0.0;
            for (t, &m) in marginals.iter().enumerate() {
                acc += m;
                if u < acc {
                    tag = t;
                    break;
                }
            }
            let slot = rng.below(pool_size.max(1));
            tokens[pos] = 3 + slot * p.num_tags + tag;
            debug_assert_eq!(tag_pool_of(tokens[pos], p.num_tags), tag);
        }
        let tags = oracle_tags_for(&tokens, &mask, p.num_tags);
        examples.push(Example {
            id: split.id(i),
            token_ids: tokens,
            inputs_mask: mask,
            target: Some(Target::Tags(tags)),
        });
    }
    Ok(Dataset {
        task_kind: TaskKind::Tagging,
        vocab_size: p.vocab_size,
        length: p.length,
        label_space: p.num_tags,
        generator_seed: p.seed,
        examples,
    })
}

/// The pool-tag marginals the tagging generator samples from: background 0.7,
/// the rest split evenly.
pub fn tagging_tag_marginals(num_tags: usize) -> Vec<f64> {
    let mut m = vec![0.3 / (num_tags - 1) as f64; num_tags];
    m[0] = 0.7;
    m
}

/// Analytic distribution of final tags at content positions >= 2 (where the
/// predecessor may be a promoter); the generator's specified marginals.
pub fn tagging_specified_marginals(num_tags: usize) -> Vec<f64> {
    let m = tagging_tag_marginals(num_tags);
    let r = PROMOTER_RATE;
    (0..num_tags)
        .map(|s| {
            let mut p = if s == 0 { r } else { 0.0 };
            let prev = (s + num_tags - 1) % num_tags;
            p += (1.0 - r) * ((1.0 - r) * m[s] + r * m[prev]);
            p
        })
        .collect()
}

/// The planted tagging rule: promoter and start are background; a token
/// following a promoter has its pool tag shifted by one.
pub fn oracle_tags_for(tokens: &[usize], mask: &[u8], num_tags: usize) -> Vec<usize> {
    let mut tags = vec![0usize; tokens.len()];
    for pos in 0..tokens.len() {
        if mask[pos] == 0 {
            continue;
        }
        let t = tokens[pos];
        if t == START_TOKEN || t == PROMOTER_TOKEN {
            tags[pos] = 0;
            continue;
        }
        let base = tag_pool_of(t, num_tags);
        tags[pos] = if pos > 0 && tokens[pos - 1] == PROMOTER_TOKEN {
            (base + 1) % num_tags
        } else {
            base
        };
    }
    tags
}

#[derive(Debug, Clone)]
pub struct SpanParams {
    pub seed: u64,
    pub n: usize,
    pub vocab_size: usize,
    pub length: usize,
}

/// Span extraction: the answer span is bracketed by planted open/close
/// marker tokens.
pub fn generate_span(params: &SpanParams, split: Split) -> Result<Dataset, TaskError> {
    let p = params;
    if p.length < 8 {
        return Err(TaskError::Config("length must be >= 8".into()));
    }
    if p.vocab_size < 8 {
        return Err(TaskError::Config("vocab_size must be >= 8".into()));
    }
    if p.n == 0 {
        return Err(TaskError::Config("n must be >= 1".into()));
    }
    let mut examples = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let mut rng = split.stream(p.seed, i as u64);
        let len = (p.length / 2).max(8) + rng.below(p.length - (p.length / 2).max(8) + 1);
        let mut tokens = vec![PAD_TOKEN; p.length];
        let mut mask = vec![0u8; p.length];
        tokens[0] = START_TOKEN;
        mask[0] = 1;
        for pos in 1..len {
            tokens[pos] = 4 + rng.below(p.vocab_size - 4);
            mask[pos] = 1;
        }
        // Open marker at start-1 and close marker at end+1 bracket the span.
        let span_len = 1 + rng.below(3.min(len - 5));
        let start = 2 + rng.below(len - span_len - 3);
        let end = start + span_len - 1;
        tokens[start - 1] = SPAN_OPEN_TOKEN;
        tokens[end + 1] = SPAN_CLOSE_TOKEN;
        debug_assert!(end + 1 < len);
        examples.push(Example {
            id: split.id(i),
            token_ids: tokens,
            inputs_mask: mask,
            target: Some(Target::Span(start, end)),
        });
    }
    Ok(Dataset {
        task_kind: TaskKind::Span,
        vocab_size: p.vocab_size,
        length: p.length,
        label_space: 0,
        generator_seed: p.seed,
        examples,
    })
}

/// The planted span rule: the tokens strictly between the markers.
pub fn oracle_span(example: &Example) -> (usize, usize) {
    let mut start = 0;
    let mut end = 0;
    for (pos, (&t, &m)) in example.token_ids.iter().zip(&example.inputs_mask).enumerate() {
        if m == 0 {
            continue;
        }
        if t == SPAN_OPEN_TOKEN {
            start = pos + 1;
        } else if t == SPAN_CLOSE_TOKEN {
            end = pos - 1;
        }
    }
    (start, end)
}

/// Append `floor(mix_ratio * |main|)` auxiliary examples to `main`,
/// subsampled deterministically from the auxiliary set (cycling when the
/// auxiliary set is smaller than the request). Auxiliary examples keep
/// whatever labels they carry; strip them first for KD-only augmentation.
pub fn augment_dataset(
    main: &Dataset,
    auxiliary: &Dataset,
    mix_ratio: f64,
) -> Result<Dataset, TaskError> {
    if mix_ratio < 0.0 || !mix_ratio.is_finite() {
        return Err(TaskError::Config("mix_ratio must be >= 0".into()));
    }
    if main.task_kind != auxiliary.task_kind {
        return Err(TaskError::Config(format!(
            "task kinds differ: {} vs {}",
            main.task_kind.name(),
            auxiliary.task_kind.name()
        )));
    }
    if main.vocab_size != auxiliary.vocab_size {
        return Err(TaskError::Config(format!(
            "vocab sizes differ: {} vs {}",
            main.vocab_size, auxiliary.vocab_size
        )));
    }
    if main.length != auxiliary.length {
        return Err(TaskError::Config(format!(
            "padded lengths differ: {} vs {}",
            main.length, auxiliary.length
        )));
    }
    let take = (mix_ratio * main.len() as f64).floor() as usize;
    let mut out = main.clone();
    if take == 0 {
        return Ok(out);
    }
    if auxiliary.is_empty() {
        return Err(TaskError::Config("auxiliary dataset is empty".into()));
    }
    let mut order: Vec<usize> = (0..auxiliary.len()).collect();
    let mut rng = Rng::new(Rng::derive(auxiliary.generator_seed, 0x0a96));
    rng.shuffle(&mut order);
    for k in 0..take {
        out.examples.push(auxiliary.examples[order[k % order.len()]].clone());
    }
    Ok(out)
}
