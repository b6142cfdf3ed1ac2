//! Line-oriented UTF-8 dataset format for inspection.
//!
//! ```text
//! #distilkit-dataset v1
//! #task classification
//! #vocab 64
//! #length 16
//! #labels 4
//! #seed 7
//! 0<TAB>1 9 34 2<TAB>3
//! 1<TAB>1 41 8<TAB>-
//! ```
//!
//! Each data line is `id<TAB>tokens<TAB>label-or-tags-or-span`: tokens are
//! the unmasked content (padding is reconstructed on parse), the last field
//! is a class index, space-separated per-token tags, `start,end`, or `-` for
//! an unlabeled example.

use super::{Dataset, Example, TaskError, TaskKind, Target, PAD_TOKEN};

pub fn write_dataset_text(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str("#distilkit-dataset v1\n");
    out.push_str(&format!("#task {}\n", dataset.task_kind.name()));
    out.push_str(&format!("#vocab {}\n", dataset.vocab_size));
    out.push_str(&format!("#length {}\n", dataset.length));
    out.push_str(&format!("#labels {}\n", dataset.label_space));
    out.push_str(&format!("#seed {}\n", dataset.generator_seed));
    for ex in &dataset.examples {
        let content: Vec<String> = ex
            .token_ids
            .iter()
            .zip(&ex.inputs_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&t, _)| t.to_string())
            .collect();
        let label = match &ex.target {
            None => "-".to_string(),
            Some(Target::Class(c)) => c.to_string(),
            Some(Target::Tags(tags)) => {
                let content_tags: Vec<String> = tags
                    .iter()
                    .zip(&ex.inputs_mask)
                    .filter(|(_, &m)| m == 1)
                    .map(|(&t, _)| t.to_string())
                    .collect();
                content_tags.join(" ")
            }
            Some(Target::Span(s, e)) => format!("{s},{e}"),
        };
        out.push_str(&format!("{}\t{}\t{}\n", ex.id, content.join(" "), label));
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> TaskError {
    TaskError::Parse { line, message: message.into() }
}

/// Parse the text format back into a dataset. Strict: every violation is an
/// error naming the line, and no input may panic.
pub fn parse_dataset_text(text: &str) -> Result<Dataset, TaskError> {
    let mut lines = text.lines().enumerate();

    let mut expect_header = |prefix: &str| -> Result<(usize, String), TaskError> {
        match lines.next() {
            Some((i, line)) => {
                let rest = line.strip_prefix(prefix).ok_or_else(|| {
                    parse_err(i + 1, format!("expected \"{prefix}...\", got \"{line}\""))
                })?;
                Ok((i, rest.trim().to_string()))
            }
            None => Err(parse_err(0, format!("missing header line \"{prefix}\""))),
        }
    };

    let (_, version) = expect_header("#distilkit-dataset")?;
    if version != "v1" {
        return Err(parse_err(1, format!("unsupported version \"{version}\"")));
    }
    let (i, task) = expect_header("#task ")?;
    let task_kind = match task.as_str() {
        "classification" => TaskKind::Classification,
        "tagging" => TaskKind::Tagging,
        "span" => TaskKind::Span,
        other => return Err(parse_err(i + 1, format!("unknown task \"{other}\""))),
    };
    let uint_header = |prefix: &str,
                       lines: &mut dyn Iterator<Item = (usize, &str)>|
     -> Result<usize, TaskError> {
        match lines.next() {
            Some((i, line)) => {
                let rest = line.strip_prefix(prefix).ok_or_else(|| {
                    parse_err(i + 1, format!("expected \"{prefix}...\", got \"{line}\""))
                })?;
                rest.trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(i + 1, format!("\"{}\" is not an integer", rest.trim())))
            }
            None => Err(parse_err(0, format!("missing header line \"{prefix}\""))),
        }
    };
    let vocab_size = uint_header("#vocab ", &mut lines)?;
    let length = uint_header("#length ", &mut lines)?;
    let label_space = uint_header("#labels ", &mut lines)?;
    let seed = uint_header("#seed ", &mut lines)? as u64;
    if vocab_size < 2 || length < 1 {
        return Err(parse_err(3, "vocab must be >= 2 and length >= 1"));
    }
    // Padding allocations are bounded by the declared length and by the
    // total token budget across all lines.
    const MAX_LENGTH: usize = 1 << 16;
    const MAX_TOTAL_TOKENS: usize = 1 << 22;
    if length > MAX_LENGTH {
        return Err(parse_err(4, format!("length {length} exceeds the maximum {MAX_LENGTH}")));
    }
    let mut total_tokens = 0usize;

    let mut examples = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        total_tokens += length;
        if total_tokens > MAX_TOTAL_TOKENS {
            return Err(parse_err(lineno, format!("dataset exceeds {MAX_TOTAL_TOKENS} tokens")));
        }
        let mut fields = line.split('\t');
        let (Some(id_s), Some(tokens_s), Some(label_s), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(parse_err(lineno, "expected id<TAB>tokens<TAB>label"));
        };
        let id: u64 =
            id_s.parse().map_err(|_| parse_err(lineno, format!("bad id \"{id_s}\"")))?;
        let mut token_ids = Vec::new();
        for t in tokens_s.split_whitespace() {
            let tok: usize =
                t.parse().map_err(|_| parse_err(lineno, format!("bad token \"{t}\"")))?;
            if tok >= vocab_size {
                return Err(parse_err(lineno, format!("token {tok} outside vocab {vocab_size}")));
            }
            token_ids.push(tok);
        }
        if token_ids.is_empty() || token_ids.len() > length {
            return Err(parse_err(
                lineno,
                format!("content length {} outside [1, {length}]", token_ids.len()),
            ));
        }
        let content = token_ids.len();
        let target = match (label_s, task_kind) {
            ("-", _) => None,
            (s, TaskKind::Classification) => {
                let c: usize =
                    s.parse().map_err(|_| parse_err(lineno, format!("bad label \"{s}\"")))?;
                if c >= label_space {
                    return Err(parse_err(lineno, format!("label {c} outside {label_space} classes")));
                }
                Some(Target::Class(c))
            }
            (s, TaskKind::Tagging) => {
                let mut tags = Vec::new();
                for t in s.split_whitespace() {
                    let tag: usize =
                        t.parse().map_err(|_| parse_err(lineno, format!("bad tag \"{t}\"")))?;
                    if tag >= label_space {
                        return Err(parse_err(lineno, format!("tag {tag} outside {label_space} tags")));
                    }
                    tags.push(tag);
                }
                if tags.len() != content {
                    return Err(parse_err(
                        lineno,
                        format!("{} tags for {content} tokens", tags.len()),
                    ));
                }
                tags.resize(length, 0);
                Some(Target::Tags(tags))
            }
            (s, TaskKind::Span) => {
                let (a, b) = s
                    .split_once(',')
                    .ok_or_else(|| parse_err(lineno, format!("bad span \"{s}\"")))?;
                let start: usize =
                    a.parse().map_err(|_| parse_err(lineno, format!("bad span start \"{a}\"")))?;
                let end: usize =
                    b.parse().map_err(|_| parse_err(lineno, format!("bad span end \"{b}\"")))?;
                if start > end || end >= content {
                    return Err(parse_err(
                        lineno,
                        format!("span [{start}, {end}] outside content of {content}"),
                    ));
                }
                Some(Target::Span(start, end))
            }
        };
        let mut inputs_mask = vec![1u8; content];
        inputs_mask.resize(length, 0);
        token_ids.resize(length, PAD_TOKEN);
        examples.push(Example { id, token_ids, inputs_mask, target });
    }
    Ok(Dataset { task_kind, vocab_size, length, label_space, generator_seed: seed, examples })
}
