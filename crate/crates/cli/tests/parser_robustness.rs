//! Drives every fuzzable parser over the checked-in corpus seeds and
//! thousands of seeded byte-level mutations of them. The cargo-fuzz targets
//! under fuzz/ run the same entry points; this test keeps their contract
//! (parse or clean error, never panic) covered by `cargo test`.

use std::path::{Path, PathBuf};

use distilkit::losses::Presets;
use distilkit::rng::Rng;

fn corpus_dir(target: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target)
}

fn corpus_files(target: &str) -> Vec<Vec<u8>> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(corpus_dir(target))
        .unwrap_or_else(|e| panic!("corpus for {target}: {e}"))
        .map(|entry| {
            let entry = entry.unwrap();
            (entry.file_name().to_string_lossy().into_owned(), std::fs::read(entry.path()).unwrap())
        })
        .collect();
    assert!(!files.is_empty(), "no corpus seeds for {target}");
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files.into_iter().map(|(_, bytes)| bytes).collect()
}

/// Random byte mutations: flips, truncations, splices, and insertions.
fn mutations(seed_bytes: &[u8], rng: &mut Rng, count: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut m = seed_bytes.to_vec();
        match rng.below(4) {
            0 => {
                for _ in 0..1 + rng.below(8) {
                    if m.is_empty() {
                        break;
                    }
                    let i = rng.below(m.len());
                    m[i] = (rng.next_u64() & 0xff) as u8;
                }
            }
            1 => {
                let cut = rng.below(m.len() + 1);
                m.truncate(cut);
            }
            2 => {
                let i = rng.below(m.len() + 1);
                for _ in 0..1 + rng.below(6) {
                    m.insert(i, (rng.next_u64() & 0xff) as u8);
                }
            }
            _ => {
                if m.len() > 2 {
                    let a = rng.below(m.len());
                    let b = rng.below(m.len());
                    let (lo, hi) = (a.min(b), a.max(b));
                    m.drain(lo..hi);
                }
            }
        }
        out.push(m);
    }
    out
}

fn drive(target: &str, run: impl Fn(&[u8])) {
    let mut rng = Rng::new(0xf022);
    for seed_bytes in corpus_files(target) {
        run(&seed_bytes);
        for mutated in mutations(&seed_bytes, &mut rng, 400) {
            run(&mutated);
        }
    }
}

#[test]
fn corpus_seeds_are_valid_inputs() {
    for bytes in corpus_files("training_config") {
        distilkit::config::parse_training_config(std::str::from_utf8(&bytes).unwrap()).unwrap();
    }
    let presets = Presets::default();
    for bytes in corpus_files("distillation_config") {
        distilkit::config::parse_distillation_config(std::str::from_utf8(&bytes).unwrap(), &presets)
            .unwrap();
    }
    for bytes in corpus_files("model_spec") {
        let spec =
            distilkit::models::ModelSpec::from_json_str(std::str::from_utf8(&bytes).unwrap())
                .unwrap();
        spec.count_parameters().unwrap();
    }
    for bytes in corpus_files("weight_file") {
        let stored = distilkit::models::decode_weights(&bytes).unwrap();
        distilkit::models::model_from_stored(stored).unwrap();
    }
    for bytes in corpus_files("dataset_text") {
        distilkit::tasks::parse_dataset_text(std::str::from_utf8(&bytes).unwrap()).unwrap();
    }
    for bytes in corpus_files("manifest") {
        distilkit_cli::manifest::ExperimentManifest::from_json_str(
            std::str::from_utf8(&bytes).unwrap(),
        )
        .unwrap();
    }
}

#[test]
fn training_config_parser_never_panics() {
    drive("training_config", |data| {
        if let Ok(text) = std::str::from_utf8(data) {
            let _ = distilkit::config::parse_training_config(text);
        }
    });
}

#[test]
fn distillation_config_parser_never_panics_and_round_trips() {
    let presets = Presets::default();
    drive("distillation_config", |data| {
        if let Ok(text) = std::str::from_utf8(data) {
            if let Ok(cfg) = distilkit::config::parse_distillation_config(text, &presets) {
                let serialized = distilkit::config::serialize_distillation_config(&cfg);
                let reparsed =
                    distilkit::config::parse_distillation_config(&serialized, &presets).unwrap();
                assert_eq!(cfg, reparsed);
            }
        }
    });
}

#[test]
fn model_spec_parser_never_panics() {
    drive("model_spec", |data| {
        if let Ok(text) = std::str::from_utf8(data) {
            if let Ok(spec) = distilkit::models::ModelSpec::from_json_str(text) {
                let _ = spec.validate(true);
                let _ = spec.count_parameters();
            }
        }
    });
}

#[test]
fn weight_decoder_never_panics() {
    drive("weight_file", |data| {
        if let Ok(stored) = distilkit::models::decode_weights(data) {
            if stored.values.len() < 1 << 16 {
                let _ = distilkit::models::model_from_stored(stored);
            }
        }
    });
}

#[test]
fn dataset_parser_never_panics_and_round_trips() {
    drive("dataset_text", |data| {
        if let Ok(text) = std::str::from_utf8(data) {
            if let Ok(dataset) = distilkit::tasks::parse_dataset_text(text) {
                let _ = distilkit::tasks::write_dataset_text(&dataset);
            }
        }
    });
}

#[test]
fn manifest_parser_never_panics() {
    drive("manifest", |data| {
        if let Ok(text) = std::str::from_utf8(data) {
            let _ = distilkit_cli::manifest::ExperimentManifest::from_json_str(text);
        }
    });
}
