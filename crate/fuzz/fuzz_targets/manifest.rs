#![no_main]

use libfuzzer_sys::fuzz_target;

// Manifest parsing touches no files; resolution (which does) is not fuzzed.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = distilkit_cli::manifest::ExperimentManifest::from_json_str(text);
    }
});
