#![no_main]

use libfuzzer_sys::fuzz_target;

// Arbitrary text must parse to a config or a clean error, never a panic.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = distilkit::config::parse_training_config(text);
    }
});
