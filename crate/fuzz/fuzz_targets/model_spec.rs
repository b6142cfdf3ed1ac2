#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = distilkit::models::ModelSpec::from_json_str(text) {
            // Analysis entry points on a parsed spec must not panic either.
            let _ = spec.validate(true);
            let _ = spec.count_parameters();
        }
    }
});
