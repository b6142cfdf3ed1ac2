#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(dataset) = distilkit::tasks::parse_dataset_text(text) {
            // Parsed datasets must survive re-serialization.
            let _ = distilkit::tasks::write_dataset_text(&dataset);
        }
    }
});
