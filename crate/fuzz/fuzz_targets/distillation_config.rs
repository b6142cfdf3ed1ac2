#![no_main]

use libfuzzer_sys::fuzz_target;

use distilkit::losses::Presets;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let presets = Presets::default();
        if let Ok(cfg) = distilkit::config::parse_distillation_config(text, &presets) {
            // A config that parses must also round-trip.
            let serialized = distilkit::config::serialize_distillation_config(&cfg);
            let reparsed = distilkit::config::parse_distillation_config(&serialized, &presets)
                .expect("serialized configs reparse");
            assert_eq!(cfg, reparsed);
        }
    }
});
