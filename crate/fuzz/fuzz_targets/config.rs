#![no_main]

use libfuzzer_sys::fuzz_target;
use maple_core::harness::{parse_dataset_config, ModelFile, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse(text) {
        if cfg.validate().is_ok() {
            // derived configs and the hash must not panic on anything that validates
            let _ = cfg.dataset_config();
            let _ = cfg.inner_config();
            let _ = cfg.outer_config();
            let _ = cfg.hash();
        }
    }
    let _ = parse_dataset_config(text).map(|d| d.validate());
    let _ = ModelFile::parse(text);
});
