#![no_main]

use libfuzzer_sys::fuzz_target;
use maple_core::data::{parse_dataset_csv, write_dataset_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(parsed) = parse_dataset_csv(text) {
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &parsed).expect("writing a parsed dataset");
        let again = parse_dataset_csv(std::str::from_utf8(&buf).unwrap()).expect("reparse");
        assert_eq!(again, parsed);
    }
});
