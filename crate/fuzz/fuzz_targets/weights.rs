#![no_main]

use libfuzzer_sys::fuzz_target;
use maple_core::outer::{parse_weight_records, write_weight_records};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((header, records)) = parse_weight_records(text) {
        let mut buf = Vec::new();
        write_weight_records(&mut buf, &header, &records).expect("writing parsed records");
        let (h2, r2) = parse_weight_records(std::str::from_utf8(&buf).unwrap()).expect("reparse");
        assert_eq!(h2, header);
        assert_eq!(r2, records);
    }
});
