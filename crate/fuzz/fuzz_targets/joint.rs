#![no_main]

use libfuzzer_sys::fuzz_target;
use maple_core::oracle::{parse_joint, write_joint};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(joint) = parse_joint(text) {
        let written = write_joint(&joint);
        assert_eq!(parse_joint(&written).expect("reparse"), joint);
    }
});
