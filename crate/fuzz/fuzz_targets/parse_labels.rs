#![no_main]

use libfuzzer_sys::fuzz_target;
use radscan::io::{parse_labels, write_labels};

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = parse_labels(data) {
        let mut buf = Vec::new();
        write_labels(&labels, &mut buf).unwrap();
        assert_eq!(parse_labels(&buf).unwrap(), labels);
    }
});
